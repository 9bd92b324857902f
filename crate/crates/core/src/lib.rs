//! Multi-resolution neural fields on triangle meshes.
//!
//! Per-level heat-diffusion feature extractors, each restricted to its own
//! band of Laplacian eigenpairs, feed level-scaled Fourier feature mappings
//! that are injected into a sine-activated backbone. The crate also carries
//! the mesh, spectral and autodiff machinery the model needs and an
//! experiment harness for the RGB, UV and normal-field tasks.

pub mod autodiff;
pub mod error;
pub mod harness;
pub mod mesh;
pub mod model;
pub mod spectral;

pub use error::{Error, Result};
