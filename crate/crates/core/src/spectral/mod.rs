//! Discrete Laplace-Beltrami machinery: cotangent stiffness and lumped mass,
//! truncated generalized eigenbases, banded heat diffusion and tangent-plane
//! gradients.

mod bands;
pub mod cache;
mod diffusion;
mod eigen;
mod gradient;
mod laplacian;

pub use bands::{split_spectrum, SpectrumBands};
pub use diffusion::diffuse;
pub use eigen::{solve_eigs, solve_eigs_with, EigenOptions, SpectralBasis};
pub use gradient::{tangent_gradients, TangentGradientOperator};
pub use laplacian::{assemble_laplacian, LaplacianPair, COT_CLAMP};
