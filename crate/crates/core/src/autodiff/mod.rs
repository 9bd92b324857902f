//! Minimal reverse-mode automatic differentiation with an Adam optimizer.

pub mod checkpoint;
mod graph;
pub mod gradcheck;
mod optim;
mod params;

pub use checkpoint::Checkpoint;
pub use graph::{diffusion_time, diffusion_time_inverse, Graph, SparseOperator, Var};
pub use optim::{adam_step, AdamState, LrSchedule};
pub use params::{ParamId, ParamStore, Parameter};
