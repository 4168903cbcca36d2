//! Differentiable model backends.

mod hvp;
mod linalg;
mod mlp;
mod quadratic;

pub use hvp::{default_hvp_eps, hvp_fd};
pub use mlp::{MlpModel, Samples};
pub use quadratic::QuadraticModel;

pub(crate) use linalg::{matmul, matvec, symmetric_eigenvalues};
pub(crate) use quadratic::solve;
