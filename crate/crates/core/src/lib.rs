//! Memory-based optimizers for model-agnostic meta-learning.
//!
//! The crate implements the MOML family of meta-learning optimizers (a
//! per-task personalized-model memory tracked by a moving average), the
//! plain mini-batch baseline, and a simulated federated round loop, together
//! with exact quadratic oracles used to verify them.
//!
//! Numeric code is generic over [`Real`] (`f32`/`f64`); the aliases below fix
//! the `f64` instantiation used by experiments and tests.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod fedsim;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod tasks;
pub mod vector;

pub use config::{load_config, Algorithm, BatchLaw, FedMode, RunConfig, TaskFamily};
pub use error::{Error, Result};
pub use rng::RngStream;
pub use scalar::Real;

pub type ParamVec = vector::ParamVector<f64>;
pub type ParamVecF32 = vector::ParamVector<f32>;
pub type Quadratic = models::QuadraticModel<f64>;
pub type Task64 = tasks::Task<f64>;
pub type TaskSet64 = tasks::TaskSet<f64>;
pub type Batch64 = tasks::Batch<f64>;
