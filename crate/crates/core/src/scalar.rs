//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Real scalar the models and optimizers are generic over (`f32` or `f64`).
///
/// Experiments and acceptance tolerances are stated for `f64`; `f32` is
/// supported for the numeric kernels but carries proportionally looser
/// rounding.
pub trait Real: Float + FromPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static {
    /// Converts an `f64` literal or config value into this scalar.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    /// Lossless-enough widening for metrics emission.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
