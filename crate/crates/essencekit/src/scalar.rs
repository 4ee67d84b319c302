//! Scalar abstraction for the numeric core.

use std::fmt::{Debug, Display};

/// Floating-point scalar the core math is generic over.
///
/// `f64` is the oracle/test precision; `f32` is available for training
/// paths that declare single precision in their config.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Norm guard for cosine operations. Below this a vector is treated as
    /// zero and rejected rather than silently producing 0.
    fn norm_epsilon() -> Self {
        Self::from_f64(1e-12).unwrap()
    }

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
