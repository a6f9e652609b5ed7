//! Floating-point abstraction used by the numeric core.
//!
//! Everything numerical (decomposition, autodiff, inference, training) is
//! generic over [`Scalar`] so the same code runs in `f32` or `f64`. Tests and
//! the default configuration use `f64`.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Scalar type the pipeline computes in.
///
/// A thin bundle of the `num-traits` capabilities the crate needs plus the
/// marker bounds required to ship tensors across threads.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` for configuration constants.
    fn from_real(x: f64) -> Self {
        Self::from_f64(x).expect("finite constant must convert")
    }

    /// Conversion to `f64` for reporting and serialization.
    fn to_real(self) -> f64 {
        self.to_f64().expect("scalar must convert to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for `S::from_real`, readable at call sites with many constants.
#[inline]
pub fn real<S: Scalar>(x: f64) -> S {
    S::from_real(x)
}
