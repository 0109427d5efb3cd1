//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};

/// Real floating-point scalar usable with the dense and sparse kernels.
///
/// Implemented for `f32` and `f64`. Persistence always widens to `f64`, so
/// round trips are bitwise only for `f64`.
pub trait Real:
    faer::traits::RealField
    + num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Copy
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        <Self as num_traits::FromPrimitive>::from_usize(n).expect("representable count")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
