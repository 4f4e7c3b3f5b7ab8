//! Floating point abstraction shared by every kernel.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real number type the solver is generic over.
///
/// Implemented for `f32` and `f64`. Kernels only need basic arithmetic,
/// `sqrt` and `abs`, so any IEEE-like float satisfying these bounds works.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Sum + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Converts an `f64` literal, panicking only if the type cannot represent it at all.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal not representable")
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}
