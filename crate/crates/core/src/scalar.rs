//! Floating-point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar the transport and curve code is generic over (`f32` or `f64`).
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Panics only if the target type cannot
    /// represent finite `f64` values at all, which never happens for floats.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("float literal")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize fits a float")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }

    /// Tolerance for simplex checks: `base` for `f64`, widened for coarser types.
    #[inline]
    fn tolerance(base: f64) -> Self {
        let eps_scaled = Self::epsilon() * Self::lit(4096.0);
        Self::lit(base).max(eps_scaled)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
