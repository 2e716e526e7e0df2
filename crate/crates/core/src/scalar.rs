use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar the solvers and bounds are generic over: `f32` or `f64`.
///
/// Only `RealField` contributes arithmetic methods (`sqrt`, `exp`, `ln`, ...),
/// so calls on a `T: Scalar` never become ambiguous.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only for values the type cannot hold.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal not representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn infinity() -> Self;

    fn machine_epsilon() -> Self;

    fn is_finite_value(self) -> bool;
}

impl Scalar for f32 {
    #[inline]
    fn infinity() -> Self {
        f32::INFINITY
    }
    #[inline]
    fn machine_epsilon() -> Self {
        f32::EPSILON
    }
    #[inline]
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f64 {
    #[inline]
    fn infinity() -> Self {
        f64::INFINITY
    }
    #[inline]
    fn machine_epsilon() -> Self {
        f64::EPSILON
    }
    #[inline]
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}
