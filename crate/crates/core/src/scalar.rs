//! Scalar abstraction shared by the numeric modules.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar the GP, kinematics, risk and NLP code is generic over.
///
/// Only `f32` and `f64` implement it. `nalgebra::RealField` supplies the
/// elementary functions; `num_traits` supplies the lossless conversions used
/// for literals and for handing values to `f64`-only routines.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + std::fmt::Display {
    /// Converts an `f64` literal. Every literal used in this crate is
    /// representable in both supported types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).unwrap_or_else(Self::max_value_or_nan)
    }

    #[doc(hidden)]
    fn max_value_or_nan() -> Self {
        Self::max_value().unwrap_or_else(Self::zero)
    }

    /// Machine epsilon of the concrete type.
    fn epsilon() -> Self;

    fn is_finite_value(self) -> bool;
}

impl Real for f32 {
    fn epsilon() -> Self {
        f32::EPSILON
    }
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Real for f64 {
    fn epsilon() -> Self {
        f64::EPSILON
    }
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}
