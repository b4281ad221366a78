use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the estimators are generic over.
///
/// Linear algebra comes from nalgebra's `RealField`; conversions to and
/// from `f64` constants go through num-traits.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + LowerExp + Debug + Send + Sync + 'static
{
    /// Converts an `f64` constant. Panics only for values not representable
    /// at all (never for finite inputs with `f32`/`f64`).
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant not representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize not representable")
    }
}

impl<T> Scalar for T where
    T: RealField
        + Copy
        + FromPrimitive
        + ToPrimitive
        + Display
        + LowerExp
        + Debug
        + Send
        + Sync
        + 'static
{
}
