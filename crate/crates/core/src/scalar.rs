//! Floating point abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used for latencies, probabilities and weights: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Standard normal cumulative distribution function.
    #[inline]
    fn std_normal_cdf(self) -> Self {
        Self::lit(0.5 * libm::erfc(-self.as_f64() / std::f64::consts::SQRT_2))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Absolute tolerance used for weight-sum checks.
pub fn weight_tolerance<T: Scalar>() -> T {
    // f32 cannot resolve 1e-9 around 1.0
    if std::mem::size_of::<T>() < 8 {
        T::lit(1e-5)
    } else {
        T::lit(1e-9)
    }
}

pub(crate) fn cmp<T: Scalar>(a: &T, b: &T) -> std::cmp::Ordering {
    a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal)
}
