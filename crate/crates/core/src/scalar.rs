//! Scalar abstractions shared by the geometry and analytics code.
//!
//! Coordinates and the annotation-economics model are generic over a
//! floating point [`Scalar`] (`f32` or `f64`). Segmentation metrics are
//! generic over [`MetricScalar`], which additionally admits exact rationals
//! so that pixel-count ratios can be checked without rounding.

use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// floating point: f32 or f64
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Display + Debug + FromStr + Default + Send + Sync + 'static
{
    /// Lossless widening used by the internal scan converters.
    fn to_f64_exact(self) -> f64 {
        // f32 -> f64 and f64 -> f64 are both exact.
        self.to_f64().expect("float widens to f64")
    }

    fn from_f64_lossy(value: f64) -> Self {
        Self::from_f64(value).unwrap_or_else(Self::nan)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Value type for ratio metrics (sensitivity, precision, ...).
pub trait MetricScalar: Num + Clone + PartialOrd + Debug {
    /// `num / den` for pixel counts; `den` is non-zero.
    fn from_counts(num: u64, den: u64) -> Self;

    fn to_f64_lossy(&self) -> f64;
}

impl MetricScalar for f32 {
    fn from_counts(num: u64, den: u64) -> Self {
        (num as f64 / den as f64) as f32
    }

    fn to_f64_lossy(&self) -> f64 {
        *self as f64
    }
}

impl MetricScalar for f64 {
    fn from_counts(num: u64, den: u64) -> Self {
        num as f64 / den as f64
    }

    fn to_f64_lossy(&self) -> f64 {
        *self
    }
}

impl MetricScalar for Ratio<u64> {
    fn from_counts(num: u64, den: u64) -> Self {
        Ratio::new(num, den)
    }

    fn to_f64_lossy(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

impl MetricScalar for Ratio<i64> {
    fn from_counts(num: u64, den: u64) -> Self {
        let c = |v: u64| i64::try_from(v).expect("pixel count exceeds i64");
        Ratio::new(c(num), c(den))
    }

    fn to_f64_lossy(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}
