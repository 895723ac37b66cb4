//! Segmentation metrics, correction burden and the annotation-time model.

mod hail;
mod metrics;

pub use hail::{
    fit_decay, fit_hail_curve, loop_annotation_time, read_timing_csv, time_savings, HailFit, HailRecord,
    HailSeries, TAU_CAP_FACTOR,
};
pub use metrics::{class_confusions, compute_metrics, confusion, ConfusionCounts, Metrics};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Items needing expert correction are those with F1 at or below
/// `threshold`. The acceptability bar used by default.
pub const DEFAULT_F1_THRESHOLD: f64 = 0.88;

/// Fraction of items whose F1 is `≤ threshold`.
pub fn correction_burden<T: Scalar>(f1: &[T], threshold: T) -> Result<T> {
    if f1.is_empty() {
        return Err(Error::InvalidArgument("correction burden of an empty list".into()));
    }
    if !(threshold >= T::zero() && threshold < T::one()) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside [0, 1)")));
    }
    let below = f1.iter().filter(|&&v| v <= threshold).count();
    Ok(T::from_usize(below).unwrap() / T::from_usize(f1.len()).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burden_examples() {
        assert_eq!(correction_burden(&[1.0, 1.0], 0.88).unwrap(), 0.0);
        assert_eq!(correction_burden(&[0.9, 0.8, 0.95, 0.5], 0.88).unwrap(), 0.5);
        assert_eq!(correction_burden(&[0.1f32, 0.01], 0.0).unwrap(), 0.0);
        assert_eq!(correction_burden(&[0.88], 0.88).unwrap(), 1.0);
        assert!(correction_burden::<f64>(&[], 0.5).is_err());
        assert!(correction_burden(&[0.5], 1.0).is_err());
    }
}
