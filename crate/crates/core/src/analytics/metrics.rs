use crate::error::{Error, Result};
use crate::raster::MaskTile;
use crate::scalar::MetricScalar;

/// One class against the rest, in pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Ratios with the convention `0/0 = 1`.
    pub fn metrics<T: MetricScalar>(&self) -> Metrics<T> {
        let ratio = |num: u64, den: u64| if den == 0 { T::one() } else { T::from_counts(num, den) };
        Metrics {
            sensitivity: ratio(self.tp, self.tp + self.fn_),
            specificity: ratio(self.tn, self.tn + self.fp),
            precision: ratio(self.tp, self.tp + self.fp),
            accuracy: ratio(self.tp + self.tn, self.total()),
            // Equal to 2PS/(P+S) whenever P+S > 0.
            f1: ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_),
        }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics<T = f64> {
    pub sensitivity: T,
    pub specificity: T,
    pub precision: T,
    pub accuracy: T,
    pub f1: T,
}

impl<T: MetricScalar> Metrics<T> {
    pub fn to_f64(&self) -> Metrics<f64> {
        Metrics {
            sensitivity: self.sensitivity.to_f64_lossy(),
            specificity: self.specificity.to_f64_lossy(),
            precision: self.precision.to_f64_lossy(),
            accuracy: self.accuracy.to_f64_lossy(),
            f1: self.f1.to_f64_lossy(),
        }
    }
}

impl Metrics<f64> {
    /// Unweighted mean of several metric sets.
    pub fn mean(items: &[Metrics<f64>]) -> Option<Metrics<f64>> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let avg = |f: fn(&Metrics<f64>) -> f64| items.iter().map(f).sum::<f64>() / n;
        Some(Metrics {
            sensitivity: avg(|m| m.sensitivity),
            specificity: avg(|m| m.specificity),
            precision: avg(|m| m.precision),
            accuracy: avg(|m| m.accuracy),
            f1: avg(|m| m.f1),
        })
    }
}

fn check_dims(pred: &MaskTile, truth: &MaskTile) -> Result<()> {
    if pred.width != truth.width || pred.height != truth.height || pred.scale != truth.scale {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {}x{} at scale {}, truth is {}x{} at scale {}",
            pred.width, pred.height, pred.scale, truth.width, truth.height, truth.scale
        )));
    }
    Ok(())
}

pub fn confusion(pred: &MaskTile, truth: &MaskTile, positive: u8) -> Result<ConfusionCounts> {
    check_dims(pred, truth)?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.values.iter().zip(&truth.values) {
        match (p == positive, t == positive) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn compute_metrics<T: MetricScalar>(
    pred: &MaskTile,
    truth: &MaskTile,
    positive: u8,
) -> Result<(ConfusionCounts, Metrics<T>)> {
    let c = confusion(pred, truth, positive)?;
    Ok((c, c.metrics()))
}

/// One-vs-rest counts for every foreground class `1..n_classes`, from a
/// single pass over the pixels.
pub fn class_confusions(pred: &MaskTile, truth: &MaskTile, n_classes: u8) -> Result<Vec<ConfusionCounts>> {
    check_dims(pred, truth)?;
    let n = n_classes as usize;
    let mut joint = vec![0u64; 256 * 256];
    for (&p, &t) in pred.values.iter().zip(&truth.values) {
        joint[p as usize * 256 + t as usize] += 1;
    }
    let total = pred.values.len() as u64;
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    for c in 1..n {
        let tp = joint[c * 256 + c];
        let pred_c: u64 = joint[c * 256..(c + 1) * 256].iter().sum();
        let truth_c: u64 = (0..256).map(|p| joint[p * 256 + c]).sum();
        let fp = pred_c - tp;
        let fn_ = truth_c - tp;
        out.push(ConfusionCounts {
            tp,
            fp,
            fn_,
            tn: total - tp - fp - fn_,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Window;
    use num_rational::Ratio;

    fn masks(pred: &[u8], truth: &[u8]) -> (MaskTile, MaskTile) {
        let w = Window::new((0, 0), (4, 4), 1);
        let mut p = MaskTile::zeros(&w);
        let mut t = MaskTile::zeros(&w);
        p.values.copy_from_slice(pred);
        t.values.copy_from_slice(truth);
        (p, t)
    }

    #[test]
    fn perfect_agreement() {
        let mut v = [0u8; 16];
        v[..4].fill(1);
        let (p, t) = masks(&v, &v);
        let (_, m) = compute_metrics::<f64>(&p, &t, 1).unwrap();
        assert_eq!(m, Metrics { sensitivity: 1.0, specificity: 1.0, precision: 1.0, accuracy: 1.0, f1: 1.0 });
    }

    #[test]
    fn worked_sixteen_pixels() {
        let mut truth = [0u8; 16];
        truth[..4].fill(1);
        let mut pred = [0u8; 16];
        pred[..2].fill(1);
        pred[10] = 1;
        let (p, t) = masks(&pred, &truth);
        let (c, m) = compute_metrics::<Ratio<u64>>(&p, &t, 1).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 2, fp: 1, tn: 11, fn_: 2 });
        assert_eq!(m.sensitivity, Ratio::new(1, 2));
        assert_eq!(m.specificity, Ratio::new(11, 12));
        assert_eq!(m.precision, Ratio::new(2, 3));
        assert_eq!(m.accuracy, Ratio::new(13, 16));
        assert_eq!(m.f1, Ratio::new(4, 7));
    }

    #[test]
    fn empty_positive_class_is_perfect() {
        let (p, t) = masks(&[0; 16], &[0; 16]);
        let (_, m) = compute_metrics::<f64>(&p, &t, 1).unwrap();
        assert_eq!(m.to_f64().f1, 1.0);
        assert_eq!(m.sensitivity, 1.0);
        assert_eq!(m.precision, 1.0);
    }

    #[test]
    fn dims_must_match() {
        let a = MaskTile::zeros(&Window::new((0, 0), (4, 4), 1));
        let b = MaskTile::zeros(&Window::new((0, 0), (4, 3), 1));
        assert!(compute_metrics::<f64>(&a, &b, 1).is_err());
    }

    #[test]
    fn joint_pass_matches_single_class() {
        let pred: Vec<u8> = (0..16).map(|i| (i * 7 % 3) as u8).collect();
        let truth: Vec<u8> = (0..16).map(|i| (i * 5 % 3) as u8).collect();
        let (p, t) = masks(&pred, &truth);
        let all = class_confusions(&p, &t, 3).unwrap();
        for c in 1..3u8 {
            assert_eq!(all[c as usize - 1], confusion(&p, &t, c).unwrap());
        }
    }
}
