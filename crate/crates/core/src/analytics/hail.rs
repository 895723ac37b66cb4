//! Annotation-economics model of the iterative loop.
//!
//! Normalized annotation time per region decays as `A(r) = exp(−r/τ)`.
//! Over `R` regions the loop costs `H = τ·(1 − exp(−R/τ))` against a manual
//! baseline `B = R`, so the time savings are `P = (1 − H/B)·100`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `τ_max = TAU_CAP_FACTOR · R`; fits that reach it show no measurable
/// improvement.
pub const TAU_CAP_FACTOR: f64 = 100.0;
const TAU_FLOOR_FACTOR: f64 = 1e-6;
const GRID_POINTS: usize = 400;
const RELATIVE_TOLERANCE: f64 = 1e-6;

#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn check_positive<T: Scalar>(name: &str, v: T) -> Result<()> {
    if !(v > T::zero()) || !v.is_finite() {
        return Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

/// `H = τ·(1 − e^(−R/τ))`.
pub fn loop_annotation_time<T: Scalar>(tau: T, r_total: T) -> Result<T> {
    check_positive("tau", tau)?;
    check_positive("R", r_total)?;
    Ok(-tau * (-r_total / tau).exp_m1())
}

/// `P = (1 + (τ/R)·(e^(−R/τ) − 1))·100`.
pub fn time_savings<T: Scalar>(tau: T, r_total: T) -> Result<T> {
    check_positive("tau", tau)?;
    check_positive("R", r_total)?;
    let hundred = T::from_f64_lossy(100.0);
    Ok((T::one() + tau / r_total * (-r_total / tau).exp_m1()) * hundred)
}

/// One timed region annotation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HailRecord<T = f64> {
    pub wsi_id: String,
    pub iteration: u32,
    /// Cumulative number of regions annotated so far.
    pub region_index: T,
    pub seconds: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HailSeries<T = f64> {
    pub records: Vec<HailRecord<T>>,
    /// Mean seconds per region over iteration 0.
    pub t0: T,
}

impl<T: Scalar> HailSeries<T> {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn new(records: Vec<HailRecord<T>>) -> Result<Self> {
        for r in &records {
            if !(r.seconds > T::zero()) || !r.seconds.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-positive annotation time {} for {}",
                    r.seconds, r.wsi_id
                )));
            }
            if !(r.region_index >= T::zero()) || !r.region_index.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "invalid region index {} for {}",
                    r.region_index, r.wsi_id
                )));
            }
        }
        let base: Vec<T> = records.iter().filter(|r| r.iteration == 0).map(|r| r.seconds).collect();
        if base.is_empty() {
            return Err(Error::InvalidArgument("no iteration-0 records; t0 is undefined".into()));
        }
        let t0 = mean(&base);
        Ok(Self { records, t0 })
    }

    /// Per-WSI points `(mean region index, mean seconds / t0)`, ordered by
    /// WSI id.
    pub fn points(&self) -> Vec<(T, T)> {
        let mut groups: BTreeMap<&str, (Vec<T>, Vec<T>)> = BTreeMap::new();
        for r in &self.records {
            let g = groups.entry(&r.wsi_id).or_default();
            g.0.push(r.region_index);
            g.1.push(r.seconds);
        }
        groups.values().map(|(r, t)| (mean(r), mean(t) / self.t0)).collect()
    }

    /// Total regions annotated: the largest region index.
    pub fn total_regions(&self) -> T {
        self.records.iter().map(|r| r.region_index).fold(T::zero(), T::max)
    }
}

fn mean<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &b| a + b) / T::from_usize(v.len()).expect("length fits")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HailFit<T = f64> {
    pub tau: T,
    pub r_total: T,
    /// Normalized loop annotation time.
    pub h: T,
    /// Normalized manual baseline (= R).
    pub b: T,
    /// Time savings in percent.
    pub p: T,
    /// τ reached `τ_max`: no measurable improvement.
    pub capped: bool,
}

fn sse<T: Scalar>(points: &[(T, T)], tau: T) -> T {
    points.iter().fold(T::zero(), |acc, &(r, a)| {
        let e = a - (-r / tau).exp();
        acc + e * e
    })
}

/// Least-squares `τ` for `A(r) = e^(−r/τ)` over `[1e−6·R, 100·R]`.
///
/// A log-spaced scan brackets the best grid point, then golden-section
/// search in `ln τ` narrows the bracket to relative width 1e−6. Returns
/// `(τ, capped)`.
pub fn fit_decay<T: Scalar>(points: &[(T, T)], r_total: T) -> Result<(T, bool)> {
    check_positive("R", r_total)?;
    if points.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 averaged points to fit, got {}",
            points.len()
        )));
    }
    let lo = (r_total * T::from_f64_lossy(TAU_FLOOR_FACTOR)).ln();
    let hi = (r_total * T::from_f64_lossy(TAU_CAP_FACTOR)).ln();
    let step = (hi - lo) / T::from_usize(GRID_POINTS - 1).unwrap();
    let at = |k: usize| lo + step * T::from_usize(k).unwrap();
    let f = |u: T| sse(points, u.exp());

    let mut best = 0;
    let mut best_v = f(at(0));
    for k in 1..GRID_POINTS {
        let v = f(at(k));
        if v < best_v {
            best = k;
            best_v = v;
        }
    }
    let mut a = at(best.saturating_sub(1));
    let mut b = at((best + 1).min(GRID_POINTS - 1));

    let inv_phi = T::from_f64_lossy((5f64.sqrt() - 1.0) / 2.0);
    let tol = T::from_f64_lossy(RELATIVE_TOLERANCE).ln_1p();
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    // Width in ln τ equals the relative width of the τ bracket.
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mut u = (a + b) / T::from_f64_lossy(2.0);
    // Endpoints are never probed by the section search.
    for edge in [at(0), at(GRID_POINTS - 1)] {
        if f(edge) < f(u) {
            u = edge;
        }
    }
    let tau = u.exp();
    let cap = r_total * T::from_f64_lossy(TAU_CAP_FACTOR);
    let capped = tau >= cap * (T::one() - T::from_f64_lossy(1e-4));
    Ok((if capped { cap } else { tau }, capped))
}

pub fn fit_hail_curve<T: Scalar>(series: &HailSeries<T>) -> Result<HailFit<T>> {
    let points = series.points();
    let r_total = series.total_regions();
    let (tau, capped) = fit_decay(&points, r_total)?;
    let h = loop_annotation_time(tau, r_total)?;
    Ok(HailFit {
        tau,
        r_total,
        h,
        b: r_total,
        p: time_savings(tau, r_total)?,
        capped,
    })
}

/// Reads a `wsi_id,iteration,region_index,seconds` timing log.
pub fn read_timing_csv<T: Scalar>(path: &Path) -> Result<Vec<HailRecord<T>>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?
        .clone();
    let expected = ["wsi_id", "iteration", "region_index", "seconds"];
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::InvalidArgument(format!(
            "{}: expected header {}, found {}",
            path.display(),
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        let bad = |field: &str| {
            Error::InvalidArgument(format!("{}: row {}: invalid {field}", path.display(), line + 2))
        };
        out.push(HailRecord {
            wsi_id: row[0].to_string(),
            iteration: row[1].parse().map_err(|_| bad("iteration"))?,
            region_index: row[2].parse().map_err(|_| bad("region_index"))?,
            seconds: row[3].parse().map_err(|_| bad("seconds"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn savings_worked_value() {
        let p: f64 = time_savings(100.0, 600.0).unwrap();
        assert!((p - 83.37).abs() < 0.01, "{p}");
        let h = loop_annotation_time(100.0, 600.0).unwrap();
        assert_relative_eq!(p, (1.0 - h / 600.0) * 100.0, epsilon = 1e-12);
    }

    #[test]
    fn savings_limits() {
        assert!(time_savings(1.0, 1e-9).unwrap() < 1e-6);
        assert!(time_savings(1e-8, 1.0).unwrap() > 99.9999);
        assert!(time_savings(0.0, 1.0).is_err());
        assert!(time_savings(1.0, -1.0).is_err());
    }

    fn series(points: &[(f64, f64)]) -> HailSeries {
        let mut records = vec![HailRecord { wsi_id: "base".into(), iteration: 0, region_index: 0.0, seconds: 10.0 }];
        for (k, &(r, a)) in points.iter().enumerate() {
            records.push(HailRecord { wsi_id: format!("w{k:03}"), iteration: 1, region_index: r, seconds: 10.0 * a });
        }
        HailSeries::new(records).unwrap()
    }

    #[test]
    fn noiseless_fit_recovers_tau() {
        let pts: Vec<_> = (1..=12).map(|k| (50.0 * k as f64, (-(50.0 * k as f64) / 50.0).exp())).collect();
        let (tau, capped) = fit_decay(&pts, 600.0).unwrap();
        assert!(!capped);
        assert_relative_eq!(tau, 50.0, max_relative = 1e-3);
        let fit = fit_hail_curve(&series(&pts)).unwrap();
        assert_relative_eq!(fit.tau, 50.0, max_relative = 1e-3);
        assert_eq!(fit.b, 600.0);
    }

    #[test]
    fn flat_curve_hits_cap() {
        let pts: Vec<_> = (1..=6).map(|k| (100.0 * k as f64, 1.0)).collect();
        let (tau, capped) = fit_decay(&pts, 600.0).unwrap();
        assert!(capped);
        assert_eq!(tau, 60000.0);
        assert!(time_savings(tau, 600.0).unwrap() < 1.0);
    }

    #[test]
    fn series_validation() {
        let r = |it, s| HailRecord { wsi_id: "a".to_string(), iteration: it, region_index: 1.0, seconds: s };
        assert!(HailSeries::new(vec![r(1, 3.0)]).is_err());
        assert!(HailSeries::new(vec![r(0, 3.0), r(1, 0.0)]).is_err());
        let s = HailSeries::new(vec![r(0, 3.0), r(0, 5.0), r(1, 2.0)]).unwrap();
        assert_eq!(s.t0, 4.0);
        assert!(fit_decay(&[(1.0, 1.0)], 1.0).is_err());
    }

    #[test]
    fn per_wsi_averaging() {
        let rec = |id: &str, it, r, s| HailRecord { wsi_id: id.to_string(), iteration: it, region_index: r, seconds: s };
        let s = HailSeries::new(vec![rec("a", 0, 1.0, 4.0), rec("a", 0, 3.0, 8.0), rec("b", 1, 10.0, 3.0)]).unwrap();
        assert_eq!(s.points(), vec![(2.0, 1.0), (10.0, 0.5)]);
        assert_eq!(s.total_regions(), 10.0);
    }

    #[test]
    fn f32_fit() {
        let pts: Vec<(f32, f32)> = (1..=12).map(|k| (50.0 * k as f32, (-(k as f32)).exp())).collect();
        let (tau, _) = fit_decay(&pts, 600.0f32).unwrap();
        assert!((tau - 50.0).abs() / 50.0 < 1e-3);
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "wsi_id,iteration,region_index,seconds\ns1,0,1,12.5\ns2, 1 ,4,6\n").unwrap();
        let rows: Vec<HailRecord> = read_timing_csv(&p).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].iteration, 1);
        assert_eq!(rows[1].seconds, 6.0);
        std::fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(read_timing_csv::<f64>(&p).is_err());
    }
}
