//! Holdout validation across every saved iteration.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use hail_core::analytics::{
    class_confusions, correction_burden, fit_hail_curve, read_timing_csv, ConfusionCounts, HailFit, HailSeries, Metrics,
};
use hail_core::annotations::{read_annotations, ClassMap};
use hail_core::pipeline::{predict_slide_mask, PredictionMode};
use hail_core::raster::rasterize_window;
use hail_core::{MaskTile, SlideHandle, Window};
use serde::Serialize;

use crate::commands::LoadedModels;
use crate::config::ProjectConfig;
use crate::error::{CliError, CliResult};
use crate::layout::ProjectLayout;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricValues {
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub f1: f64,
}

impl From<&Metrics<f64>> for MetricValues {
    fn from(m: &Metrics<f64>) -> Self {
        Self {
            sensitivity: m.sensitivity,
            specificity: m.specificity,
            precision: m.precision,
            accuracy: m.accuracy,
            f1: m.f1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub counts: ConfusionCounts,
    pub metrics: MetricValues,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeReport {
    pub mode: PredictionMode,
    /// Unweighted mean over foreground classes.
    pub mean: MetricValues,
    pub classes: Vec<ClassReport>,
    pub highres_grid_tiles: usize,
    pub highres_evaluated: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlideReport {
    pub slide: String,
    /// Mean F1 in the primary mode.
    pub f1: f64,
    pub modes: Vec<ModeReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationReport {
    pub iteration: u32,
    pub mean_f1: f64,
    /// Fraction of holdout slides with F1 at or below the threshold.
    pub correction_burden: f64,
    pub slides: Vec<SlideReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub primary_mode: PredictionMode,
    pub f1_threshold: f64,
    pub holdout: Vec<String>,
    pub iterations: Vec<IterationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotation_time_fit: Option<HailFit<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingEntry {
    pub iteration: u32,
    pub slide: String,
    pub mode: PredictionMode,
    pub seconds: f64,
}

fn mode_report(pred: &MaskTile, truth: &MaskTile, class_map: &ClassMap, mode: PredictionMode) -> CliResult<ModeReport> {
    let confusions = class_confusions(pred, truth, class_map.n_classes())?;
    let mut classes = Vec::new();
    let mut all = Vec::new();
    for (k, counts) in confusions.into_iter().enumerate() {
        let class = k as u8 + 1;
        let m: Metrics<f64> = counts.metrics();
        classes.push(ClassReport {
            class,
            name: class_map.binding_for_class(class).and_then(|b| b.name.clone()),
            counts,
            metrics: (&m).into(),
        });
        all.push(m);
    }
    let mean = Metrics::mean(&all).ok_or_else(|| CliError::data("classmap.json defines no foreground class"))?;
    Ok(ModeReport {
        mode,
        mean: (&mean).into(),
        classes,
        highres_grid_tiles: 0,
        highres_evaluated: 0,
    })
}

/// Runs every saved iteration over HOLDOUT/ and writes `report.json`,
/// `report.txt` and `timings.json` into VALIDATION/.
pub fn validate(
    layout: &ProjectLayout,
    config: &ProjectConfig,
    one_network: bool,
    out: &mut dyn Write,
) -> CliResult<ValidationReport> {
    let class_map = ClassMap::load(&layout.classmap())?;
    let iterations = layout.iterations()?;
    if iterations.is_empty() {
        return Err(CliError::data("no trained iteration in MODELS/; run --option train first"));
    }
    let holdout = layout.holdout_slides()?;
    if holdout.is_empty() {
        return Err(CliError::data("HOLDOUT/ has no slides; add slides with truth XML of the same stem"));
    }
    let mut cases = Vec::new();
    for entry in &holdout {
        let xml = layout.holdout().join(format!("{}.xml", entry.stem));
        if !xml.is_file() {
            return Err(CliError::data(format!("missing truth annotations {}", xml.display())));
        }
        let doc = read_annotations::<f64>(&xml)?;
        let slide = SlideHandle::open(&entry.path)?;
        let truth = rasterize_window(&doc, &class_map, &Window::new((0, 0), slide.dimensions(), 1))?;
        cases.push((entry.stem.clone(), slide, truth));
    }

    let primary = if one_network { PredictionMode::Full } else { PredictionMode::DeepZoom };
    let mut reports = Vec::new();
    let mut timings = Vec::new();
    for &i in &iterations {
        let models = LoadedModels::load(layout, config, &class_map, i)?;
        models.mode(one_network)?;
        let mut modes = vec![primary];
        if !one_network {
            modes.push(PredictionMode::Full);
        }
        let mut slides = Vec::new();
        for (stem, slide, truth) in &cases {
            let mut reports_for_slide = Vec::new();
            for &mode in &modes {
                let start = Instant::now();
                let p = predict_slide_mask(slide, models.lowres(), models.highres.as_ref(), &config.predict(mode))
                    .map_err(|e| CliError::from(e).context(stem))?;
                timings.push(TimingEntry {
                    iteration: i,
                    slide: stem.clone(),
                    mode,
                    seconds: start.elapsed().as_secs_f64(),
                });
                let mut r = mode_report(&p.mask, truth, &class_map, mode)?;
                r.highres_grid_tiles = p.stats.highres_grid_tiles;
                r.highres_evaluated = p.stats.highres_evaluated;
                reports_for_slide.push(r);
            }
            slides.push(SlideReport {
                slide: stem.clone(),
                f1: reports_for_slide[0].mean.f1,
                modes: reports_for_slide,
            });
        }
        let f1: Vec<f64> = slides.iter().map(|s| s.f1).collect();
        let report = IterationReport {
            iteration: i,
            mean_f1: f1.iter().sum::<f64>() / f1.len() as f64,
            correction_burden: correction_burden(&f1, config.f1_threshold)?,
            slides,
        };
        let _ = writeln!(
            out,
            "iteration {i}: mean F1 {:.4}, correction burden {:.3}",
            report.mean_f1, report.correction_burden
        );
        reports.push(report);
    }

    let annotation_time_fit = if layout.timing_log().is_file() {
        let records = read_timing_csv::<f64>(&layout.timing_log())?;
        Some(fit_hail_curve(&HailSeries::new(records)?)?)
    } else {
        None
    };
    if let Some(fit) = &annotation_time_fit {
        let _ = writeln!(out, "annotation time: tau {:.3}, savings {:.1}%", fit.tau, fit.p);
    }

    let report = ValidationReport {
        primary_mode: primary,
        f1_threshold: config.f1_threshold,
        holdout: cases.iter().map(|c| c.0.clone()).collect(),
        iterations: reports,
        annotation_time_fit,
    };
    let dir = layout.validation();
    fs::create_dir_all(&dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    write_json(&dir.join("report.json"), &report)?;
    write_text(&dir.join("report.txt"), &report_table(&report))?;
    write_json(&dir.join("timings.json"), &timings)?;
    let _ = writeln!(out, "wrote {}", dir.join("report.json").display());
    Ok(report)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    write_text(path, &(text + "\n"))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn mode_name(mode: PredictionMode) -> &'static str {
    match mode {
        PredictionMode::DeepZoom => "deepzoom",
        PredictionMode::Full => "full",
    }
}

/// Flat whitespace-separated table, one row per iteration, slide, mode and
/// class.
pub fn report_table(report: &ValidationReport) -> String {
    let mut s = String::new();
    writeln!(s, "iteration\tslide\tmode\tclass\tsensitivity\tspecificity\tprecision\taccuracy\tf1").unwrap();
    for it in &report.iterations {
        for slide in &it.slides {
            for m in &slide.modes {
                let rows = m.classes.iter().map(|c| (c.class.to_string(), &c.metrics));
                for (class, v) in rows.chain(std::iter::once(("mean".to_string(), &m.mean))) {
                    writeln!(
                        s,
                        "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                        it.iteration,
                        slide.slide,
                        mode_name(m.mode),
                        class,
                        v.sensitivity,
                        v.specificity,
                        v.precision,
                        v.accuracy,
                        v.f1
                    )
                    .unwrap();
                }
            }
        }
    }
    writeln!(s).unwrap();
    writeln!(s, "iteration\tmean_f1\tcorrection_burden@{}", report.f1_threshold).unwrap();
    for it in &report.iterations {
        writeln!(s, "{}\t{:.6}\t{:.6}", it.iteration, it.mean_f1, it.correction_burden).unwrap();
    }
    s
}
