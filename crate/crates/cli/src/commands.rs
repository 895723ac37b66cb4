//! The four project operations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hail_core::annotations::{read_annotations, write_annotations, AnnotationDocument, ClassMap};
use hail_core::augment::{plan_balanced_augmentation_capped, tabulate_classes, write_augmented_set, TrainingBlock};
use hail_core::pipeline::{
    chop_slide, load_backend, predict_slide, BackendSidecar, CentroidBackend, ExternalBackend, PredictionMode,
    SegmenterBackend, TrainingSet,
};
use hail_core::{Error, MaskTile, SlideHandle};

use crate::config::{BackendKind, ProjectConfig};
use crate::error::{CliError, CliResult};
use crate::layout::{copy_tree, ProjectLayout, ProjectLock, SlideEntry};

pub const HIGHRES: &str = "highres";
pub const LOWRES: &str = "lowres";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}

fn say(out: &mut dyn Write, line: impl AsRef<str>) {
    let _ = writeln!(out, "{}", line.as_ref());
}

/// Creates an empty project, optionally seeding TRANSFER/ with the latest
/// models of another project.
pub fn new_project(
    layout: &ProjectLayout,
    config: &ProjectConfig,
    transfer: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<()> {
    let root = &layout.root;
    if root.exists() {
        let mut entries = fs::read_dir(root).map_err(|e| io_err(root, e))?;
        if !root.is_dir() || entries.next().is_some() {
            return Err(CliError::data(format!(
                "project exists: {} is not an empty directory",
                root.display()
            )));
        }
    }
    let source = match transfer {
        Some(src) => {
            let src = ProjectLayout::new(src);
            src.require().map_err(|e| e.context("--transfer"))?;
            let i = src.latest_iteration()?.ok_or_else(|| {
                CliError::data(format!("--transfer: {} has no trained iteration", src.root.display()))
            })?;
            Some((src.model_iter(i), i))
        }
        None => None,
    };
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    let _lock = ProjectLock::acquire(root)?;
    for dir in layout.directories() {
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    }
    config.save(&layout.config())?;
    ClassMap::identity(1).save(&layout.classmap())?;
    say(out, format!("created project {}", root.display()));
    if let Some((models, i)) = source {
        copy_tree(&models, &layout.transfer())?;
        say(out, format!("warm-start state copied from {} (iteration {i})", models.display()));
    }
    say(out, "add slides to WSI/ and their annotation XML (same file stem) to REGIONS/, then run --option train");
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainSummary {
    pub iteration: u32,
    pub slides: Vec<String>,
    pub highres_pairs: u64,
    pub lowres_pairs: Option<u64>,
}

fn fresh_backend(config: &ProjectConfig, n_classes: u8, scale: u32) -> CliResult<Box<dyn SegmenterBackend>> {
    Ok(match config.backend {
        BackendKind::Centroid => Box::new(CentroidBackend::with_radius(n_classes, scale, config.centroid_radius)),
        BackendKind::External => Box::new(ExternalBackend::new(config.external_command.clone(), n_classes, scale)?),
    })
}

/// Loads `dir/name` if saved there, checking its class space and scale.
fn saved_backend(dir: &Path, name: &str, n_classes: u8, scale: u32) -> CliResult<Option<Box<dyn SegmenterBackend>>> {
    if !BackendSidecar::path(dir, name).is_file() {
        return Ok(None);
    }
    let backend = load_backend(dir, name).map_err(|e| CliError::from(e).context(dir.display()))?;
    if backend.n_classes() != n_classes {
        return Err(CliError::data(format!(
            "{}: {name} backend has {} classes but classmap.json defines {n_classes}",
            dir.display(),
            backend.n_classes()
        )));
    }
    if backend.scale() != scale {
        return Err(CliError::from(Error::ScaleMismatch { expected: scale, found: backend.scale() })
            .context(dir.join(name).display()));
    }
    Ok(Some(backend))
}

fn remove_if_present(path: &Path) -> CliResult<()> {
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Chops every annotated slide at `scale` and writes the balanced,
/// augmented pairs into `dir`.
fn build_training_set(
    slides: &[(SlideEntry, AnnotationDocument)],
    class_map: &ClassMap,
    config: &ProjectConfig,
    scale: u32,
    seed: u64,
    dir: &Path,
) -> CliResult<u64> {
    let mut blocks: Vec<TrainingBlock> = Vec::new();
    for (entry, doc) in slides {
        let slide = SlideHandle::open(&entry.path)?;
        let chopped = chop_slide(&slide, &entry.stem, doc, class_map, config.tile_size, config.overlap, scale, &config.tissue())
            .map_err(|e| CliError::from(e).context(entry.path.display()))?;
        blocks.extend(chopped);
    }
    if blocks.is_empty() {
        return Err(CliError::data(format!(
            "empty training set at scale {scale}: no block holds annotations or tissue"
        )));
    }
    let masks: Vec<MaskTile> = blocks.iter().map(|b| b.mask.clone()).collect();
    let counts = tabulate_classes(&masks);
    let base = config.augment_base;
    let cap = config.augment_cap.unwrap_or(base.saturating_mul(4));
    let plan = plan_balanced_augmentation_capped(&counts, base, cap, &masks, seed)?;
    Ok(write_augmented_set(dir, &blocks, &plan, &config.augment())?)
}

pub fn train(
    layout: &ProjectLayout,
    config: &ProjectConfig,
    one_network: bool,
    out: &mut dyn Write,
) -> CliResult<TrainSummary> {
    let class_map = ClassMap::load(&layout.classmap())?;
    let n_classes = class_map.n_classes();
    let previous = layout.latest_iteration()?;
    let i = previous.map_or(0, |p| p + 1);

    let mut slides = Vec::new();
    for entry in layout.slides()? {
        let xml = layout.region_xml(&entry.stem);
        if xml.is_file() {
            let doc = read_annotations::<f64>(&xml)?;
            slides.push((entry, doc));
        }
    }
    if slides.is_empty() {
        return Err(CliError::data(
            "no annotated slides: put slides in WSI/ and their annotation XML (same file stem) in REGIONS/",
        ));
    }

    // Leftovers of an interrupted run carry no model and are rebuilt.
    let staged_training = layout.training().join(format!(".partial-{i}"));
    let staged_models = layout.models().join(format!(".partial-{i}"));
    for p in [&staged_training, &staged_models, &layout.training_iter(i)] {
        remove_if_present(p)?;
    }

    let seed = config.seed.wrapping_add(i as u64);
    let mut scales = vec![(HIGHRES, 1)];
    if !one_network {
        scales.push((LOWRES, config.lowres_factor));
    }
    let warm_dir = match previous {
        Some(p) => layout.model_iter(p),
        None => layout.transfer(),
    };

    let mut pairs = Vec::new();
    for &(name, scale) in &scales {
        let dir = staged_training.join(name);
        let n = build_training_set(&slides, &class_map, config, scale, seed, &dir)?;
        pairs.push(n);
        let warm = saved_backend(&warm_dir, name, n_classes, scale)?;
        let warm_started = warm.is_some();
        let mut backend = match warm {
            Some(b) => b,
            None => fresh_backend(config, n_classes, scale)?,
        };
        let data = TrainingSet::load_dir(&dir, scale)?;
        backend.train(&data, config.epochs, seed)?;
        backend.save(&staged_models, name)?;
        say(
            out,
            format!(
                "iteration {i}: trained {name} ({} backend, scale {scale}) on {n} pairs{}",
                backend.kind(),
                if warm_started { ", warm-started" } else { "" }
            ),
        );
    }
    // A missing low-resolution model marks a single-network iteration.
    fs::rename(&staged_training, layout.training_iter(i)).map_err(|e| io_err(&staged_training, e))?;
    fs::rename(&staged_models, layout.model_iter(i)).map_err(|e| io_err(&staged_models, e))?;
    say(out, format!("saved MODELS/{i}"));
    say(out, "upload new slides to WSI/ and run --option predict");
    Ok(TrainSummary {
        iteration: i,
        slides: slides.into_iter().map(|(e, _)| e.stem).collect(),
        highres_pairs: pairs[0],
        lowres_pairs: pairs.get(1).copied(),
    })
}

pub struct LoadedModels {
    pub iteration: u32,
    pub highres: Box<dyn SegmenterBackend>,
    pub lowres: Option<Box<dyn SegmenterBackend>>,
}

impl LoadedModels {
    pub fn load(layout: &ProjectLayout, config: &ProjectConfig, class_map: &ClassMap, i: u32) -> CliResult<Self> {
        let dir = layout.model_iter(i);
        let n = class_map.n_classes();
        let highres = saved_backend(&dir, HIGHRES, n, 1)?
            .ok_or_else(|| CliError::backend(format!("MODELS/{i} has no high-resolution model")))?;
        let lowres = saved_backend(&dir, LOWRES, n, config.lowres_factor)?;
        Ok(Self { iteration: i, highres, lowres })
    }

    /// Prediction mode, refusing deepzoom when no low-resolution model exists.
    pub fn mode(&self, one_network: bool) -> CliResult<PredictionMode> {
        if one_network {
            Ok(PredictionMode::Full)
        } else if self.lowres.is_some() {
            Ok(PredictionMode::DeepZoom)
        } else {
            Err(CliError::backend(format!(
                "MODELS/{} has no low-resolution model; pass --one_network true",
                self.iteration
            )))
        }
    }

    pub fn lowres(&self) -> Option<&dyn SegmenterBackend> {
        self.lowres.as_deref()
    }
}

pub fn latest_models(layout: &ProjectLayout, config: &ProjectConfig, class_map: &ClassMap) -> CliResult<LoadedModels> {
    let i = layout
        .latest_iteration()?
        .ok_or_else(|| CliError::data("no trained iteration in MODELS/; run --option train first"))?;
    LoadedModels::load(layout, config, class_map, i)
}

/// Predicts every slide in WSI/ that has no annotation XML yet. Returns the
/// written XML paths.
pub fn predict(
    layout: &ProjectLayout,
    config: &ProjectConfig,
    one_network: bool,
    out: &mut dyn Write,
) -> CliResult<Vec<PathBuf>> {
    let class_map = ClassMap::load(&layout.classmap())?;
    let models = latest_models(layout, config, &class_map)?;
    let mode = models.mode(one_network)?;
    let pending: Vec<SlideEntry> =
        layout.slides()?.into_iter().filter(|s| !layout.region_xml(&s.stem).is_file()).collect();
    if pending.is_empty() {
        say(out, "no un-annotated slides in WSI/; nothing to predict");
        return Ok(Vec::new());
    }
    let predict_config = config.predict(mode);
    let mut written = Vec::new();
    for entry in pending {
        let slide = SlideHandle::open(&entry.path)?;
        let (doc, p) =
            predict_slide::<f64>(&slide, models.lowres(), models.highres.as_ref(), &class_map, &predict_config)
                .map_err(|e| CliError::from(e).context(entry.path.display()))?;
        let path = layout.predictions().join(format!("{}.xml", entry.stem));
        write_annotations(&path, &doc)?;
        say(
            out,
            format!(
                "{}: {} regions, {} of {} high-res tiles evaluated ({:?}, iteration {})",
                entry.stem,
                doc.region_count(),
                p.stats.highres_evaluated,
                p.stats.highres_grid_tiles,
                mode,
                models.iteration
            ),
        );
        written.push(path);
    }
    say(out, "correct PREDICTIONS/*.xml in the viewer, move the corrected files to REGIONS/, then run --option train");
    Ok(written)
}
