use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_hotspot_map, check_prediction, HotspotParams, SegmenterBackend, TissueParams};
use crate::annotations::{AnnotationDocument, ClassMap};
use crate::error::{Error, Result};
use crate::raster::{mask_to_annotations, MaskTile, Window};
use crate::scalar::Scalar;
use crate::slide_io::{ImageTile, SlideHandle};
use crate::tiling::{plan_tiles, stitch, TileGrid, DEFAULT_OVERLAP, DEFAULT_TILE_SIZE};

/// Tiles read and predicted per batch.
const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionMode {
    #[default]
    DeepZoom,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    pub mode: PredictionMode,
    pub tile_size: u32,
    pub overlap: f64,
    pub tissue: TissueParams,
    pub hotspot: HotspotParams,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            mode: PredictionMode::DeepZoom,
            tile_size: DEFAULT_TILE_SIZE,
            overlap: DEFAULT_OVERLAP,
            tissue: TissueParams::default(),
            hotspot: HotspotParams::default(),
            workers: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionStats {
    pub mode: PredictionMode,
    /// Windows in the full-resolution grid.
    pub highres_grid_tiles: usize,
    /// Full-resolution windows considered (all of them in full mode).
    pub highres_candidates: usize,
    /// Full-resolution windows passed to the backend.
    pub highres_evaluated: usize,
    /// Candidates rejected by the tissue filter.
    pub highres_skipped: usize,
    pub lowres_grid_tiles: usize,
    pub lowres_evaluated: usize,
    pub hot_lowres_pixels: usize,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlidePrediction {
    pub mask: MaskTile,
    pub stats: PredictionStats,
}

/// Reads each window, drops those failing `gate` and predicts the
/// rest. Returns `(predictions, evaluated, skipped)` in window order.
/// Masks per evaluated window, then counts of evaluated and skipped windows.
pub(crate) type Evaluated = (Vec<(Window, MaskTile)>, usize, usize);

pub(crate) fn evaluate_windows(
    slide: &SlideHandle,
    backend: &dyn SegmenterBackend,
    windows: &[Window],
    gate: &(dyn Fn(&ImageTile) -> bool + Sync),
) -> Result<Evaluated> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for chunk in windows.chunks(CHUNK) {
        let read: Vec<Option<ImageTile>> = chunk
            .par_iter()
            .map(|w| {
                let tile = slide.read_region(w.origin, w.size, w.scale)?;
                Ok(gate(&tile).then_some(tile))
            })
            .collect::<Result<_>>()?;
        let (kept_windows, tiles): (Vec<Window>, Vec<ImageTile>) =
            chunk.iter().zip(read).filter_map(|(w, t)| t.map(|t| (*w, t))).unzip();
        skipped += chunk.len() - tiles.len();
        if tiles.is_empty() {
            continue;
        }
        let masks = backend.predict_batch(&tiles)?;
        if masks.len() != tiles.len() {
            return Err(Error::Backend(format!("{} tiles in, {} masks out", tiles.len(), masks.len())));
        }
        for ((w, t), m) in kept_windows.into_iter().zip(&tiles).zip(masks) {
            check_prediction(t, &m, backend.n_classes())?;
            out.push((w, m));
        }
    }
    let evaluated = out.len();
    Ok((out, evaluated, skipped))
}

fn highres_grid(slide: &SlideHandle, config: &PredictConfig) -> Result<TileGrid> {
    plan_tiles(slide.dimensions(), config.tile_size, config.overlap, 1)
}

fn run_mask(
    slide: &SlideHandle,
    lowres: Option<&dyn SegmenterBackend>,
    highres: &dyn SegmenterBackend,
    config: &PredictConfig,
) -> Result<SlidePrediction> {
    let start = Instant::now();
    if highres.scale() != 1 {
        return Err(Error::ScaleMismatch { expected: 1, found: highres.scale() });
    }
    let grid = highres_grid(slide, config)?;
    let mut stats = PredictionStats {
        mode: config.mode,
        highres_grid_tiles: grid.len(),
        ..Default::default()
    };
    let candidates = match config.mode {
        PredictionMode::Full => grid.windows.clone(),
        PredictionMode::DeepZoom => {
            let lowres = lowres.ok_or_else(|| Error::MissingBackend("deepzoom mode needs a low-resolution backend".into()))?;
            let lowres_grid = plan_tiles(slide.dimensions(), config.tile_size, config.overlap, config.hotspot.factor)?;
            let map = build_hotspot_map(slide, lowres, &lowres_grid, &grid, &config.tissue, &config.hotspot)?;
            stats.lowres_grid_tiles = lowres_grid.len();
            stats.lowres_evaluated = map.lowres_tiles_evaluated;
            stats.hot_lowres_pixels = map.hot_count();
            map.windows
        }
    };
    let gate = |t: &ImageTile| config.tissue.apply(t).keep;
    let (predictions, evaluated, skipped) = evaluate_windows(slide, highres, &candidates, &gate)?;
    stats.highres_candidates = candidates.len();
    stats.highres_evaluated = evaluated;
    stats.highres_skipped = skipped;
    let mask = stitch(&predictions, &grid, highres.n_classes())?;
    stats.seconds = start.elapsed().as_secs_f64();
    Ok(SlidePrediction { mask, stats })
}

/// Slide-level class mask at full resolution.
pub fn predict_slide_mask(
    slide: &SlideHandle,
    lowres: Option<&dyn SegmenterBackend>,
    highres: &dyn SegmenterBackend,
    config: &PredictConfig,
) -> Result<SlidePrediction> {
    if config.workers == 0 {
        return run_mask(slide, lowres, highres, config);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {} workers: {e}", config.workers)))?;
    pool.install(|| run_mask(slide, lowres, highres, config))
}

/// Predicts a slide and converts the mask into an annotation document.
pub fn predict_slide<T: Scalar>(
    slide: &SlideHandle,
    lowres: Option<&dyn SegmenterBackend>,
    highres: &dyn SegmenterBackend,
    class_map: &ClassMap,
    config: &PredictConfig,
) -> Result<(AnnotationDocument<T>, SlidePrediction)> {
    let prediction = predict_slide_mask(slide, lowres, highres, config)?;
    let doc = mask_to_annotations(&prediction.mask, class_map)?;
    Ok((doc, prediction))
}
