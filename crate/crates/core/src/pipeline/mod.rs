//! Prediction engine and the segmenter backend contract.
//!
//! A slide is predicted either by segmenting every tissue-bearing tile of the
//! full-resolution grid ([`PredictionMode::Full`]) or by first segmenting a
//! 1/16-scale copy, dilating the result into a hotspot map and segmenting
//! only the full-resolution tiles that touch it ([`PredictionMode::DeepZoom`]).

mod centroid;
mod chop;
mod external;
mod hotspot;
mod predict;
mod tissue;
mod truth;

use std::borrow::Cow;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use centroid::CentroidBackend;
pub use chop::chop_slide;
pub use external::{ExternalBackend, FilePair, Manifest};
pub use hotspot::{build_hotspot_map, derive_hotspot_windows, dilate_hotspots, HotspotMap, HotspotParams};
pub use predict::{
    predict_slide, predict_slide_mask, PredictConfig, PredictionMode, PredictionStats, SlidePrediction,
};
pub use tissue::{tissue_mask, TissueMask, TissueParams};
pub use truth::TruthBackend;

use crate::error::{Error, Result};
use crate::raster::MaskTile;
use crate::slide_io::ImageTile;

/// Scale of the low-resolution pass.
pub const LOWRES_FACTOR: u32 = 16;

/// A trainable per-pixel classifier operating at one fixed scale.
///
/// `predict` must return a mask with the tile's origin, scale and dims, and
/// must be deterministic for a given state. Implementations are shared
/// read-only across worker threads during prediction.
pub trait SegmenterBackend: Send + Sync {
    fn kind(&self) -> &'static str;

    fn n_classes(&self) -> u8;

    /// Downsample factor of the tiles this backend expects.
    fn scale(&self) -> u32;

    fn predict(&self, tile: &ImageTile) -> Result<MaskTile>;

    fn predict_batch(&self, tiles: &[ImageTile]) -> Result<Vec<MaskTile>> {
        tiles.par_iter().map(|t| self.predict(t)).collect()
    }

    /// Updates the state from `data`. `budget` counts passes over the data.
    fn train(&mut self, data: &TrainingSet, budget: u32, seed: u64) -> Result<()>;

    /// Writes `<name>.json` plus backend-specific state into `dir`.
    fn save(&self, dir: &Path, name: &str) -> Result<()>;
}

/// JSON sidecar written next to every saved backend.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendSidecar {
    pub kind: String,
    pub n_classes: u8,
    pub scale: u32,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub command: Vec<String>,
}

impl BackendSidecar {
    pub fn path(dir: &Path, name: &str) -> PathBuf {
        dir.join(format!("{name}.json"))
    }

    pub fn read(dir: &Path, name: &str) -> Result<Self> {
        let path = Self::path(dir, name);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, dir: &Path, name: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = Self::path(dir, name);
        let text = serde_json::to_string_pretty(self).expect("sidecar serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Restores a backend saved with [`SegmenterBackend::save`].
pub fn load_backend(dir: &Path, name: &str) -> Result<Box<dyn SegmenterBackend>> {
    let sidecar = BackendSidecar::read(dir, name)?;
    match sidecar.kind.as_str() {
        CentroidBackend::KIND => Ok(Box::new(CentroidBackend::load(dir, name)?)),
        ExternalBackend::KIND => Ok(Box::new(ExternalBackend::load(dir, name)?)),
        other => Err(Error::UnsupportedFormat(format!("unknown backend kind {other:?}"))),
    }
}

enum Pairs {
    Memory(Vec<(ImageTile, MaskTile)>),
    Files(Vec<(PathBuf, PathBuf)>),
}

/// Image/mask pairs at one scale, held in memory or read lazily from an
/// augmented pair directory.
pub struct TrainingSet {
    scale: u32,
    pairs: Pairs,
}

impl TrainingSet {
    pub fn from_pairs(scale: u32, pairs: Vec<(ImageTile, MaskTile)>) -> Result<Self> {
        for (img, msk) in &pairs {
            check_pair(img, msk)?;
        }
        Ok(Self { scale, pairs: Pairs::Memory(pairs) })
    }

    /// Collects `<stem>.img.png` / `<stem>.msk.png` pairs, ordered by stem.
    pub fn load_dir(dir: &Path, scale: u32) -> Result<Self> {
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut stems = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(stem) = name.strip_suffix(".img.png") {
                stems.push(stem.to_string());
            }
        }
        stems.sort();
        let mut files = Vec::with_capacity(stems.len());
        for stem in stems {
            let msk = dir.join(format!("{stem}.msk.png"));
            if !msk.is_file() {
                return Err(Error::InvalidArgument(format!("{}: image has no mask", msk.display())));
            }
            files.push((dir.join(format!("{stem}.img.png")), msk));
        }
        Ok(Self { scale, pairs: Pairs::Files(files) })
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn len(&self) -> usize {
        match &self.pairs {
            Pairs::Memory(v) => v.len(),
            Pairs::Files(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Backing files, when the set was loaded from disk.
    pub fn files(&self) -> Option<&[(PathBuf, PathBuf)]> {
        match &self.pairs {
            Pairs::Memory(_) => None,
            Pairs::Files(v) => Some(v),
        }
    }

    pub fn pair(&self, i: usize) -> Result<Cow<'_, (ImageTile, MaskTile)>> {
        match &self.pairs {
            Pairs::Memory(v) => Ok(Cow::Borrowed(&v[i])),
            Pairs::Files(v) => {
                let (ip, mp) = &v[i];
                let img = ImageTile::load_png(ip, (0, 0), self.scale)?;
                let msk = MaskTile::load_png(mp, (0, 0), self.scale)?;
                check_pair(&img, &msk)?;
                Ok(Cow::Owned((img, msk)))
            }
        }
    }
}

fn check_pair(img: &ImageTile, msk: &MaskTile) -> Result<()> {
    if img.width != msk.width || img.height != msk.height {
        return Err(Error::DimensionMismatch(format!(
            "image is {}x{}, mask is {}x{}",
            img.width, img.height, msk.width, msk.height
        )));
    }
    Ok(())
}

fn check_prediction(tile: &ImageTile, mask: &MaskTile, n_classes: u8) -> Result<()> {
    if (mask.width, mask.height, mask.scale, mask.origin) != (tile.width, tile.height, tile.scale, tile.origin) {
        return Err(Error::Backend(format!(
            "prediction is {}x{} at {:?} scale {}, tile is {}x{} at {:?} scale {}",
            mask.width, mask.height, mask.origin, mask.scale, tile.width, tile.height, tile.origin, tile.scale
        )));
    }
    if let Some(&c) = mask.values.iter().find(|&&c| c >= n_classes) {
        return Err(Error::Backend(format!("prediction contains class {c}, backend has {n_classes} classes")));
    }
    Ok(())
}
