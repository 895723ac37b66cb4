use std::path::Path;
use std::sync::Arc;

use super::{SegmenterBackend, TrainingSet};
use crate::annotations::{AnnotationDocument, ClassMap};
use crate::error::{Error, Result};
use crate::raster::{rasterize_window, MaskTile, Window};
use crate::slide_io::ImageTile;

/// Oracle backend that answers every tile with the rasterized ground truth
/// of a known annotation document. Used to test the prediction machinery in
/// isolation from any classifier.
#[derive(Clone, Debug)]
pub struct TruthBackend {
    doc: Arc<AnnotationDocument>,
    map: Arc<ClassMap>,
    scale: u32,
}

impl TruthBackend {
    pub const KIND: &'static str = "truth";

    pub fn new(doc: AnnotationDocument, map: ClassMap, scale: u32) -> Self {
        Self {
            doc: Arc::new(doc),
            map: Arc::new(map),
            scale,
        }
    }

    /// Same truth, another operating scale.
    pub fn at_scale(&self, scale: u32) -> Self {
        Self { scale, ..self.clone() }
    }
}

impl SegmenterBackend for TruthBackend {
    fn kind(&self) -> &'static str {
        Self::KIND
    }

    fn n_classes(&self) -> u8 {
        self.map.n_classes()
    }

    fn scale(&self) -> u32 {
        self.scale
    }

    fn predict(&self, tile: &ImageTile) -> Result<MaskTile> {
        if tile.scale != self.scale {
            return Err(Error::ScaleMismatch { expected: self.scale, found: tile.scale });
        }
        rasterize_window(&self.doc, &self.map, &Window::new(tile.origin, (tile.width, tile.height), tile.scale))
    }

    fn train(&mut self, _data: &TrainingSet, _budget: u32, _seed: u64) -> Result<()> {
        Ok(())
    }

    fn save(&self, _dir: &Path, _name: &str) -> Result<()> {
        Err(Error::Backend("the truth oracle cannot be persisted".into()))
    }
}
