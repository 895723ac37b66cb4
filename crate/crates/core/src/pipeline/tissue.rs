use serde::{Deserialize, Serialize};

use crate::slide_io::ImageTile;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TissueParams {
    /// Pixels darker than this luminance are tissue.
    pub luminance_threshold: u8,
    /// Tiles with a smaller tissue fraction are skipped.
    pub min_fraction: f64,
}

impl Default for TissueParams {
    fn default() -> Self {
        Self {
            luminance_threshold: 224,
            min_fraction: 0.01,
        }
    }
}

impl TissueParams {
    pub fn apply(&self, tile: &ImageTile) -> TissueMask {
        tissue_mask(tile, self.luminance_threshold, self.min_fraction)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TissueMask {
    pub width: u32,
    pub height: u32,
    pub map: Vec<bool>,
    pub fraction: f64,
    pub keep: bool,
}

/// Rec. 601 luma, rounded.
fn luminance(p: &[u8]) -> u32 {
    (299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32 + 500) / 1000
}

/// Thresholds luminance, then applies a 3×3 opening followed by a 3×3
/// closing. Neighbors outside the tile are ignored by both operators.
pub fn tissue_mask(tile: &ImageTile, luminance_threshold: u8, min_tissue_fraction: f64) -> TissueMask {
    let (w, h) = (tile.width as usize, tile.height as usize);
    let raw: Vec<bool> = tile.pixels.chunks_exact(3).map(|p| luminance(p) < luminance_threshold as u32).collect();
    let opened = morph(&morph(&raw, w, h, false), w, h, true);
    let map = morph(&morph(&opened, w, h, true), w, h, false);
    let count = map.iter().filter(|&&t| t).count();
    let fraction = if map.is_empty() { 0.0 } else { count as f64 / map.len() as f64 };
    TissueMask {
        width: tile.width,
        height: tile.height,
        map,
        fraction,
        keep: count > 0 && fraction >= min_tissue_fraction,
    }
}

/// True if any pixel is darker than the threshold, before morphology.
pub(crate) fn any_tissue(tile: &ImageTile, luminance_threshold: u8) -> bool {
    tile.pixels.chunks_exact(3).any(|p| luminance(p) < luminance_threshold as u32)
}

/// 3×3 dilation (`grow`) or erosion, separable.
fn morph(src: &[bool], w: usize, h: usize, grow: bool) -> Vec<bool> {
    let pick = |a: bool, b: bool| if grow { a | b } else { a & b };
    let mut rows = vec![false; src.len()];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut v = row[x];
            if x > 0 {
                v = pick(v, row[x - 1]);
            }
            if x + 1 < w {
                v = pick(v, row[x + 1]);
            }
            rows[y * w + x] = v;
        }
    }
    let mut out = vec![false; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut v = rows[y * w + x];
            if y > 0 {
                v = pick(v, rows[(y - 1) * w + x]);
            }
            if y + 1 < h {
                v = pick(v, rows[(y + 1) * w + x]);
            }
            out[y * w + x] = v;
        }
    }
    out
}
