use serde::{Deserialize, Serialize};

use super::predict::evaluate_windows;
use super::tissue::any_tissue;
use super::{SegmenterBackend, TissueParams};
use crate::error::{Error, Result};
use crate::raster::{MaskTile, Window};
use crate::slide_io::{ImageTile, SlideHandle};
use crate::tiling::{stitch, TileGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HotspotParams {
    /// Linear downsample factor of the low-resolution pass.
    pub factor: u32,
    /// Chebyshev dilation radius in low-resolution pixels.
    pub dilation: u32,
    /// Extra base pixels added around every hot low-resolution pixel.
    pub margin: u32,
}

impl Default for HotspotParams {
    fn default() -> Self {
        Self {
            factor: super::LOWRES_FACTOR,
            dilation: 1,
            margin: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HotspotMap {
    /// Stitched low-resolution class map.
    pub lowres: MaskTile,
    /// Dilated binary map (1 = hot).
    pub hot: MaskTile,
    /// Full-resolution grid windows that touch a hot pixel's base footprint.
    pub windows: Vec<Window>,
    pub dilation: u32,
    pub margin: u32,
    pub lowres_tiles_evaluated: usize,
}

impl HotspotMap {
    pub fn hot_count(&self) -> usize {
        self.hot.values.iter().filter(|&&v| v != 0).count()
    }
}

/// Binary map of pixels within Chebyshev distance `radius` of a non-zero
/// pixel.
pub fn dilate_hotspots(lowres: &MaskTile, radius: u32) -> MaskTile {
    let (w, h) = (lowres.width as usize, lowres.height as usize);
    let r = radius as usize;
    let mut rows = vec![0u8; w * h];
    for y in 0..h {
        // Distance to the nearest non-zero pixel along the row, both ways.
        let row = &lowres.values[y * w..(y + 1) * w];
        let mut last: Option<usize> = None;
        for x in 0..w {
            if row[x] != 0 {
                last = Some(x);
            }
            if last.is_some_and(|l| x - l <= r) {
                rows[y * w + x] = 1;
            }
        }
        last = None;
        for x in (0..w).rev() {
            if row[x] != 0 {
                last = Some(x);
            }
            if last.is_some_and(|l| l - x <= r) {
                rows[y * w + x] = 1;
            }
        }
    }
    let mut values = vec![0u8; w * h];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if rows[y * w + x] != 0 {
                last = Some(y);
            }
            if last.is_some_and(|l| y - l <= r) {
                values[y * w + x] = 1;
            }
        }
        last = None;
        for y in (0..h).rev() {
            if rows[y * w + x] != 0 {
                last = Some(y);
            }
            if last.is_some_and(|l| l - y <= r) {
                values[y * w + x] = 1;
            }
        }
    }
    MaskTile {
        origin: lowres.origin,
        scale: lowres.scale,
        width: lowres.width,
        height: lowres.height,
        values,
    }
}

/// Grid windows whose base extent intersects
/// `[f·i − m, f·(i+1) + m) × [f·j − m, f·(j+1) + m)` for some hot `(i, j)`,
/// in grid order.
pub fn derive_hotspot_windows(hot: &MaskTile, margin: u32, grid: &TileGrid) -> Vec<Window> {
    let f = hot.scale as i64;
    let m = margin as i64;
    let (w, h) = (hot.width as usize, hot.height as usize);
    // Inclusive-exclusive prefix sums of hot pixels.
    let mut prefix = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut run = 0;
        for x in 0..w {
            run += (hot.values[y * w + x] != 0) as u32;
            prefix[(y + 1) * (w + 1) + x + 1] = prefix[y * (w + 1) + x + 1] + run;
        }
    }
    // Low-res index range touched by base interval [a, b).
    let range = |a: i64, b: i64, n: usize| -> Option<(usize, usize)> {
        let lo = (a - m - f).div_euclid(f) + 1;
        let hi = (b + m + f - 1).div_euclid(f) - 1;
        let lo = lo.max(0);
        let hi = hi.min(n as i64 - 1);
        (lo <= hi).then_some((lo as usize, hi as usize + 1))
    };
    grid.windows
        .iter()
        .filter(|win| {
            let (x0, y0, x1, y1) = win.base_extent();
            let (Some((i0, i1)), Some((j0, j1))) = (range(x0 as i64, x1 as i64, w), range(y0 as i64, y1 as i64, h))
            else {
                return false;
            };
            let at = |x: usize, y: usize| prefix[y * (w + 1) + x];
            at(i1, j1) + at(i0, j0) - at(i0, j1) - at(i1, j0) > 0
        })
        .copied()
        .collect()
}

/// Low-resolution pass: segments every tissue-bearing tile of
/// `lowres_grid`, stitches, dilates and maps the hot set onto
/// `highres_grid`.
pub fn build_hotspot_map(
    slide: &SlideHandle,
    backend: &dyn SegmenterBackend,
    lowres_grid: &TileGrid,
    highres_grid: &TileGrid,
    tissue: &TissueParams,
    params: &HotspotParams,
) -> Result<HotspotMap> {
    if lowres_grid.scale != params.factor {
        return Err(Error::ScaleMismatch { expected: params.factor, found: lowres_grid.scale });
    }
    if backend.scale() != params.factor {
        return Err(Error::ScaleMismatch { expected: params.factor, found: backend.scale() });
    }
    // Morphology and the fraction gate would erase structures only a few
    // low-res pixels wide, so only blank tiles are skipped here.
    let threshold = tissue.luminance_threshold;
    let gate = |t: &ImageTile| any_tissue(t, threshold);
    let (predictions, evaluated, _) = evaluate_windows(slide, backend, &lowres_grid.windows, &gate)?;
    let lowres = stitch(&predictions, lowres_grid, backend.n_classes())?;
    let hot = dilate_hotspots(&lowres, params.dilation);
    let windows = derive_hotspot_windows(&hot, params.margin, highres_grid);
    Ok(HotspotMap {
        lowres,
        hot,
        windows,
        dilation: params.dilation,
        margin: params.margin,
        lowres_tiles_evaluated: evaluated,
    })
}
