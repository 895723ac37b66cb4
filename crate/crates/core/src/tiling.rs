//! Overlapping tile plans and majority-vote stitching.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{MaskTile, Window};

pub const DEFAULT_TILE_SIZE: u32 = 500;
pub const DEFAULT_OVERLAP: f64 = 0.5;

/// Row-major plan of tile windows over one slide level.
#[derive(Clone, Debug, PartialEq)]
pub struct TileGrid {
    /// Slide size in pixels at `scale`.
    pub dims: (u32, u32),
    pub tile_size: u32,
    pub overlap_fraction: f64,
    pub scale: u32,
    pub stride: u32,
    pub windows: Vec<Window>,
    x_starts: Vec<u32>,
    y_starts: Vec<u32>,
    index: HashMap<Window, usize>,
}

/// Tile starts along one axis: `0, stride, 2·stride, …`, with the last start
/// clamped to `dim − tile`.
fn starts(dim: u32, tile: u32, stride: u32) -> Vec<u32> {
    if dim <= tile {
        return vec![0];
    }
    let mut out = Vec::new();
    let mut s = 0;
    loop {
        out.push(s);
        if s + tile >= dim {
            break;
        }
        s = (s + stride).min(dim - tile);
    }
    out
}

/// Plans tiles over a slide whose base-level size is `dims`, at downsample
/// factor `scale`. Window origins are base-level; sizes are at `scale`.
pub fn plan_tiles(dims: (u32, u32), tile_size: u32, overlap_fraction: f64, scale: u32) -> Result<TileGrid> {
    if dims.0 == 0 || dims.1 == 0 {
        return Err(Error::Tiling(format!("zero-area slide {}x{}", dims.0, dims.1)));
    }
    if tile_size == 0 {
        return Err(Error::Tiling("tile size must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::Tiling(format!("overlap fraction {overlap_fraction} outside [0, 1)")));
    }
    if scale == 0 {
        return Err(Error::ScaleNotAchievable(0));
    }
    let level = (dims.0.div_ceil(scale), dims.1.div_ceil(scale));
    let stride = ((tile_size as f64 * (1.0 - overlap_fraction)).round() as u32).max(1);
    let x_starts = starts(level.0, tile_size, stride);
    let y_starts = starts(level.1, tile_size, stride);
    let (tw, th) = (tile_size.min(level.0), tile_size.min(level.1));
    let windows: Vec<Window> = y_starts
        .iter()
        .flat_map(|&y| x_starts.iter().map(move |&x| Window::new((x * scale, y * scale), (tw, th), scale)))
        .collect();
    let index = windows.iter().enumerate().map(|(i, w)| (*w, i)).collect();
    Ok(TileGrid {
        dims: level,
        tile_size,
        overlap_fraction,
        scale,
        stride,
        windows,
        x_starts,
        y_starts,
        index,
    })
}

impl TileGrid {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn x_starts(&self) -> &[u32] {
        &self.x_starts
    }

    pub fn y_starts(&self) -> &[u32] {
        &self.y_starts
    }

    pub fn index_of(&self, window: &Window) -> Option<usize> {
        self.index.get(window).copied()
    }

    /// The whole level as one window.
    pub fn extent(&self) -> Window {
        Window::new((0, 0), self.dims, self.scale)
    }
}

/// Per-pixel, per-class vote counts over a window.
#[derive(Clone, Debug)]
pub struct StitchAccumulator {
    window: Window,
    n_classes: usize,
    votes: Vec<u32>,
}

impl StitchAccumulator {
    pub fn new(window: Window, n_classes: u8) -> Self {
        let n = n_classes.max(1) as usize;
        Self {
            window,
            n_classes: n,
            votes: vec![0; window.pixel_count() * n],
        }
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    /// Adds one vote per pixel of `tile` that falls inside the window.
    pub fn add(&mut self, tile: &MaskTile) -> Result<()> {
        self.add_at(tile.origin, tile)
    }

    fn add_at(&mut self, origin: (u32, u32), tile: &MaskTile) -> Result<()> {
        let s = self.window.scale;
        let (wx, wy) = self.window.origin;
        let (tx, ty) = origin;
        let aligned = tile.scale == s && tx.abs_diff(wx) % s == 0 && ty.abs_diff(wy) % s == 0;
        if !aligned {
            return Err(Error::DimensionMismatch(format!(
                "tile at {origin:?} scale {} is not aligned with accumulator at {:?} scale {s}",
                tile.scale, self.window.origin
            )));
        }
        if let Some(&bad) = tile.values.iter().find(|&&v| v as usize >= self.n_classes) {
            return Err(Error::ClassSpaceMismatch(format!(
                "prediction contains class {bad} but only {} classes are stitched",
                self.n_classes
            )));
        }
        // Tile pixel offsets relative to the window, in level pixels.
        let dx = (tx as i64 - wx as i64) / s as i64;
        let dy = (ty as i64 - wy as i64) / s as i64;
        let (ww, wh) = (self.window.size.0 as i64, self.window.size.1 as i64);
        let x0 = dx.max(0);
        let x1 = (dx + tile.width as i64).min(ww);
        let y0 = dy.max(0);
        let y1 = (dy + tile.height as i64).min(wh);
        let n = self.n_classes;
        for y in y0..y1 {
            let src = (y - dy) * tile.width as i64 - dx;
            let dst = (y * ww) as usize;
            for x in x0..x1 {
                let c = tile.values[(src + x) as usize] as usize;
                self.votes[(dst + x as usize) * n + c] += 1;
            }
        }
        Ok(())
    }

    /// Per-pixel argmax; ties go to the lowest class index, so pixels with no
    /// votes are background.
    pub fn finish(self) -> MaskTile {
        let n = self.n_classes;
        let values = self
            .votes
            .chunks_exact(n)
            .map(|v| {
                let mut best = 0;
                for c in 1..n {
                    if v[c] > v[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        MaskTile {
            origin: self.window.origin,
            scale: self.window.scale,
            width: self.window.size.0,
            height: self.window.size.1,
            values,
        }
    }
}

/// Merges per-window predictions into a level-sized mask.
///
/// Accumulation runs in horizontal bands of `tile_size` rows, so memory is
/// bounded by one band per worker.
pub fn stitch(predictions: &[(Window, MaskTile)], grid: &TileGrid, n_classes: u8) -> Result<MaskTile> {
    for (window, mask) in predictions {
        if grid.index_of(window).is_none() {
            return Err(Error::Tiling(format!("window {window:?} is not part of the tile grid")));
        }
        if mask.width != window.size.0 || mask.height != window.size.1 || mask.scale != window.scale {
            return Err(Error::DimensionMismatch(format!(
                "prediction is {}x{} at scale {}, window is {}x{} at scale {}",
                mask.width, mask.height, mask.scale, window.size.0, window.size.1, window.scale
            )));
        }
    }
    let (w, h) = grid.dims;
    let s = grid.scale;
    let band = grid.tile_size.min(h).max(1);
    let bands: Vec<u32> = (0..h).step_by(band as usize).collect();
    let parts: Vec<MaskTile> = bands
        .par_iter()
        .map(|&y| {
            let bh = band.min(h - y);
            let window = Window::new((0, y * s), (w, bh), s);
            let (_, by0, _, by1) = window.base_extent();
            let mut acc = StitchAccumulator::new(window, n_classes);
            for (win, mask) in predictions {
                let (_, ty0, _, ty1) = win.base_extent();
                if ty0 < by1 && by0 < ty1 {
                    acc.add_at(win.origin, mask)?;
                }
            }
            Ok(acc.finish())
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(w as usize * h as usize);
    for p in parts {
        values.extend_from_slice(&p.values);
    }
    MaskTile::new((0, 0), s, w, h, values)
}
