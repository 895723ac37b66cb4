//! Indexed class masks and the conversion between masks and annotations.
//!
//! Pixel `(i, j)` of a mask with origin `o` and scale `s` stands for the base
//! pixel block starting at `o + s·(i, j)`; its center in base coordinates is
//! `o + s·(i, j) + (s − 1)/2`. Filling tests that center against region
//! polygons (boundary inclusive). Tracing emits polygons along pixel cracks,
//! which never pass through a pixel center, so tracing followed by filling
//! reproduces the mask exactly.

mod fill;
mod trace;

use std::path::Path;

use crate::error::{Error, Result};

pub use fill::{rasterize_window, rasterize_window_with, scan_polygon, UnboundPolicy};
pub use trace::{mask_to_annotations, trace_contours, Contour, ContourSet, Polarity};

/// A pixel window: base-level origin, size in pixels at `scale`, and scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Window {
    pub origin: (u32, u32),
    pub size: (u32, u32),
    pub scale: u32,
}

impl Window {
    pub const fn new(origin: (u32, u32), size: (u32, u32), scale: u32) -> Self {
        Self {
            origin,
            size,
            scale,
        }
    }

    pub fn width(&self) -> u32 {
        self.size.0
    }

    pub fn height(&self) -> u32 {
        self.size.1
    }

    pub fn pixel_count(&self) -> usize {
        self.size.0 as usize * self.size.1 as usize
    }

    /// Half-open base-level extent `[x0, x1) × [y0, y1)`.
    pub fn base_extent(&self) -> (u64, u64, u64, u64) {
        let s = self.scale as u64;
        let (x, y) = (self.origin.0 as u64, self.origin.1 as u64);
        (x, y, x + s * self.size.0 as u64, y + s * self.size.1 as u64)
    }

    /// Base-level center of pixel index `i` along x.
    #[inline]
    pub fn center_x(&self, i: i64) -> f64 {
        self.origin.0 as f64 + self.scale as f64 * i as f64 + (self.scale as f64 - 1.0) / 2.0
    }

    #[inline]
    pub fn center_y(&self, j: i64) -> f64 {
        self.origin.1 as f64 + self.scale as f64 * j as f64 + (self.scale as f64 - 1.0) / 2.0
    }
}

/// Row-major 8-bit class-index raster pinned to a slide window.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskTile {
    pub origin: (u32, u32),
    pub scale: u32,
    pub width: u32,
    pub height: u32,
    pub values: Vec<u8>,
}

impl MaskTile {
    pub fn new(origin: (u32, u32), scale: u32, width: u32, height: u32, values: Vec<u8>) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} mask needs {} values, got {}",
                width as usize * height as usize,
                values.len()
            )));
        }
        if scale == 0 {
            return Err(Error::ScaleNotAchievable(0));
        }
        Ok(Self {
            origin,
            scale,
            width,
            height,
            values,
        })
    }

    pub fn zeros(window: &Window) -> Self {
        Self {
            origin: window.origin,
            scale: window.scale,
            width: window.size.0,
            height: window.size.1,
            values: vec![0; window.pixel_count()],
        }
    }

    pub fn window(&self) -> Window {
        Window::new(self.origin, (self.width, self.height), self.scale)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.values[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn max_class(&self) -> u8 {
        self.values.iter().copied().max().unwrap_or(0)
    }

    pub fn is_background(&self) -> bool {
        self.values.iter().all(|&v| v == 0)
    }

    /// Sub-mask at pixel offset `(x, y)` of size `(w, h)`, same scale.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        if x + w > self.width || y + h > self.height {
            return Err(Error::InvalidRegion(format!(
                "crop {w}x{h}+{x}+{y} exceeds {}x{} mask",
                self.width, self.height
            )));
        }
        let mut values = Vec::with_capacity(w as usize * h as usize);
        for j in y..y + h {
            let row = j as usize * self.width as usize;
            values.extend_from_slice(&self.values[row + x as usize..row + (x + w) as usize]);
        }
        let s = self.scale;
        Ok(Self {
            origin: (self.origin.0 + s * x, self.origin.1 + s * y),
            scale: s,
            width: w,
            height: h,
            values,
        })
    }

    /// Restriction to `window`, which must be pixel-aligned with this mask.
    pub fn restrict(&self, window: &Window) -> Result<Self> {
        let s = self.scale;
        let aligned = window.scale == s
            && window.origin.0 >= self.origin.0
            && window.origin.1 >= self.origin.1
            && (window.origin.0 - self.origin.0).is_multiple_of(s)
            && (window.origin.1 - self.origin.1).is_multiple_of(s);
        if !aligned {
            return Err(Error::InvalidRegion(format!("{window:?} is not aligned with the mask")));
        }
        self.crop(
            (window.origin.0 - self.origin.0) / s,
            (window.origin.1 - self.origin.1) / s,
            window.size.0,
            window.size.1,
        )
    }

    /// Nearest-neighbor upsampling by an integer factor.
    pub fn upsample(&self, factor: u32) -> Result<Self> {
        if factor == 0 || !self.scale.is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!(
                "cannot upsample a scale-{} mask by {factor}",
                self.scale
            )));
        }
        let (w, h) = (self.width * factor, self.height * factor);
        let mut values = Vec::with_capacity(w as usize * h as usize);
        for y in 0..h {
            for x in 0..w {
                values.push(self.get(x / factor, y / factor));
            }
        }
        Ok(Self {
            origin: self.origin,
            scale: self.scale / factor,
            width: w,
            height: h,
            values,
        })
    }

    /// 8-bit single-channel PNG with the class index as the pixel value.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(path, &self.values, self.width, self.height, image::ExtendedColorType::L8)
            .map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))
    }

    pub fn load_png(path: &Path, origin: (u32, u32), scale: u32) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))?;
        if img.color() != image::ColorType::L8 {
            return Err(Error::InvalidImage(format!(
                "{}: mask must be 8-bit greyscale, found {:?}",
                path.display(),
                img.color()
            )));
        }
        let img = img.into_luma8();
        let (w, h) = img.dimensions();
        Self::new(origin, scale, w, h, img.into_raw())
    }
}
