//! Region access to large, optionally pyramidal, RGB slides.
//!
//! A [`SlideHandle`] keeps every decoded level in shared memory and serves
//! [`read_region`](SlideHandle::read_region) requests at any integer
//! downsample factor. Factors that are not stored in the file are produced by
//! an integer box filter (area mean, round-half-up) from the finest level that
//! divides both the factor and the request origin. Pixels outside the slide
//! read as white.

mod synthetic;

use std::fs;
use std::io::{BufWriter, Cursor};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, TiffEncoder};

use crate::error::{Error, Result};

pub use synthetic::{
    generate_synthetic_slide, render_synthetic_slide, sparse_slide_spec, ShapeGeometry, SparseLayout,
    SyntheticShape, SyntheticSlideSpec,
};

/// White, the fill for everything outside the scanned area.
pub const BACKGROUND_RGB: [u8; 3] = [255, 255, 255];

/// Row-major 8-bit RGB raster pinned to a slide-space window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageTile {
    /// Base-level pixel coordinates of the top-left pixel.
    pub origin: (u32, u32),
    /// Linear downsample factor relative to the base level.
    pub scale: u32,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl ImageTile {
    pub fn new(
        origin: (u32, u32),
        scale: u32,
        width: u32,
        height: u32,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} RGB tile needs {expected} bytes, got {}",
                width,
                height,
                pixels.len()
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
            pixels,
        })
    }

    pub fn filled(origin: (u32, u32), scale: u32, width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&rgb);
        }
        Self {
            origin,
            scale,
            width,
            height,
            pixels,
        }
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))
    }

    /// Loads an RGB PNG. Origin and scale are not stored in the file.
    pub fn load_png(path: &Path, origin: (u32, u32), scale: u32) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))?
            .into_rgb8();
        let (w, h) = img.dimensions();
        Self::new(origin, scale, w, h, img.into_raw())
    }
}

#[derive(Clone, Debug)]
struct Level {
    factor: u32,
    width: u32,
    height: u32,
    pixels: Arc<Vec<u8>>,
}

/// Read-only handle to a decoded slide. Cloning is cheap and handles may be
/// shared across threads.
#[derive(Clone, Debug)]
pub struct SlideHandle {
    path: Option<PathBuf>,
    width: u32,
    height: u32,
    levels: Vec<Level>,
}

/// Opens a flat or pyramidal TIFF, or a PNG.
pub fn open_slide(path: &Path) -> Result<SlideHandle> {
    SlideHandle::open(path)
}

impl SlideHandle {
    pub fn open(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut handle = Self::from_bytes(&bytes)
            .map_err(|e| match e {
                Error::UnsupportedFormat(m) => {
                    Error::UnsupportedFormat(format!("{}: {m}", path.display()))
                }
                other => other,
            })?;
        handle.path = Some(path.to_path_buf());
        Ok(handle)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
            let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
                .map_err(|e| Error::InvalidImage(e.to_string()))?
                .into_rgb8();
            let (w, h) = img.dimensions();
            return Self::from_rgb(w, h, img.into_raw());
        }
        if bytes.starts_with(b"II*\0")
            || bytes.starts_with(b"MM\0*")
            || bytes.starts_with(b"II+\0")
            || bytes.starts_with(b"MM\0+")
        {
            return decode_tiff(bytes);
        }
        Err(Error::UnsupportedFormat(
            "expected a TIFF or PNG file".to_string(),
        ))
    }

    /// Wraps an in-memory single-level RGB raster.
    pub fn from_rgb(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("zero-area image".into()));
        }
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width as usize * height as usize * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            path: None,
            width,
            height,
            levels: vec![Level {
                factor: 1,
                width,
                height,
                pixels: Arc::new(pixels),
            }],
        })
    }

    pub fn from_tile(tile: &ImageTile) -> Result<Self> {
        Self::from_rgb(tile.width, tile.height, tile.pixels.clone())
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Slide dimensions at a downsample factor, rounding partial pixels up.
    pub fn dimensions_at(&self, scale: u32) -> (u32, u32) {
        (self.width.div_ceil(scale), self.height.div_ceil(scale))
    }

    pub fn level_factors(&self) -> Vec<u32> {
        self.levels.iter().map(|l| l.factor).collect()
    }

    /// Reads `size` pixels at `scale`, starting at base-level `origin`.
    ///
    /// Output pixel `(i, j)` is the round-half-up mean of the base block
    /// `[x + s·i, x + s·(i+1)) × [y + s·j, y + s·(j+1))`, where base pixels
    /// outside the slide count as white.
    pub fn read_region(&self, origin: (u32, u32), size: (u32, u32), scale: u32) -> Result<ImageTile> {
        if scale == 0 {
            return Err(Error::ScaleNotAchievable(0));
        }
        let (w, h) = size;
        if w == 0 || h == 0 {
            return Err(Error::InvalidRegion(format!("empty region size {w}x{h}")));
        }
        let (x, y) = origin;
        let level = self
            .levels
            .iter()
            .rev()
            .find(|l| scale.is_multiple_of(l.factor) && x % l.factor == 0 && y % l.factor == 0)
            .ok_or(Error::ScaleNotAchievable(scale))?;
        let sub = scale / level.factor;
        let lx = (x / level.factor) as u64;
        let ly = (y / level.factor) as u64;

        let mut out = Vec::with_capacity(w as usize * h as usize * 3);
        if sub == 1 {
            for j in 0..h as u64 {
                copy_level_row(level, lx, ly + j, w as u64, &mut out);
            }
        } else {
            let n = (sub as u64) * (sub as u64);
            let mut sums = vec![0u64; w as usize * 3];
            for j in 0..h as u64 {
                sums.iter_mut().for_each(|s| *s = 0);
                for dy in 0..sub as u64 {
                    accumulate_level_row(level, lx, ly + j * sub as u64 + dy, w, sub, &mut sums);
                }
                out.extend(sums.iter().map(|&s| ((s + n / 2) / n) as u8));
            }
        }
        ImageTile::new(origin, scale, w, h, out)
    }

    /// The whole slide at a downsample factor.
    pub fn read_full(&self, scale: u32) -> Result<ImageTile> {
        let (w, h) = self.dimensions_at(scale.max(1));
        self.read_region((0, 0), (w, h), scale)
    }
}

fn copy_level_row(level: &Level, lx: u64, ly: u64, w: u64, out: &mut Vec<u8>) {
    let lw = level.width as u64;
    if ly >= level.height as u64 || lx >= lw {
        out.extend(std::iter::repeat_n(255u8, w as usize * 3));
        return;
    }
    let inside = w.min(lw - lx);
    let start = ((ly * lw + lx) * 3) as usize;
    out.extend_from_slice(&level.pixels[start..start + inside as usize * 3]);
    out.extend(std::iter::repeat_n(255u8, (w - inside) as usize * 3));
}

fn accumulate_level_row(level: &Level, lx: u64, ly: u64, w: u32, sub: u32, sums: &mut [u64]) {
    let lw = level.width as u64;
    let span = w as u64 * sub as u64;
    if ly >= level.height as u64 {
        sums.iter_mut().for_each(|s| *s += 255 * sub as u64);
        return;
    }
    let row = &level.pixels[(ly * lw * 3) as usize..((ly + 1) * lw * 3) as usize];
    for k in 0..span {
        let px = lx + k;
        let o = (k / sub as u64) as usize * 3;
        if px < lw {
            let i = px as usize * 3;
            sums[o] += row[i] as u64;
            sums[o + 1] += row[i + 1] as u64;
            sums[o + 2] += row[i + 2] as u64;
        } else {
            sums[o] += 255;
            sums[o + 1] += 255;
            sums[o + 2] += 255;
        }
    }
}

fn decode_tiff(bytes: &[u8]) -> Result<SlideHandle> {
    let tiff_err = |e: tiff::TiffError| Error::InvalidImage(format!("tiff: {e}"));
    let mut decoder = Decoder::new(Cursor::new(bytes))
        .map_err(|e| Error::UnsupportedFormat(format!("tiff: {e}")))?
        .with_limits(Limits::unlimited());

    let mut pages: Vec<(u32, u32, Vec<u8>)> = Vec::new();
    loop {
        let (w, h) = decoder.dimensions().map_err(tiff_err)?;
        let color = decoder.colortype().map_err(tiff_err)?;
        let decoded = decoder.read_image().map_err(tiff_err)?;
        match page_to_rgb(decoded, color, w, h) {
            Some(rgb) => pages.push((w, h, rgb)),
            None if pages.is_empty() => {
                return Err(Error::UnsupportedFormat(format!(
                    "tiff base page has unsupported color type {color:?}"
                )))
            }
            None => {}
        }
        if !decoder.more_images() {
            break;
        }
        decoder.next_image().map_err(tiff_err)?;
    }

    let (bw, bh, base) = pages.remove(0);
    let mut handle = SlideHandle::from_rgb(bw, bh, base)?;
    for (w, h, pixels) in pages {
        // Pages that are not an integer reduction of the base (labels,
        // thumbnails with odd aspect) are not pyramid levels.
        let factor = (bw as f64 / w as f64).round() as u32;
        if factor <= 1 || bw.div_ceil(factor) != w || bh.div_ceil(factor) != h {
            continue;
        }
        if handle.levels.iter().any(|l| l.factor == factor) {
            continue;
        }
        handle.levels.push(Level {
            factor,
            width: w,
            height: h,
            pixels: Arc::new(pixels),
        });
    }
    handle.levels.sort_by_key(|l| l.factor);
    Ok(handle)
}

fn page_to_rgb(decoded: DecodingResult, color: tiff::ColorType, w: u32, h: u32) -> Option<Vec<u8>> {
    let DecodingResult::U8(data) = decoded else {
        return None;
    };
    let n = w as usize * h as usize;
    match color {
        tiff::ColorType::RGB(8) => Some(data),
        tiff::ColorType::RGBA(8) => Some(
            data.chunks_exact(4)
                .take(n)
                .flat_map(|p| [p[0], p[1], p[2]])
                .collect(),
        ),
        tiff::ColorType::Gray(8) => Some(data.iter().take(n).flat_map(|&g| [g, g, g]).collect()),
        _ => None,
    }
}

/// Writes a single-page RGB TIFF.
pub fn write_tiff(path: &Path, tile: &ImageTile) -> Result<()> {
    write_pyramid_tiff(path, tile, &[1])
}

/// Writes a multi-page RGB TIFF with one page per downsample factor.
/// Reduced pages are produced with the same box filter `read_region` uses.
pub fn write_pyramid_tiff(path: &Path, base: &ImageTile, factors: &[u32]) -> Result<()> {
    if factors.first() != Some(&1) || factors.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!(
            "pyramid factors must be ascending and start at 1, got {factors:?}"
        )));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder =
        TiffEncoder::new(BufWriter::new(file)).map_err(|e| Error::InvalidImage(e.to_string()))?;
    let handle = SlideHandle::from_tile(base)?;
    for &factor in factors {
        let level = if factor == 1 {
            base.clone()
        } else {
            handle.read_full(factor)?
        };
        encoder
            .write_image::<colortype::RGB8>(level.width, level.height, &level.pixels)
            .map_err(|e| Error::InvalidImage(e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32) -> ImageTile {
        let mut t = ImageTile::filled((0, 0), 1, w, h, [0, 0, 0]);
        for y in 0..h {
            for x in 0..w {
                t.set_pixel(x, y, [(x * 7 % 256) as u8, (y * 3 % 256) as u8, ((x + y) % 256) as u8]);
            }
        }
        t
    }

    #[test]
    fn flat_tiff_reports_single_level() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("flat.tif");
        write_tiff(&p, &gradient(1000, 1000)).unwrap();
        let h = open_slide(&p).unwrap();
        assert_eq!(h.dimensions(), (1000, 1000));
        assert_eq!(h.level_factors(), vec![1]);
    }

    #[test]
    fn pyramid_tiff_reports_levels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pyr.tif");
        write_pyramid_tiff(&p, &gradient(300, 200), &[1, 4, 16]).unwrap();
        let h = open_slide(&p).unwrap();
        assert_eq!(h.level_factors(), vec![1, 4, 16]);
        // A stored level is served directly.
        let lvl = h.read_region((0, 0), (19, 13), 16).unwrap();
        assert_eq!((lvl.width, lvl.height), (19, 13));
    }

    #[test]
    fn empty_file_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.tif");
        fs::write(&p, b"").unwrap();
        let err = open_slide(&p).unwrap_err();
        assert!(err.to_string().contains("unsupported format"), "{err}");
    }

    #[test]
    fn png_slides_open() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.png");
        gradient(40, 30).save_png(&p).unwrap();
        let h = open_slide(&p).unwrap();
        assert_eq!(h.dimensions(), (40, 30));
        assert_eq!(h.read_full(1).unwrap().pixels, gradient(40, 30).pixels);
    }

    #[test]
    fn identity_crop() {
        let img = gradient(1000, 1000);
        let h = SlideHandle::from_tile(&img).unwrap();
        let t = h.read_region((0, 0), (500, 500), 1).unwrap();
        for y in [0, 17, 499] {
            for x in [0, 250, 499] {
                assert_eq!(t.pixel(x, y), img.pixel(x, y));
            }
        }
    }

    #[test]
    fn boundary_padding_is_white() {
        let img = gradient(1000, 1000);
        let h = SlideHandle::from_tile(&img).unwrap();
        let t = h.read_region((960, 960), (100, 100), 1).unwrap();
        assert_eq!(t.pixel(39, 39), img.pixel(999, 999));
        assert_eq!(t.pixel(40, 0), BACKGROUND_RGB);
        assert_eq!(t.pixel(0, 40), BACKGROUND_RGB);
        let content = (0..100)
            .flat_map(|y| (0..100).map(move |x| (x, y)))
            .filter(|&(x, y)| x < 40 && y < 40)
            .count();
        assert_eq!(content, 1600);
    }

    #[test]
    fn solid_slide_downsamples_to_solid() {
        let c = [201, 13, 77];
        let h = SlideHandle::from_tile(&ImageTile::filled((0, 0), 1, 1024, 1024, c)).unwrap();
        let t = h.read_region((0, 0), (64, 64), 16).unwrap();
        assert!(t.pixels.chunks(3).all(|p| p == c));
    }

    #[test]
    fn block_mean_rounds_half_up() {
        // 2x2 block with channel sums 0+0+1+1 = 2 -> mean 0.5 -> 1.
        let mut img = ImageTile::filled((0, 0), 1, 2, 2, [0, 0, 0]);
        img.set_pixel(0, 1, [1, 1, 1]);
        img.set_pixel(1, 1, [1, 1, 1]);
        let h = SlideHandle::from_tile(&img).unwrap();
        assert_eq!(h.read_region((0, 0), (1, 1), 2).unwrap().pixel(0, 0), [1, 1, 1]);
    }

    #[test]
    fn zero_scale_and_empty_size_are_rejected() {
        let h = SlideHandle::from_tile(&gradient(10, 10)).unwrap();
        assert!(matches!(h.read_region((0, 0), (4, 4), 0), Err(Error::ScaleNotAchievable(0))));
        assert!(matches!(h.read_region((0, 0), (0, 4), 1), Err(Error::InvalidRegion(_))));
    }
}
