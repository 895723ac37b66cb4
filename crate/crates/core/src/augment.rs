//! Class-balanced augmentation of chopped training blocks.
//!
//! Every block gets a deterministic number of copies that grows with the
//! rarity of the rarest class it contains. Copy 0 is the block itself; the
//! other copies apply a randomly drawn list of [`AugmentOp`]s seeded from
//! `(seed, block index, copy index)`, so the output does not depend on how
//! the work is scheduled.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::MaskTile;
use crate::slide_io::{ImageTile, BACKGROUND_RGB};

/// Number of blocks containing at least one pixel of each class ≥ 1.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub counts: BTreeMap<u8, u64>,
}

impl ClassCounts {
    pub fn get(&self, class: u8) -> u64 {
        self.counts.get(&class).copied().unwrap_or(0)
    }

    pub fn max(&self) -> u64 {
        self.counts.values().copied().max().unwrap_or(0)
    }

    pub fn min(&self) -> u64 {
        self.counts.values().copied().min().unwrap_or(0)
    }
}

fn classes_present(mask: &MaskTile) -> Vec<u8> {
    let mut seen = [false; 256];
    for &v in &mask.values {
        seen[v as usize] = true;
    }
    (1..=255u8).filter(|&c| seen[c as usize]).collect()
}

pub fn tabulate_classes<'a>(blocks: impl IntoIterator<Item = &'a MaskTile>) -> ClassCounts {
    let mut counts = ClassCounts::default();
    for block in blocks {
        for c in classes_present(block) {
            *counts.counts.entry(c).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentationPlan {
    /// Copies per block, including the unmodified copy 0.
    pub copies: Vec<u32>,
    pub base: u32,
    pub cap: u32,
    pub seed: u64,
}

impl AugmentationPlan {
    pub fn total(&self) -> u64 {
        self.copies.iter().map(|&c| c as u64).sum()
    }
}

/// Copies for a block are `min(⌊base · max / rarest⌋, cap)`, where
/// `rarest` is the smallest count among the classes in the block; blocks with
/// only background get `base`. The cap defaults to `4 · base`.
pub fn plan_balanced_augmentation(
    counts: &ClassCounts,
    base: u32,
    blocks: &[MaskTile],
    seed: u64,
) -> Result<AugmentationPlan> {
    plan_balanced_augmentation_capped(counts, base, base.saturating_mul(4), blocks, seed)
}

pub fn plan_balanced_augmentation_capped(
    counts: &ClassCounts,
    base: u32,
    cap: u32,
    blocks: &[MaskTile],
    seed: u64,
) -> Result<AugmentationPlan> {
    if base == 0 {
        return Err(Error::InvalidArgument("augmentation base must be at least 1".into()));
    }
    let cap = cap.max(base);
    let max = counts.max();
    let copies = blocks
        .iter()
        .map(|b| {
            let rarest = classes_present(b).into_iter().map(|c| counts.get(c)).filter(|&n| n > 0).min();
            match rarest {
                None => base,
                Some(r) => {
                    let num = base as u64 * max;
                    // Rounding down keeps every class at ≤ base·max copies in
                    // total, so balancing never widens the class ratio.
                    (num / r).clamp(1, cap as u64) as u32
                }
            }
        })
        .collect();
    Ok(AugmentationPlan {
        copies,
        base,
        cap,
        seed,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum AugmentOp {
    FlipH,
    FlipV,
    /// Hue rotation in degrees.
    HueShift { degrees: f64 },
    /// Offset added to HSL lightness (range 0..1).
    LightnessShift { amount: f64 },
    /// Warp by a `grid × grid` control lattice whose nodes move by up to
    /// `max_displacement` pixels per axis, drawn from the seed.
    PiecewiseAffine { grid: u32, max_displacement: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub flip_probability: f64,
    pub hue_degrees: f64,
    pub lightness: f64,
    pub warp_probability: f64,
    pub warp_grid: u32,
    pub warp_displacement: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_probability: 0.5,
            hue_degrees: 10.0,
            lightness: 0.08,
            warp_probability: 0.5,
            warp_grid: 4,
            warp_displacement: 5.0,
        }
    }
}

impl AugmentConfig {
    pub fn sample_ops<R: Rng>(&self, rng: &mut R) -> Vec<AugmentOp> {
        let mut ops = Vec::new();
        if rng.random_bool(self.flip_probability) {
            ops.push(AugmentOp::FlipH);
        }
        if rng.random_bool(self.flip_probability) {
            ops.push(AugmentOp::FlipV);
        }
        let h = self.hue_degrees.abs();
        ops.push(AugmentOp::HueShift {
            degrees: if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 },
        });
        let l = self.lightness.abs();
        ops.push(AugmentOp::LightnessShift {
            amount: if l > 0.0 { rng.random_range(-l..=l) } else { 0.0 },
        });
        if rng.random_bool(self.warp_probability) {
            ops.push(AugmentOp::PiecewiseAffine {
                grid: self.warp_grid,
                max_displacement: self.warp_displacement,
            });
        }
        ops
    }
}

/// Applies `ops` in order. Geometric ops move image and mask together (mask
/// by nearest neighbor); color ops touch the image only.
pub fn apply_augmentation(
    image: &ImageTile,
    mask: &MaskTile,
    ops: &[AugmentOp],
    seed: u64,
) -> Result<(ImageTile, MaskTile)> {
    if image.width != mask.width || image.height != mask.height {
        return Err(Error::DimensionMismatch(format!(
            "image is {}x{}, mask is {}x{}",
            image.width, image.height, mask.width, mask.height
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = image.clone();
    let mut msk = mask.clone();
    for op in ops {
        match *op {
            AugmentOp::FlipH => {
                flip(&mut img.pixels, img.width as usize, img.height as usize, 3, true);
                flip(&mut msk.values, msk.width as usize, msk.height as usize, 1, true);
            }
            AugmentOp::FlipV => {
                flip(&mut img.pixels, img.width as usize, img.height as usize, 3, false);
                flip(&mut msk.values, msk.width as usize, msk.height as usize, 1, false);
            }
            AugmentOp::HueShift { degrees } => {
                if degrees != 0.0 {
                    map_hsl(&mut img, |h, s, l| ((h + degrees / 360.0).rem_euclid(1.0), s, l));
                }
            }
            AugmentOp::LightnessShift { amount } => {
                if amount != 0.0 {
                    map_hsl(&mut img, |h, s, l| (h, s, (l + amount).clamp(0.0, 1.0)));
                }
            }
            AugmentOp::PiecewiseAffine { grid, max_displacement } => {
                (img, msk) = piecewise_affine(&img, &msk, grid.max(2), max_displacement, &mut rng);
            }
        }
    }
    Ok((img, msk))
}

fn flip(data: &mut [u8], w: usize, h: usize, ch: usize, horizontal: bool) {
    if horizontal {
        for row in data.chunks_exact_mut(w * ch) {
            for x in 0..w / 2 {
                for c in 0..ch {
                    row.swap(x * ch + c, (w - 1 - x) * ch + c);
                }
            }
        }
    } else {
        let stride = w * ch;
        for y in 0..h / 2 {
            let (top, bottom) = data.split_at_mut((h - 1 - y) * stride);
            top[y * stride..(y + 1) * stride].swap_with_slice(&mut bottom[..stride]);
        }
    }
}

fn map_hsl(img: &mut ImageTile, f: impl Fn(f64, f64, f64) -> (f64, f64, f64)) {
    for px in img.pixels.chunks_exact_mut(3) {
        let (h, s, l) = rgb_to_hsl([px[0], px[1], px[2]]);
        let (h, s, l) = f(h, s, l);
        px.copy_from_slice(&hsl_to_rgb(h, s, l));
    }
}

/// RGB to HSL with all components in 0..1.
pub fn rgb_to_hsl(rgb: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let l = (max + min) / 2.0;
    let d = max - min;
    if d == 0.0 {
        return (0.0, 0.0, l);
    }
    let s = d / (1.0 - (2.0 * l - 1.0).abs());
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    (h / 6.0, s, l)
}

pub fn hsl_to_rgb(h: f64, s: f64, l: f64) -> [u8; 3] {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h.rem_euclid(1.0) * 6.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    [r, g, b].map(|v| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

fn piecewise_affine<R: Rng>(
    img: &ImageTile,
    msk: &MaskTile,
    k: u32,
    d: f64,
    rng: &mut R,
) -> (ImageTile, MaskTile) {
    let (w, h) = (img.width as usize, img.height as usize);
    let k = k as usize;
    let d = d.abs();
    let disp: Vec<(f64, f64)> = (0..k * k)
        .map(|_| {
            if d > 0.0 {
                (rng.random_range(-d..=d), rng.random_range(-d..=d))
            } else {
                (0.0, 0.0)
            }
        })
        .collect();
    let cw = (w.max(2) - 1) as f64 / (k - 1) as f64;
    let ch = (h.max(2) - 1) as f64 / (k - 1) as f64;

    let mut out_img = ImageTile::filled(img.origin, img.scale, img.width, img.height, BACKGROUND_RGB);
    let mut out_msk = MaskTile {
        values: vec![0; w * h],
        ..msk.clone()
    };
    for y in 0..h {
        for x in 0..w {
            // Output lattice is regular; each cell is split along its
            // main diagonal and displacements are interpolated
            // barycentrically to find the source point.
            let gx = (x as f64 / cw).min((k - 1) as f64 - 1e-9);
            let gy = (y as f64 / ch).min((k - 1) as f64 - 1e-9);
            let (i, j) = (gx as usize, gy as usize);
            let (u, v) = (gx - i as f64, gy - j as f64);
            let n = |a: usize, b: usize| disp[b * k + a];
            let (p00, p10, p01, p11) = (n(i, j), n(i + 1, j), n(i, j + 1), n(i + 1, j + 1));
            let (dx, dy) = if u >= v {
                (
                    p00.0 + u * (p10.0 - p00.0) + v * (p11.0 - p10.0),
                    p00.1 + u * (p10.1 - p00.1) + v * (p11.1 - p10.1),
                )
            } else {
                (
                    p00.0 + v * (p01.0 - p00.0) + u * (p11.0 - p01.0),
                    p00.1 + v * (p01.1 - p00.1) + u * (p11.1 - p01.1),
                )
            };
            let (sx, sy) = (x as f64 + dx, y as f64 + dy);
            out_img.set_pixel(x as u32, y as u32, sample_bilinear(img, sx, sy));
            let (nx, ny) = (sx.round(), sy.round());
            if nx >= 0.0 && ny >= 0.0 && (nx as usize) < w && (ny as usize) < h {
                out_msk.values[y * w + x] = msk.values[ny as usize * w + nx as usize];
            }
        }
    }
    (out_img, out_msk)
}

fn sample_bilinear(img: &ImageTile, x: f64, y: f64) -> [u8; 3] {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let get = |xi: f64, yi: f64| -> [f64; 3] {
        if xi < 0.0 || yi < 0.0 || xi >= img.width as f64 || yi >= img.height as f64 {
            BACKGROUND_RGB.map(|c| c as f64)
        } else {
            img.pixel(xi as u32, yi as u32).map(|c| c as f64)
        }
    };
    let (a, b, c, e) = (get(x0, y0), get(x0 + 1.0, y0), get(x0, y0 + 1.0), get(x0 + 1.0, y0 + 1.0));
    let mut out = [0u8; 3];
    for ch in 0..3 {
        let top = a[ch] + fx * (b[ch] - a[ch]);
        let bottom = c[ch] + fx * (e[ch] - c[ch]);
        out[ch] = (top + fy * (bottom - top)).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Stable per-copy seed from the global seed, block index and copy index.
pub fn copy_seed(seed: u64, block: u64, copy: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(splitmix(splitmix(seed) ^ block) ^ copy)
}

/// One chopped image/mask pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingBlock {
    pub slide: String,
    pub image: ImageTile,
    pub mask: MaskTile,
}

/// Produces copy `copy` of a block: the original for copy 0, otherwise a
/// seeded random augmentation.
pub fn augment_copy(
    block: &TrainingBlock,
    config: &AugmentConfig,
    seed: u64,
    block_index: u64,
    copy: u32,
) -> Result<(ImageTile, MaskTile)> {
    if copy == 0 {
        return Ok((block.image.clone(), block.mask.clone()));
    }
    let s = copy_seed(seed, block_index, copy as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(s);
    let ops = config.sample_ops(&mut rng);
    apply_augmentation(&block.image, &block.mask, &ops, rng.random())
}

pub fn pair_stem(slide: &str, origin: (u32, u32), copy: u32) -> String {
    format!("{slide}_{}_{}_{copy}", origin.0, origin.1)
}

/// Writes every planned copy as `<slide>_<x>_<y>_<copy>.{img,msk}.png` into
/// `dir`, plus a `plan.txt` manifest. Returns the number of pairs written.
pub fn write_augmented_set(
    dir: &Path,
    blocks: &[TrainingBlock],
    plan: &AugmentationPlan,
    config: &AugmentConfig,
) -> Result<u64> {
    if plan.copies.len() != blocks.len() {
        return Err(Error::InvalidArgument(format!(
            "plan covers {} blocks, {} given",
            plan.copies.len(),
            blocks.len()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let jobs: Vec<(usize, u32)> = plan
        .copies
        .iter()
        .enumerate()
        .flat_map(|(b, &n)| (0..n).map(move |c| (b, c)))
        .collect();
    jobs.par_iter().try_for_each(|&(b, c)| {
        let block = &blocks[b];
        let (img, msk) = augment_copy(block, config, plan.seed, b as u64, c)?;
        let stem = pair_stem(&block.slide, block.image.origin, c);
        img.save_png(&dir.join(format!("{stem}.img.png")))?;
        msk.save_png(&dir.join(format!("{stem}.msk.png")))
    })?;

    let mut manifest = format!("# base {} cap {} seed {}\n", plan.base, plan.cap, plan.seed);
    for (block, &n) in blocks.iter().zip(&plan.copies) {
        let classes: Vec<String> = classes_present(&block.mask).iter().map(u8::to_string).collect();
        writeln!(
            manifest,
            "{}\t{}\tclasses={}",
            pair_stem(&block.slide, block.image.origin, 0).trim_end_matches("_0"),
            n,
            classes.join(",")
        )
        .unwrap();
    }
    let path = dir.join("plan.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(jobs.len() as u64)
}
