use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;

use super::{check_prediction, BackendSidecar, SegmenterBackend, TrainingSet};
use crate::error::{Error, Result};
use crate::raster::MaskTile;
use crate::slide_io::ImageTile;

const MAGIC: &[u8; 4] = b"HCB1";
const VERSION: u32 = 1;

/// Nearest-centroid pixel classifier.
///
/// Training stores exact per-class color sums and pixel counts. Prediction
/// averages each pixel's color over a `(2r+1)²` window clipped to the tile
/// and picks the nearest class centroid. Exact distance ties go to
/// background, then to the class with more training pixels, then to the
/// lower index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CentroidBackend {
    n_classes: u8,
    scale: u32,
    radius: u32,
    sums: Vec<[u64; 3]>,
    counts: Vec<u64>,
}

#[derive(Default)]
struct Tally {
    sums: Vec<[u64; 3]>,
    counts: Vec<u64>,
}

impl Tally {
    fn new(n: usize) -> Self {
        Self { sums: vec![[0; 3]; n], counts: vec![0; n] }
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self
    }
}

impl CentroidBackend {
    pub const KIND: &'static str = "centroid";

    pub fn new(n_classes: u8, scale: u32) -> Self {
        Self::with_radius(n_classes, scale, 1)
    }

    pub fn with_radius(n_classes: u8, scale: u32, radius: u32) -> Self {
        let n = n_classes.max(2) as usize;
        Self {
            n_classes: n as u8,
            scale: scale.max(1),
            radius,
            sums: vec![[0; 3]; n],
            counts: vec![0; n],
        }
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn is_trained(&self) -> bool {
        self.counts.iter().any(|&c| c > 0)
    }

    /// Mean training color of `class`, if it was seen.
    pub fn centroid(&self, class: u8) -> Option<[f64; 3]> {
        let n = *self.counts.get(class as usize)?;
        if n == 0 {
            return None;
        }
        let s = self.sums[class as usize];
        Some([s[0] as f64 / n as f64, s[1] as f64 / n as f64, s[2] as f64 / n as f64])
    }

    /// Fraction of training pixels labeled `class`.
    pub fn prior(&self, class: u8) -> f64 {
        let total: u64 = self.counts.iter().sum();
        if total == 0 {
            return 0.0;
        }
        self.counts.get(class as usize).copied().unwrap_or(0) as f64 / total as f64
    }

    fn tally(&self, img: &ImageTile, msk: &MaskTile) -> Result<Tally> {
        let mut t = Tally::new(self.n_classes as usize);
        for (px, &c) in img.pixels.chunks_exact(3).zip(&msk.values) {
            if c >= self.n_classes {
                return Err(Error::ClassSpaceMismatch(format!(
                    "training mask contains class {c}, backend has {} classes",
                    self.n_classes
                )));
            }
            let s = &mut t.sums[c as usize];
            s[0] += px[0] as u64;
            s[1] += px[1] as u64;
            s[2] += px[2] as u64;
            t.counts[c as usize] += 1;
        }
        Ok(t)
    }

    pub fn load(dir: &Path, name: &str) -> Result<Self> {
        let sidecar = BackendSidecar::read(dir, name)?;
        if sidecar.kind != Self::KIND {
            return Err(Error::UnsupportedFormat(format!("expected a centroid backend, found {:?}", sidecar.kind)));
        }
        let path = dir.join(format!("{name}.bin"));
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let corrupt = |what: &str| Error::UnsupportedFormat(format!("{}: {what}", path.display()));
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let io = |_| corrupt("truncated state");
        let version = r.read_u32::<LittleEndian>().map_err(io)?;
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let n_classes = r.read_u8().map_err(io)?;
        let scale = r.read_u32::<LittleEndian>().map_err(io)?;
        let radius = r.read_u32::<LittleEndian>().map_err(io)?;
        if n_classes != sidecar.n_classes || scale != sidecar.scale {
            return Err(corrupt("state disagrees with sidecar"));
        }
        let mut backend = Self::with_radius(n_classes, scale, radius);
        for c in 0..backend.n_classes as usize {
            backend.counts[c] = r.read_u64::<LittleEndian>().map_err(io)?;
            for k in 0..3 {
                backend.sums[c][k] = r.read_u64::<LittleEndian>().map_err(io)?;
            }
        }
        if (r.position() as usize) != r.get_ref().len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(backend)
    }

    fn classify(&self, centroids: &[(u8, [f64; 3])], color: [f64; 3]) -> u8 {
        let mut best: Option<(f64, u8)> = None;
        for &(c, m) in centroids {
            let d = (0..3).map(|k| (color[k] - m[k]).powi(2)).sum::<f64>();
            let better = match best {
                None => true,
                Some((bd, bc)) => d < bd || (d == bd && self.wins_tie(c, bc)),
            };
            if better {
                best = Some((d, c));
            }
        }
        best.map_or(0, |(_, c)| c)
    }

    fn wins_tie(&self, c: u8, incumbent: u8) -> bool {
        if incumbent == 0 {
            return false;
        }
        if c == 0 {
            return true;
        }
        let (nc, ni) = (self.counts[c as usize], self.counts[incumbent as usize]);
        nc > ni || (nc == ni && c < incumbent)
    }
}

impl SegmenterBackend for CentroidBackend {
    fn kind(&self) -> &'static str {
        Self::KIND
    }

    fn n_classes(&self) -> u8 {
        self.n_classes
    }

    fn scale(&self) -> u32 {
        self.scale
    }

    fn predict(&self, tile: &ImageTile) -> Result<MaskTile> {
        if tile.scale != self.scale {
            return Err(Error::ScaleMismatch { expected: self.scale, found: tile.scale });
        }
        if !self.is_trained() {
            return Err(Error::Backend("centroid backend has not been trained".into()));
        }
        let centroids: Vec<(u8, [f64; 3])> =
            (0..self.n_classes).filter_map(|c| self.centroid(c).map(|m| (c, m))).collect();
        let (w, h) = (tile.width as usize, tile.height as usize);
        // Summed-area table per channel, (w+1)·(h+1) entries.
        let stride = w + 1;
        let mut sat = vec![[0u64; 3]; stride * (h + 1)];
        for y in 0..h {
            let mut row = [0u64; 3];
            for x in 0..w {
                let p = (y * w + x) * 3;
                for k in 0..3 {
                    row[k] += tile.pixels[p + k] as u64;
                    sat[(y + 1) * stride + x + 1][k] = sat[y * stride + x + 1][k] + row[k];
                }
            }
        }
        let r = self.radius as usize;
        let mut values = vec![0u8; w * h];
        values.par_chunks_mut(w.max(1)).enumerate().for_each(|(y, out)| {
            let y0 = y.saturating_sub(r);
            let y1 = (y + r + 1).min(h);
            for (x, v) in out.iter_mut().enumerate() {
                let x0 = x.saturating_sub(r);
                let x1 = (x + r + 1).min(w);
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                let mut color = [0f64; 3];
                for (k, c) in color.iter_mut().enumerate() {
                    let s = sat[y1 * stride + x1][k] + sat[y0 * stride + x0][k]
                        - sat[y0 * stride + x1][k]
                        - sat[y1 * stride + x0][k];
                    *c = s as f64 / n;
                }
                *v = self.classify(&centroids, color);
            }
        });
        let mask = MaskTile::new(tile.origin, tile.scale, tile.width, tile.height, values)?;
        check_prediction(tile, &mask, self.n_classes)?;
        Ok(mask)
    }

    /// Recomputes centroids and priors over all pairs; one pass suffices, so
    /// `budget` and `seed` only need to be valid.
    fn train(&mut self, data: &TrainingSet, budget: u32, _seed: u64) -> Result<()> {
        if data.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if budget == 0 {
            return Err(Error::InvalidArgument("training budget must be at least 1".into()));
        }
        if data.scale() != self.scale {
            return Err(Error::ScaleMismatch { expected: self.scale, found: data.scale() });
        }
        let n = self.n_classes as usize;
        let tally = (0..data.len())
            .into_par_iter()
            .map(|i| {
                let pair = data.pair(i)?;
                self.tally(&pair.0, &pair.1)
            })
            .try_reduce(|| Tally::new(n), |a, b| Ok(a.merge(b)))?;
        if tally.counts[1..].iter().all(|&c| c == 0) {
            return Err(Error::ClassSpaceMismatch("training data contains no foreground class".into()));
        }
        self.sums = tally.sums;
        self.counts = tally.counts;
        Ok(())
    }

    fn save(&self, dir: &Path, name: &str) -> Result<()> {
        let mut buf = Vec::with_capacity(17 + self.counts.len() * 32);
        buf.extend_from_slice(MAGIC);
        buf.write_u32::<LittleEndian>(VERSION).unwrap();
        buf.write_u8(self.n_classes).unwrap();
        buf.write_u32::<LittleEndian>(self.scale).unwrap();
        buf.write_u32::<LittleEndian>(self.radius).unwrap();
        for (count, sums) in self.counts.iter().zip(&self.sums) {
            buf.write_u64::<LittleEndian>(*count).unwrap();
            for s in sums {
                buf.write_u64::<LittleEndian>(*s).unwrap();
            }
        }
        BackendSidecar {
            kind: Self::KIND.into(),
            n_classes: self.n_classes,
            scale: self.scale,
            version: VERSION,
            radius: Some(self.radius),
            command: vec![],
        }
        .write(dir, name)?;
        let path = dir.join(format!("{name}.bin"));
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))
    }
}
