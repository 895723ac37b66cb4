use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::num::NonZeroU8;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_tiff, ImageTile};
use crate::annotations::{
    write_annotations, AnnotationDocument, AnnotationLayer, LineColor, Region, Vertex,
};
use crate::error::{Error, Result};
use crate::raster::{scan_polygon, Window};

#[derive(Clone, Debug, PartialEq)]
pub enum ShapeGeometry {
    /// Axis-aligned ellipse, polygonized before rendering.
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Polygon(Vec<Vertex<f64>>),
}

impl ShapeGeometry {
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        ShapeGeometry::Polygon(vec![
            Vertex::new(x0, y0),
            Vertex::new(x1, y0),
            Vertex::new(x1, y1),
            Vertex::new(x0, y1),
        ])
    }

    /// The polygon that is actually drawn and written to the ground truth.
    pub fn polygon(&self) -> Vec<Vertex<f64>> {
        match self {
            ShapeGeometry::Polygon(v) => v.clone(),
            &ShapeGeometry::Ellipse { cx, cy, rx, ry } => {
                let n = ((TAU * rx.max(ry) / 4.0).ceil() as usize).clamp(16, 512);
                (0..n)
                    .map(|k| {
                        let a = TAU * k as f64 / n as f64;
                        // Quantize to 1/256 px so the XML text stays short.
                        let q = |v: f64| (v * 256.0).round() / 256.0;
                        Vertex::new(q(cx + rx * a.cos()), q(cy + ry * a.sin()))
                    })
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticShape {
    pub geometry: ShapeGeometry,
    pub fill: [u8; 3],
    /// `None` draws unlabeled tissue that the ground truth leaves as background.
    pub class: Option<NonZeroU8>,
}

impl SyntheticShape {
    pub fn labeled(geometry: ShapeGeometry, class: u8, fill: [u8; 3]) -> Self {
        Self {
            geometry,
            fill,
            class: NonZeroU8::new(class),
        }
    }

    pub fn unlabeled(geometry: ShapeGeometry, fill: [u8; 3]) -> Self {
        Self {
            geometry,
            fill,
            class: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSlideSpec {
    pub width: u32,
    pub height: u32,
    pub background: [u8; 3],
    pub shapes: Vec<SyntheticShape>,
    /// Per-channel uniform jitter of ±`noise` applied to shape pixels.
    pub noise: u8,
    pub seed: u64,
}

impl SyntheticSlideSpec {
    pub fn blank(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            background: super::BACKGROUND_RGB,
            shapes: Vec::new(),
            noise: 0,
            seed: 0,
        }
    }
}

/// Renders the slide in memory together with its ground truth.
///
/// Unlabeled shapes are drawn first in spec order, then labeled shapes in
/// ascending class order, so the drawn class pixels coincide with the
/// rasterization of the returned document under an identity class map.
pub fn render_synthetic_slide(spec: &SyntheticSlideSpec) -> Result<(ImageTile, AnnotationDocument)> {
    let (w, h) = (spec.width, spec.height);
    if w == 0 || h == 0 {
        return Err(Error::InvalidImage("synthetic slide has zero area".into()));
    }
    let polygons: Vec<Vec<Vertex<f64>>> = spec.shapes.iter().map(|s| s.geometry.polygon()).collect();
    for (index, poly) in polygons.iter().enumerate() {
        let inside = poly.len() >= 3
            && poly.iter().all(|v| {
                v.x.is_finite()
                    && v.y.is_finite()
                    && v.x >= 0.0
                    && v.y >= 0.0
                    && v.x <= (w - 1) as f64
                    && v.y <= (h - 1) as f64
            });
        if !inside {
            return Err(Error::ShapeOutOfBounds {
                index,
                width: w,
                height: h,
            });
        }
    }

    let mut order: Vec<usize> = (0..spec.shapes.len()).collect();
    order.sort_by_key(|&i| spec.shapes[i].class.map_or(0, NonZeroU8::get));

    let mut tile = ImageTile::filled((0, 0), 1, w, h, spec.background);
    let mut drawn = vec![false; w as usize * h as usize];
    let full = Window::new((0, 0), (w, h), 1);
    for &i in &order {
        let fill = spec.shapes[i].fill;
        scan_polygon(&polygons[i], &full, |y, x0, x1| {
            let row = y as usize * w as usize;
            for x in x0..x1 {
                let p = row + x as usize;
                drawn[p] = true;
                tile.pixels[p * 3..p * 3 + 3].copy_from_slice(&fill);
            }
        });
    }

    if spec.noise > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let a = spec.noise as i16;
        for (p, _) in drawn.iter().enumerate().filter(|(_, &d)| d) {
            for c in &mut tile.pixels[p * 3..p * 3 + 3] {
                *c = (*c as i16 + rng.random_range(-a..=a)).clamp(0, 255) as u8;
            }
        }
    }

    let mut layers: BTreeMap<u8, AnnotationLayer<f64>> = BTreeMap::new();
    for &i in &order {
        let Some(class) = spec.shapes[i].class else {
            continue;
        };
        let layer = layers.entry(class.get()).or_insert_with(|| AnnotationLayer {
            id: class.get() as u32,
            name: None,
            line_color: LineColor::from_rgb(spec.shapes[i].fill),
            regions: Vec::new(),
        });
        let id = layer.regions.len() as u32 + 1;
        layer.regions.push(Region {
            id,
            negative: false,
            vertices: polygons[i].clone(),
        });
    }
    let doc = AnnotationDocument {
        microns_per_pixel: None,
        layers: layers.into_values().collect(),
    };
    Ok((tile, doc))
}

/// Layout of a sparse slide: a few labeled ellipses on white, plus many
/// small pale unlabeled specks that pass the tissue filter but carry no
/// class.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseLayout {
    pub structures: usize,
    /// Radius range of labeled ellipses, per axis.
    pub radius: (f64, f64),
    pub class: u8,
    pub structure_fill: [u8; 3],
    /// Fraction of the slide area covered by specks.
    pub speck_coverage: f64,
    pub speck_radius: f64,
    pub speck_fill: [u8; 3],
    pub noise: u8,
}

impl Default for SparseLayout {
    fn default() -> Self {
        Self {
            structures: 5,
            radius: (16.0, 40.0),
            class: 1,
            structure_fill: [150, 40, 90],
            speck_coverage: 0.02,
            speck_radius: 6.0,
            speck_fill: [205, 195, 210],
            noise: 8,
        }
    }
}

/// Random slide with the given layout. Labeled ellipses keep at least
/// `2·max radius` of clearance from each other and from the border.
pub fn sparse_slide_spec(width: u32, height: u32, layout: &SparseLayout, seed: u64) -> Result<SyntheticSlideSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = SyntheticSlideSpec::blank(width, height);
    spec.noise = layout.noise;
    spec.seed = rng.random();
    let (w, h) = (width as f64, height as f64);

    let sr = layout.speck_radius;
    let speck_area = std::f64::consts::PI * sr * sr;
    let specks = (layout.speck_coverage * w * h / speck_area).round() as usize;
    if specks > 0 && (w <= 2.0 * sr + 2.0 || h <= 2.0 * sr + 2.0) {
        return Err(Error::InvalidArgument(format!("{width}x{height} slide is too small for specks")));
    }
    for _ in 0..specks {
        let cx = rng.random_range(sr + 1.0..w - sr - 1.0);
        let cy = rng.random_range(sr + 1.0..h - sr - 1.0);
        spec.shapes.push(SyntheticShape::unlabeled(ShapeGeometry::Ellipse { cx, cy, rx: sr, ry: sr }, layout.speck_fill));
    }

    let (rmin, rmax) = layout.radius;
    let clearance = 2.0 * rmax;
    if w <= 2.0 * clearance || h <= 2.0 * clearance {
        return Err(Error::InvalidArgument(format!("{width}x{height} slide is too small for radius {rmax}")));
    }
    let mut centers: Vec<(f64, f64)> = Vec::new();
    for _ in 0..layout.structures {
        let mut placed = false;
        for _ in 0..10_000 {
            let c = (rng.random_range(clearance..w - clearance), rng.random_range(clearance..h - clearance));
            if centers.iter().all(|o| (o.0 - c.0).hypot(o.1 - c.1) > 2.0 * rmax + clearance) {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidArgument(format!("cannot place {} structures", layout.structures)));
        }
        let (cx, cy) = *centers.last().unwrap();
        let rx = rng.random_range(rmin..=rmax);
        let ry = rng.random_range(rmin..=rmax);
        spec.shapes.push(SyntheticShape::labeled(
            ShapeGeometry::Ellipse { cx, cy, rx, ry },
            layout.class,
            layout.structure_fill,
        ));
    }
    Ok(spec)
}

/// Writes `<path>` as a flat TIFF and the ground truth next to it as
/// `<stem>.xml`. Returns the XML path and the document.
pub fn generate_synthetic_slide(
    spec: &SyntheticSlideSpec,
    path: &Path,
) -> Result<(PathBuf, AnnotationDocument)> {
    let (tile, doc) = render_synthetic_slide(spec)?;
    write_tiff(path, &tile)?;
    let xml = path.with_extension("xml");
    write_annotations(&xml, &doc)?;
    Ok((xml, doc))
}
