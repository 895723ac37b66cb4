use std::collections::VecDeque;

use crate::annotations::{AnnotationDocument, AnnotationLayer, ClassMap, LineColor, Region, Vertex};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::MaskTile;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    Outer,
    Hole,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Contour {
    pub class: u8,
    pub polarity: Polarity,
    /// Closed polygon in mask pixel coordinates (pixel `(i, j)` spans
    /// `[i − ½, i + ½] × [j − ½, j + ½]`). Outer borders run clockwise on
    /// screen, holes counter-clockwise.
    pub vertices: Vec<(f64, f64)>,
    /// Index of the enclosing outer contour, for holes.
    pub parent: Option<usize>,
}

impl Contour {
    /// Shoelace area in pixel units with y pointing down; positive for outer
    /// borders.
    pub fn signed_area(&self) -> f64 {
        let v = &self.vertices;
        let n = v.len();
        (0..n)
            .map(|k| {
                let (a, b) = (v[k], v[(k + 1) % n]);
                a.0 * b.1 - b.0 * a.1
            })
            .sum::<f64>()
            / 2.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContourSet {
    pub contours: Vec<Contour>,
}

impl ContourSet {
    pub fn is_empty(&self) -> bool {
        self.contours.is_empty()
    }

    pub fn len(&self) -> usize {
        self.contours.len()
    }

    pub fn outers(&self) -> impl Iterator<Item = &Contour> {
        self.contours.iter().filter(|c| c.polarity == Polarity::Outer)
    }

    pub fn holes(&self) -> impl Iterator<Item = &Contour> {
        self.contours.iter().filter(|c| c.polarity == Polarity::Hole)
    }
}

// Headings double as the side of the foreground pixel the edge runs along:
// east = top, south = right, west = bottom, north = left.
const STEP: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];
const START: [(i64, i64); 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];
// Pixels ahead-left and ahead-right of the end corner, per heading.
const AHEAD_LEFT: [(i64, i64); 4] = [(0, -1), (0, 0), (-1, 0), (-1, -1)];
const AHEAD_RIGHT: [(i64, i64); 4] = [(0, 0), (-1, 0), (-1, -1), (0, -1)];
// Neighbor across each side.
const ACROSS: [(i64, i64); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

struct ClassPlane {
    w: i64,
    h: i64,
    fg: Vec<bool>,
    visited: Vec<u8>,
}

impl ClassPlane {
    #[inline]
    fn is_fg(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.w && y < self.h && self.fg[(y * self.w + x) as usize]
    }

    #[inline]
    fn is_border(&self, x: i64, y: i64, side: usize) -> bool {
        let (dx, dy) = ACROSS[side];
        !self.is_fg(x + dx, y + dy)
    }

    /// Follows the crack loop starting at `side` of pixel `(x, y)` with the
    /// foreground on the right. Returns the corners where the direction
    /// changes.
    fn follow(&mut self, x: i64, y: i64, side: usize) -> Vec<(i64, i64)> {
        let start = (x, y, side);
        let (mut px, mut py, mut h) = start;
        let mut corners: Vec<((i64, i64), usize)> = Vec::new();
        loop {
            self.visited[(py * self.w + px) as usize] |= 1 << h;
            let (sx, sy) = START[h];
            corners.push(((px + sx, py + sy), h));
            let (cx, cy) = (px + sx + STEP[h].0, py + sy + STEP[h].1);
            let (lx, ly) = (cx + AHEAD_LEFT[h].0, cy + AHEAD_LEFT[h].1);
            let (rx, ry) = (cx + AHEAD_RIGHT[h].0, cy + AHEAD_RIGHT[h].1);
            if self.is_fg(lx, ly) {
                (px, py, h) = (lx, ly, (h + 3) % 4);
            } else if self.is_fg(rx, ry) {
                (px, py) = (rx, ry);
            } else {
                h = (h + 1) % 4;
            }
            if (px, py, h) == start {
                break;
            }
        }
        let n = corners.len();
        (0..n)
            .filter(|&k| corners[k].1 != corners[(k + n - 1) % n].1)
            .map(|k| corners[k].0)
            .collect()
    }
}

/// Traces outer and hole borders of the 8-connected components of every
/// class ≥ 1. Classes are visited in ascending order; within a class,
/// components follow raster order of their first pixel and each outer
/// contour is followed by its holes.
pub fn trace_contours(mask: &MaskTile) -> ContourSet {
    let mut present = [false; 256];
    for &v in &mask.values {
        present[v as usize] = true;
    }
    let mut out = ContourSet::default();
    for class in (1..=255u8).filter(|&c| present[c as usize]) {
        trace_class(mask, class, &mut out.contours);
    }
    out
}

fn trace_class(mask: &MaskTile, class: u8, out: &mut Vec<Contour>) {
    let (mw, mh) = (mask.width as i64, mask.height as i64);
    let (mut x0, mut y0, mut x1, mut y1) = (mw, mh, -1i64, -1i64);
    for y in 0..mh {
        let row = &mask.values[(y * mw) as usize..((y + 1) * mw) as usize];
        if let Some(first) = row.iter().position(|&v| v == class) {
            let last = row.iter().rposition(|&v| v == class).unwrap();
            x0 = x0.min(first as i64);
            x1 = x1.max(last as i64);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if x1 < 0 {
        return;
    }
    let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
    let mut fg = Vec::with_capacity((w * h) as usize);
    for y in y0..=y1 {
        let row = (y * mw) as usize;
        fg.extend(mask.values[row + x0 as usize..=row + x1 as usize].iter().map(|&v| v == class));
    }
    let mut plane = ClassPlane {
        w,
        h,
        fg,
        visited: vec![0; (w * h) as usize],
    };

    // 8-connected component labels, numbered in raster order of first pixel.
    let mut labels = vec![0u32; (w * h) as usize];
    let mut firsts: Vec<(i64, i64)> = Vec::new();
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            if !plane.fg[i] || labels[i] != 0 {
                continue;
            }
            firsts.push((x, y));
            let label = firsts.len() as u32;
            labels[i] = label;
            queue.push_back((x, y));
            while let Some((cx, cy)) = queue.pop_front() {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (cx + dx, cy + dy);
                        if plane.is_fg(nx, ny) {
                            let j = (ny * w + nx) as usize;
                            if labels[j] == 0 {
                                labels[j] = label;
                                queue.push_back((nx, ny));
                            }
                        }
                    }
                }
            }
        }
    }

    let to_px = |(cx, cy): (i64, i64)| ((cx + x0) as f64 - 0.5, (cy + y0) as f64 - 0.5);
    let outers: Vec<Vec<(i64, i64)>> = firsts.iter().map(|&(x, y)| plane.follow(x, y, 0)).collect();
    let mut holes: Vec<Vec<Vec<(i64, i64)>>> = vec![Vec::new(); firsts.len()];
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            if !plane.fg[i] {
                continue;
            }
            for side in 0..4 {
                if plane.visited[i] & (1 << side) == 0 && plane.is_border(x, y, side) {
                    let loop_ = plane.follow(x, y, side);
                    holes[labels[i] as usize - 1].push(loop_);
                }
            }
        }
    }

    for (outer, comp_holes) in outers.into_iter().zip(holes) {
        let parent = out.len();
        out.push(Contour {
            class,
            polarity: Polarity::Outer,
            vertices: outer.into_iter().map(to_px).collect(),
            parent: None,
        });
        for hole in comp_holes {
            out.push(Contour {
                class,
                polarity: Polarity::Hole,
                vertices: hole.into_iter().map(to_px).collect(),
                parent: Some(parent),
            });
        }
    }
}

/// Converts a mask into an annotation document in base-level coordinates.
///
/// One layer per class present (ascending class order), bound through
/// `class_map`; each outer contour becomes a positive region followed by its
/// holes as negative regions.
pub fn mask_to_annotations<T: Scalar>(mask: &MaskTile, class_map: &ClassMap) -> Result<AnnotationDocument<T>> {
    let contours = trace_contours(mask);
    let s = mask.scale as f64;
    let (ox, oy) = (mask.origin.0 as f64, mask.origin.1 as f64);
    // Mask px p maps to base p·s + (s − 1)/2 + origin; for crack coordinates
    // p = c − ½ this is origin + s·c − ½.
    let to_base = |v: f64, o: f64| T::from_f64_lossy(o + v * s + (s - 1.0) / 2.0);
    let mut layers: Vec<AnnotationLayer<T>> = Vec::new();
    let mut current = None;
    for c in &contours.contours {
        if current != Some(c.class) {
            let binding = class_map.binding_for_class(c.class).ok_or(Error::UnboundClass(c.class))?;
            layers.push(AnnotationLayer {
                id: binding.layer_id,
                name: binding.name.clone(),
                line_color: LineColor::from_rgb(binding.color),
                regions: Vec::new(),
            });
            current = Some(c.class);
        }
        let layer = layers.last_mut().expect("layer pushed above");
        let id = layer.regions.len() as u32 + 1;
        layer.regions.push(Region {
            id,
            negative: c.polarity == Polarity::Hole,
            vertices: c.vertices.iter().map(|&(x, y)| Vertex::new(to_base(x, ox), to_base(y, oy))).collect(),
        });
    }
    Ok(AnnotationDocument {
        microns_per_pixel: None,
        layers,
    })
}
