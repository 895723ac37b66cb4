use crate::annotations::{AnnotationDocument, ClassMap, Vertex};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{MaskTile, Window};

/// What to do with a layer that has no class binding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UnboundPolicy {
    #[default]
    Error,
    Skip,
}

/// Rasterizes `doc` over `window`, failing on unbound layers.
pub fn rasterize_window<T: Scalar>(
    doc: &AnnotationDocument<T>,
    class_map: &ClassMap,
    window: &Window,
) -> Result<MaskTile> {
    rasterize_window_with(doc, class_map, window, UnboundPolicy::Error)
}

/// Rasterizes `doc` over `window`.
///
/// Within a layer every pixel keeps a winding-like count: +1 for each
/// positive region covering its center and −1 for each hole. Pixels with a
/// positive count take the layer's class; later layers overwrite earlier ones.
pub fn rasterize_window_with<T: Scalar>(
    doc: &AnnotationDocument<T>,
    class_map: &ClassMap,
    window: &Window,
    policy: UnboundPolicy,
) -> Result<MaskTile> {
    if window.scale == 0 {
        return Err(Error::ScaleNotAchievable(0));
    }
    let mut mask = MaskTile::zeros(window);
    if window.pixel_count() == 0 {
        return Ok(mask);
    }
    for layer in &doc.layers {
        let Some(class) = class_map.class_for_layer(layer.id) else {
            match policy {
                UnboundPolicy::Error => return Err(Error::UnboundLayer(layer.id)),
                UnboundPolicy::Skip => {
                    log::warn!("skipping layer {} with no class binding", layer.id);
                    continue;
                }
            }
        };
        let Some(sub) = layer_subwindow(layer.regions.iter().map(|r| r.vertices.as_slice()), window) else {
            continue;
        };
        let (ox, oy) = (
            (sub.origin.0 - window.origin.0) / window.scale,
            (sub.origin.1 - window.origin.1) / window.scale,
        );
        let sw = sub.size.0 as usize;
        let mut counts = vec![0i32; sub.pixel_count()];
        for region in &layer.regions {
            let sign = if region.negative { -1 } else { 1 };
            scan_polygon(&region.vertices, &sub, |j, x0, x1| {
                let row = j as usize * sw;
                for c in &mut counts[row + x0 as usize..row + x1 as usize] {
                    *c += sign;
                }
            });
        }
        for j in 0..sub.size.1 {
            let src = &counts[j as usize * sw..(j as usize + 1) * sw];
            let row = (oy + j) as usize * window.size.0 as usize + ox as usize;
            for (dst, &c) in mask.values[row..row + sw].iter_mut().zip(src) {
                if c > 0 {
                    *dst = class;
                }
            }
        }
    }
    Ok(mask)
}

/// Pixel-aligned part of `window` that can contain centers covered by any of
/// the polygons, or `None` when they miss the window.
fn layer_subwindow<'a, T: Scalar + 'a>(
    polygons: impl Iterator<Item = &'a [Vertex<T>]>,
    window: &Window,
) -> Option<Window> {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for poly in polygons.filter(|p| p.len() >= 3) {
        for v in poly {
            let (x, y) = (v.x.to_f64_exact(), v.y.to_f64_exact());
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    let (i0, i1) = index_span(x0, x1, window.center_x(0), window.scale, window.size.0)?;
    let (j0, j1) = index_span(y0, y1, window.center_y(0), window.scale, window.size.1)?;
    let s = window.scale;
    Some(Window::new(
        (window.origin.0 + s * i0, window.origin.1 + s * j0),
        (i1 - i0 + 1, j1 - j0 + 1),
        s,
    ))
}

/// Inclusive, padded index range of pixel centers `c0 + s·i` in `[lo, hi]`,
/// clamped to `0..n`.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn index_span(lo: f64, hi: f64, c0: f64, s: u32, n: u32) -> Option<(u32, u32)> {
    if !(lo <= hi) || n == 0 {
        return None;
    }
    let s = s as f64;
    let a = ((lo - c0) / s).floor() - 1.0;
    let b = ((hi - c0) / s).ceil() + 1.0;
    if b < 0.0 || a > (n - 1) as f64 {
        return None;
    }
    Some((a.max(0.0) as u32, b.min((n - 1) as f64) as u32))
}

/// Visits the pixels of `window` whose centers lie inside `vertices` or on its
/// boundary (even-odd rule). `emit(row, x0, x1)` receives disjoint half-open
/// column runs; every covered pixel is reported exactly once.
pub fn scan_polygon<T: Scalar>(vertices: &[Vertex<T>], window: &Window, mut emit: impl FnMut(u32, u32, u32)) {
    let n = vertices.len();
    if n < 3 || window.pixel_count() == 0 {
        return;
    }
    let pts: Vec<(f64, f64)> = vertices.iter().map(|v| (v.x.to_f64_exact(), v.y.to_f64_exact())).collect();
    let (ymin, ymax) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let cy0 = window.center_y(0);
    let Some((j_lo, j_hi)) = index_span(ymin, ymax, cy0, window.scale, window.size.1) else {
        return;
    };

    // Edges bucketed by the rows whose centers they can reach.
    let rows = (j_hi - j_lo + 1) as usize;
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); rows];
    for k in 0..n {
        let (a, b) = (pts[k], pts[(k + 1) % n]);
        if let Some((r0, r1)) = index_span(a.1.min(b.1), a.1.max(b.1), cy0, window.scale, window.size.1) {
            for r in r0.max(j_lo)..=r1.min(j_hi) {
                buckets[(r - j_lo) as usize].push(k as u32);
            }
        }
    }

    let s = window.scale as f64;
    let cx0 = window.center_x(0);
    let w = window.size.0 as i64;
    let mut crossings: Vec<f64> = Vec::new();
    let mut spans: Vec<(f64, f64)> = Vec::new();
    let mut runs: Vec<(i64, i64)> = Vec::new();
    for (r, bucket) in buckets.iter().enumerate() {
        let j = j_lo + r as u32;
        let yc = window.center_y(j as i64);
        crossings.clear();
        spans.clear();
        for &k in bucket {
            let (mut a, mut b) = (pts[k as usize], pts[(k as usize + 1) % n]);
            if a.1 == b.1 {
                if a.1 == yc {
                    spans.push((a.0.min(b.0), a.0.max(b.0)));
                }
                continue;
            }
            if a.1 > b.1 {
                std::mem::swap(&mut a, &mut b);
            }
            if yc < a.1 || yc > b.1 {
                continue;
            }
            let x = if yc == a.1 {
                a.0
            } else if yc == b.1 {
                b.0
            } else {
                a.0 + ((yc - a.1) * (b.0 - a.0)) / (b.1 - a.1)
            };
            // The crossing itself lies on the boundary.
            spans.push((x, x));
            // Half-open rule: the edge counts when yc ∈ [a.y, b.y).
            if yc < b.1 {
                crossings.push(x);
            }
        }
        crossings.sort_by(f64::total_cmp);
        for pair in crossings.chunks_exact(2) {
            spans.push((pair[0], pair[1]));
        }

        runs.clear();
        for &(lo, hi) in &spans {
            // First and last pixel whose center lies in [lo, hi].
            let mut i0 = ((lo - cx0) / s).ceil().max(-1.0).min(w as f64) as i64;
            while i0 > 0 && cx0 + s * (i0 - 1) as f64 >= lo {
                i0 -= 1;
            }
            while i0 < w && cx0 + s * (i0 as f64) < lo {
                i0 += 1;
            }
            let mut i1 = ((hi - cx0) / s).floor().max(-1.0).min(w as f64) as i64;
            while i1 >= 0 && i1 < w && cx0 + s * i1 as f64 > hi {
                i1 -= 1;
            }
            while i1 + 1 < w && cx0 + s * (i1 + 1) as f64 <= hi {
                i1 += 1;
            }
            let (i0, i1) = (i0.max(0), i1.min(w - 1));
            if i0 <= i1 {
                runs.push((i0, i1 + 1));
            }
        }
        runs.sort_unstable();
        let mut iter = runs.iter().copied();
        if let Some(mut cur) = iter.next() {
            for next in iter {
                if next.0 <= cur.1 {
                    cur.1 = cur.1.max(next.1);
                } else {
                    emit(j, cur.0 as u32, cur.1 as u32);
                    cur = next;
                }
            }
            emit(j, cur.0 as u32, cur.1 as u32);
        }
    }
}
