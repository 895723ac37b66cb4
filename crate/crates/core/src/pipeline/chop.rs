use rayon::prelude::*;

use super::TissueParams;
use crate::annotations::{AnnotationDocument, ClassMap};
use crate::augment::TrainingBlock;
use crate::error::Result;
use crate::raster::rasterize_window;
use crate::slide_io::SlideHandle;
use crate::tiling::plan_tiles;

/// Cuts a slide and its annotations into grid-aligned training blocks at
/// `scale`. Blocks are kept when they contain an annotated class or pass the
/// tissue filter; empty glass is dropped.
#[allow(clippy::too_many_arguments)]
pub fn chop_slide(
    slide: &SlideHandle,
    slide_id: &str,
    doc: &AnnotationDocument,
    class_map: &ClassMap,
    tile_size: u32,
    overlap: f64,
    scale: u32,
    tissue: &TissueParams,
) -> Result<Vec<TrainingBlock>> {
    let grid = plan_tiles(slide.dimensions(), tile_size, overlap, scale)?;
    let blocks: Vec<Option<TrainingBlock>> = grid
        .windows
        .par_iter()
        .map(|w| {
            let mask = rasterize_window(doc, class_map, w)?;
            let image = slide.read_region(w.origin, w.size, w.scale)?;
            let keep = !mask.is_background() || tissue.apply(&image).keep;
            Ok(keep.then(|| TrainingBlock {
                slide: slide_id.to_string(),
                image,
                mask,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(blocks.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slide_io::{render_synthetic_slide, ShapeGeometry, SyntheticShape, SyntheticSlideSpec};

    #[test]
    fn keeps_annotated_and_tissue_blocks() {
        let mut spec = SyntheticSlideSpec::blank(400, 200);
        spec.shapes.push(SyntheticShape::labeled(
            ShapeGeometry::rect(20.0, 20.0, 60.0, 60.0),
            1,
            [200, 0, 0],
        ));
        spec.shapes.push(SyntheticShape::unlabeled(ShapeGeometry::rect(320.0, 120.0, 380.0, 180.0), [120, 120, 120]));
        let (img, doc) = render_synthetic_slide(&spec).unwrap();
        let slide = SlideHandle::from_tile(&img).unwrap();
        let blocks = chop_slide(&slide, "s", &doc, &ClassMap::identity(1), 100, 0.0, 1, &TissueParams::default()).unwrap();
        let origins: Vec<_> = blocks.iter().map(|b| b.image.origin).collect();
        assert_eq!(origins, vec![(0, 0), (300, 100)]);
        assert_eq!(blocks[0].mask.values.iter().filter(|&&v| v == 1).count(), 41 * 41);
        assert!(blocks[1].mask.is_background());

        let low = chop_slide(&slide, "s", &doc, &ClassMap::identity(1), 100, 0.0, 16, &TissueParams::default()).unwrap();
        assert_eq!(low.len(), 1);
        assert_eq!((low[0].image.width, low[0].image.scale), (25, 16));
    }
}
