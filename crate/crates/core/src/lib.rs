//! Core library for iterative human-in-the-loop segmentation of whole-slide
//! images.
//!
//! - [`slide_io`]: pyramid TIFF/PNG slide reading and synthetic slides.
//! - [`annotations`]: viewer annotation XML and layer-to-class maps.
//! - [`raster`]: polygon filling and contour tracing between annotations and
//!   indexed masks.
//! - [`tiling`]: overlapping tile grids and majority-vote stitching.
//! - [`augment`]: class-balanced augmentation of training blocks.
//! - [`pipeline`]: segmenter backends and two-resolution prediction.
//! - [`analytics`]: metrics, correction burden and annotation-time savings.
//!
//! Geometry and the annotation-time model are generic over [`Scalar`]
//! (`f32`/`f64`); metrics are generic over [`MetricScalar`], which also
//! covers exact rationals. The aliases below fix the common choices.

pub mod analytics;
pub mod annotations;
pub mod augment;
pub mod error;
pub mod pipeline;
pub mod raster;
pub mod scalar;
pub mod slide_io;
pub mod tiling;

pub use annotations::{AnnotationDocument, ClassMap};
pub use error::{Error, Result};
pub use raster::{MaskTile, Window};
pub use scalar::{MetricScalar, Scalar};
pub use slide_io::{ImageTile, SlideHandle};

pub type AnnotationDocument32 = annotations::AnnotationDocument<f32>;
pub type AnnotationDocument64 = annotations::AnnotationDocument<f64>;
pub type Metrics32 = analytics::Metrics<f32>;
pub type Metrics64 = analytics::Metrics<f64>;
/// Exact metric values as reduced fractions of pixel counts.
pub type MetricsExact = analytics::Metrics<num_rational::Ratio<u64>>;
pub type HailFit32 = analytics::HailFit<f32>;
pub type HailFit64 = analytics::HailFit<f64>;
