use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("scale {0} is not achievable")]
    ScaleNotAchievable(u32),

    #[error("invalid region request: {0}")]
    InvalidRegion(String),

    #[error("shape {index} lies outside the {width}x{height} slide")]
    ShapeOutOfBounds { index: usize, width: u32, height: u32 },

    #[error("xml error at {path}: {message}")]
    Xml { path: String, message: String },

    #[error("layer {0} has no class binding")]
    UnboundLayer(u32),

    #[error("mask class {0} has no class binding")]
    UnboundClass(u8),

    #[error("invalid class map: {0}")]
    ClassMap(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid tiling: {0}")]
    Tiling(String),

    #[error("class-space mismatch: {0}")]
    ClassSpaceMismatch(String),

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("backend error: {0}")]
    Backend(String),

    #[error("backend operates at scale {found}, expected scale {expected}")]
    ScaleMismatch { expected: u32, found: u32 },

    #[error("missing backend: {0}")]
    MissingBackend(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
