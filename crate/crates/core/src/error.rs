use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty geometry: {0}")]
    EmptyGeometry(&'static str),

    #[error("transform has a singular linear part")]
    SingularTransform,

    #[error("bad count {count} for a set of {available} elements")]
    BadCount { count: usize, available: usize },

    #[error("all bounding-box extents are zero")]
    DegenerateExtent,

    #[error("normals required but the point cloud has none")]
    NoNormals,

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("backend failure for {context}: {message}")]
    BackendFailure { context: String, message: String },

    #[error("backend unreachable at {endpoint}: {message}")]
    BackendUnreachable { endpoint: String, message: String },

    #[error("no segmentation cluster survived")]
    EmptySegmentation,

    #[error("no correspondences within the maximum distance")]
    NoCorrespondences,

    #[error("every part failed to generate")]
    PipelineEmpty,

    #[error("unknown part {0}")]
    UnknownPart(u32),

    #[error("no residual points beyond the subtraction threshold")]
    EmptyResidual,

    #[error("parse error in {path:?} at line {line}: {message}")]
    Parse {
        path: Option<PathBuf>,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn backend(context: impl Into<String>, message: impl ToString) -> Self {
        Error::BackendFailure {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: None,
            line,
            message: message.into(),
        }
    }
}
