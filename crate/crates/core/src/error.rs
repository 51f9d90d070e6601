use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the registration toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("empty point set")]
    EmptySet,
    #[error("zero-norm quaternion")]
    ZeroQuaternion,
    #[error("too few points: need more than {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("no neighbor within radius of keypoint {keypoint}")]
    EmptyNeighborhood { keypoint: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input")]
    EmptyInput,
    #[error("descriptor variant mismatch: {0}")]
    VariantMismatch(String),
    #[error("no overlapping keypoints between fragments")]
    NoOverlap,
    #[error("empty search target")]
    EmptyTarget,
    #[error("empty correspondence set")]
    EmptyCorrespondences,
    #[error("too few correspondences: need at least {needed}, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },
    #[error("invalid synthetic scene spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unsupported point cloud format: {0}")]
    UnsupportedFormat(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
