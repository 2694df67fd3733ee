use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {0:?}: extents must be >= 1 and rank 1..=4")]
    InvalidShape(Vec<usize>),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid range: lo={lo} must be < hi={hi}")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),

    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("stale forward cache: {0}")]
    StaleCache(&'static str),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),

    #[error("optimizer diverged: non-finite gradient in parameter `{0}`")]
    Diverged(String),

    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Length {
        path: String,
        expected: usize,
        found: usize,
    },

    #[error("inconsistent dataset: {0}")]
    Consistency(String),

    #[error("label out of range: {0}")]
    LabelRange(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
