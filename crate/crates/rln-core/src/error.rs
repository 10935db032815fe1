//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("transform is not invertible (|det| <= 1e-6)")]
    NonInvertibleTransform,

    #[error("label value {value} outside 0..=3{}", .file.as_ref().map(|p| format!(" in {}", p.display())).unwrap_or_default())]
    LabelOutOfRange { value: u8, file: Option<PathBuf> },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty atlas: no training records for the requested side")]
    EmptyAtlas,

    #[error("top-k {k} out of range for atlas of {len} entries")]
    TopKOutOfRange { k: usize, len: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("tensor shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },

    #[error("phantom geometry exceeded image bounds after {0} attempts")]
    GeometryOutOfBounds(usize),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
