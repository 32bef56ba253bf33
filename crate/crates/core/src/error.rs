//! Error type shared across the pipeline.

use std::path::PathBuf;

/// Errors produced by simulation, decomposition, decoding, evaluation, and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input carries no usable signal (e.g. all-zero matrix handed to whitening).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("rank-deficient data: requested {requested} components, numerical rank is {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("silhouette undefined: {0}")]
    UndefinedSilhouette(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error(
        "no rotated component tracks DoF {dof:?} (best |r| = {best_correlation:.3}, floor {floor})"
    )]
    UnassignedDof {
        dof: String,
        best_correlation: f64,
        floor: f64,
    },

    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl std::fmt::Display, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
