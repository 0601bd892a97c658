use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (z = {0})")]
    NonPositiveDepth(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate scene: only {survived} correspondences survived (need at least 3)")]
    DegenerateScene { survived: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("too few correspondences: {got} (need at least {need})")]
    TooFewCorrespondences { got: usize, need: usize },

    #[error("rank-deficient linear system (normal-matrix condition number {condition:e})")]
    RankDeficient { condition: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no estimates left to fuse")]
    NothingToFuse,

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("CSV error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by degenerate numerics rather than bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::DegenerateScene { .. }
                | Error::TooFewCorrespondences { .. }
                | Error::NothingToFuse
        )
    }
}
