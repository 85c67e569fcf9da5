use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the solvers, the checks and the batch driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {left} cells vs {right} cells")]
    GridMismatch { left: usize, right: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("unknown probe `{0}` (expected uniform, bump, two_bump or cosine)")]
    UnknownProbe(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("step-size bound violated: {0}")]
    StepSize(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid discount rate {0} (must be > 0)")]
    InvalidDiscount(f64),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("config rejected:\n  - {}", .0.join("\n  - "))]
    ConfigRanges(Vec<String>),

    #[error("malformed data in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
