use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("invalid bounds at index {index}: lower {lower} > upper {upper}")]
    InvalidBounds { index: usize, lower: f64, upper: f64 },

    #[error("point is not an approximate solution (residual {residual:.3e} > {tol:.1e})")]
    NotASolution { residual: f64, tol: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("problem too large for {what}: n = {n} > {max}")]
    TooLarge { what: &'static str, n: usize, max: usize },

    #[error("case parse error (line {line}): {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid case: {0}")]
    InvalidCase(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }
}
