use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: must be at least 1")]
    InvalidDimension(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("index {index} out of range 0..={max} for {what}")]
    Range {
        what: &'static str,
        index: usize,
        max: usize,
    },

    #[error("unknown state `{0}`")]
    UnknownState(String),

    #[error("sample set is empty")]
    EmptySample,

    #[error("sample sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("assignment size {size} exceeds cap {cap}")]
    CapExceeded { size: usize, cap: usize },

    #[error("cannot take the logarithm of non-positive value {value} at param {param}")]
    NonPositive { param: f64, value: f64 },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("grid point {param}: {source}")]
    GridPoint {
        param: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
