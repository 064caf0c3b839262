use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("depth exhausted: cube at level {level} cannot be refined past d_max = {d_max}")]
    DepthExhausted { level: u32, d_max: u32 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("quadrature failed on cell {cell}: {reason}")]
    Quadrature { cell: String, reason: String },

    #[error("weight misdeclared: empirical C_gamma = {empirical} exceeds declared {declared}")]
    WeightMisdeclared { empirical: f64, declared: f64 },

    #[error("non-finite derivative sample at {cell}")]
    NonFiniteDerivative { cell: String },

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("missing scale entry for level {k}, index {index:?}")]
    MissingScale { k: u32, index: Vec<i64> },

    #[error("inadmissible tiling system: {0}")]
    Inadmissible(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
