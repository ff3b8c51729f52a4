use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("layer {layer}: {message}")]
    Dimension { layer: usize, message: String },

    #[error("label {label} at row {row} is outside 0..{classes}")]
    LabelOutOfRange { row: usize, label: usize, classes: usize },

    #[error("activation cache is stale or missing: {0}")]
    StaleCache(String),

    #[error("idx parse error at byte offset {offset}: {message}")]
    Idx { offset: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("k-fac layer {layer}: factorization failed after damping (damping too small?)")]
    Factorization { layer: usize },

    #[error("k-fac layer {layer}: eigenvalue {value:e} below tolerance")]
    NegativeEigenvalue { layer: usize, value: f64 },

    #[error("k-fac inverses are stale or have not been computed ({0})")]
    StaleInverse(String),

    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: u64, what: String },

    #[error("degenerate chain: {0}")]
    Degenerate(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
