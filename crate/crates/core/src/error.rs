use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the receiver and simulation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular matrix in {context} (dimension {dim})")]
    Singular { context: &'static str, dim: usize },

    #[error("enumeration of {candidates} candidates exceeds the limit of {limit}")]
    EnumerationTooLarge { candidates: u128, limit: u128 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("trial failed at snr {snr_db} dB, seed {seed}: {message}")]
    Trial {
        snr_db: f64,
        seed: u64,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn dim(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
