use std::io;

use edgeqos_core::FormatError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint format error: {0}")]
    Format(#[from] FormatError),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("need at least {needed} latency samples, found {found}")]
    InsufficientSamples { needed: usize, found: usize },
    #[error(transparent)]
    Core(#[from] edgeqos_core::Error),
}

impl Error {
    /// Process exit code: 2 for configuration problems, 3 for I/O and
    /// file-format problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Core(edgeqos_core::Error::InvalidConfig(_) | edgeqos_core::Error::InvalidAcceptanceRatio(_)) => 2,
            Error::Io(_) | Error::Format(_) | Error::Csv(_) | Error::Json(_) => 3,
            Error::Core(edgeqos_core::Error::Format(_)) => 3,
            _ => 1,
        }
    }
}
