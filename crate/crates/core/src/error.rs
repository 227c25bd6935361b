use thiserror::Error;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("action {index} is not valid under the current mask")]
    InvalidAction { index: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("training produced a non-finite loss")]
    NonFiniteLoss,
    #[error("acceptance ratio {0} is outside (0, 1]")]
    InvalidAcceptanceRatio(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Checkpoint decoding failures.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic bytes, not a network checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version: expected {expected}, found {found}")]
    UnsupportedVersion { expected: u32, found: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid checkpoint header: {0}")]
    InvalidHeader(&'static str),
}
