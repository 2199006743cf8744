use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A documented precondition (resolution, extent, size, frame count) is violated.
    #[error("guard violated: {0}")]
    Guard(String),

    #[error("insufficient frames: need at least {needed}, have {have}")]
    InsufficientFrames { needed: u64, have: u64 },

    #[error("autocorrelation width undefined: map has zero variance")]
    UndefinedWidth,

    #[error("empty region of interest")]
    EmptyRegion,

    #[error("index {index} out of range for axis of length {len}")]
    OutOfRange { index: usize, len: usize },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for precondition failures that callers report separately from bad input.
    pub fn is_guard(&self) -> bool {
        matches!(self, Error::Guard(_) | Error::InsufficientFrames { .. })
    }
}
