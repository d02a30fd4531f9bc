use thiserror::Error;

/// Errors produced anywhere in the codec.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file or bitstream layout.
    #[error("format error: {0}")]
    Format(String),
    /// A value or parameter violates a documented precondition.
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Encoder and decoder disagree: the payload does not match the model.
    #[error("bitstream desync: {0}")]
    Desync(String),
    /// Hash, checksum or geometry mismatch between inputs.
    #[error("integrity check failed: {0}")]
    Integrity(String),
    /// Bundle assembly tried to read an attribute that is not yet decoded.
    #[error("causality violation: attribute of point {0} read before it was coded")]
    Causality(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}

pub(crate) fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}
