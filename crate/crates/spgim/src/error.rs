//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("input side {side} not divisible by {divisor}; pad to {padded} (add {pad} px)")]
    NotDivisible {
        side: usize,
        divisor: usize,
        padded: usize,
        pad: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("checkpoint config mismatch on fields: {fields:?}")]
    ConfigMismatch { fields: Vec<String> },

    #[error("uninitialized network: {0}")]
    Uninitialized(String),

    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Config(String),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}
