use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{layer}: shape mismatch, expected {expected}, got {got:?}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        got: Vec<usize>,
    },

    #[error("{layer}: non-finite value in output")]
    NonFinite { layer: String },

    #[error("{layer}: backward called without a recorded forward pass")]
    BackwardWithoutForward { layer: String },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    BadTensor { shape: Vec<usize>, len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, NnError>;
