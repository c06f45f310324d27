use thiserror::Error;

use crate::tensor::DType;

/// Errors raised by the tensor kernels, quantization passes and the model graph.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("expected dtype {expected:?}, found {found:?}")]
    DType { expected: DType, found: DType },
    #[error("index {index:?} out of bounds for shape {shape:?}")]
    OutOfBounds { index: [usize; 4], shape: [usize; 4] },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("integer accumulator overflow in {0}")]
    Overflow(String),
    #[error("missing calibration for edge `{0}`")]
    MissingCalibration(String),
    #[error("unsupported node `{node}`: {reason}")]
    Unsupported { node: String, reason: String },
    #[error("missing weight tensor `{0}`")]
    MissingWeight(String),
    #[error("config: {0}")]
    Config(String),
    #[error("weights file: {reason} (tensor `{tensor}`, offset {offset})")]
    Container {
        reason: String,
        tensor: String,
        offset: usize,
    },
    #[error("image format: {reason} (offset {offset})")]
    Format { reason: String, offset: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
