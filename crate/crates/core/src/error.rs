use thiserror::Error;

use crate::tensor::Shape;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    /// An operand violated an operation's shape contract.
    #[error("{op}: shape contract violated: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("element count mismatch: expected {expected}, got {actual}")]
    ElementCount { expected: usize, actual: usize },

    #[error("expected a single-element tensor, got {0}")]
    NotScalar(Shape),

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("{op}: invalid argument: {detail}")]
    Argument { op: &'static str, detail: String },

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("unknown parameter `{0}`")]
    MissingParam(String),

    #[error("parameter `{name}` has shape {actual}, expected {expected}")]
    ParamShape {
        name: String,
        expected: Shape,
        actual: Shape,
    },

    #[error("unknown gradcheck target `{0}`")]
    UnknownOp(String),

    #[error("non-finite loss {value} at step {step}")]
    NonFiniteLoss { step: usize, value: f64 },
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn argument(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Argument {
            op,
            detail: detail.into(),
        }
    }
}
