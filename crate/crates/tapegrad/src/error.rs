use thiserror::Error;

/// Errors produced by tensor construction, op execution, and backward passes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("backward called twice on the same tape without reset_grads")]
    RepeatedBackward,

    #[error("NaN encountered in {context}")]
    Nan { context: String },

    #[error("invalid argument: {detail}")]
    InvalidArg { detail: String },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn arg(detail: impl Into<String>) -> Self {
        Error::InvalidArg {
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
