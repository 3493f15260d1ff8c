use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}, byte offset {offset}: {detail}")]
    Parse {
        line: usize,
        offset: usize,
        detail: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Tensor(#[from] tapegrad::Error),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn other(msg: impl Into<String>) -> Self {
        Error::Other(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
