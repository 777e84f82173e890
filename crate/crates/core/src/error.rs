use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown name: {0}")]
    Name(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("missing metadata: {0}")]
    MissingMetadata(String),

    #[error("length error: {0}")]
    Length(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("label error: label {label} >= num_classes {num_classes}")]
    Label { label: usize, num_classes: usize },

    #[error("tape error: {0}")]
    Tape(String),

    #[error("invalid model spec: {0}")]
    Spec(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("coordinate type error: {0}")]
    CoordType(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("verification failed: {0}")]
    Verification(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
