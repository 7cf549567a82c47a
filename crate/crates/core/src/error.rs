use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{op}: empty tensor")]
    Empty { op: &'static str },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("loss gating violated: {0}")]
    Gating(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("malformed record at line {line}: {detail}")]
    Record { line: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape { op, detail: detail.into() }
}
