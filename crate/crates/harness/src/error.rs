use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Rejected before any compute.
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] tempdistill_core::Error),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("{0}")]
    Format(String),
}

impl HarnessError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        HarnessError::Io { context: context.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
