use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LearnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error(transparent)]
    Core(#[from] splatsem_core::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A loss or gradient became NaN/inf; the message names the step or parameter.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LearnError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LearnError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_input_error(&self) -> bool {
        match self {
            LearnError::Core(e) => e.is_input_error(),
            LearnError::Config(_) | LearnError::Shape(_) | LearnError::Checkpoint(_) => true,
            LearnError::NonFinite(_) | LearnError::Io { .. } => false,
        }
    }
}
