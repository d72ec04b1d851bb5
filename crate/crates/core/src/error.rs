use std::io;

use thiserror::Error;

/// Errors produced by sketch construction, estimation and the file codecs.
#[derive(Debug, Error)]
pub enum SketchError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SketchError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SketchError::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        SketchError::ShapeMismatch(msg.into())
    }

    /// Process exit code used by the CLI: 3 for numeric failures, 2 for
    /// everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            SketchError::Numeric(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, SketchError>;
