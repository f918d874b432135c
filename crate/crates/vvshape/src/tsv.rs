//! Shared error type for the text artifact formats.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TsvError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
}

impl TsvError {
    pub fn format(line: usize, msg: impl Into<String>) -> Self {
        TsvError::Format {
            line,
            msg: msg.into(),
        }
    }
}
