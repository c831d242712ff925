use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{0}: empty dataset")]
    EmptyDataset(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{context}: malformed data at byte offset {offset}: {reason}")]
    Format {
        context: String,
        offset: u64,
        reason: String,
    },

    #[error("class {0} is already registered")]
    Conflict(u32),

    #[error("class {0} is not registered")]
    Lookup(u32),

    #[error("test label {0} has no registered expert")]
    Label(u32),

    #[error("invalid state: {0}")]
    State(&'static str),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension { op, expected, got }
    }

    pub(crate) fn format(context: impl Into<String>, offset: u64, reason: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
