use std::io;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum KrakenError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {source}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{}:{line}: {source}", path.display())]
    Record {
        path: PathBuf,
        line: usize,
        source: kraken_core::Error,
    },
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Core(#[from] kraken_core::Error),
    #[error("usage: {0}")]
    Usage(String),
}

impl KrakenError {
    /// Process exit status: 1 for usage errors, 2 for data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            KrakenError::Usage(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        KrakenError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = KrakenError> = std::result::Result<T, E>;
