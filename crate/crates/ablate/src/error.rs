use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: io::Error },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("checksum mismatch: stored {stored:#018x}, computed {actual:#018x}")]
    Checksum { stored: u64, actual: u64 },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("--{0} is required")]
    MissingFlag(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Cell { context: String, source: ablate_core::Error },
    #[error(transparent)]
    Core(#[from] ablate_core::Error),
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Runtime,
}

impl Error {
    pub fn read(path: &Path, source: io::Error) -> Self {
        Error::Read { path: path.to_path_buf(), source }
    }

    pub fn write(path: &Path, source: io::Error) -> Self {
        Error::Write { path: path.to_path_buf(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::MissingFlag(_) => ErrorClass::Usage,
            Error::Write { .. } => ErrorClass::Runtime,
            Error::Core(e) | Error::Cell { source: e, .. } => match e {
                ablate_core::Error::NonFinite(_) | ablate_core::Error::CacheMismatch(_) => ErrorClass::Runtime,
                _ => ErrorClass::Data,
            },
            Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => ErrorClass::Runtime,
            _ => ErrorClass::Data,
        }
    }
}
