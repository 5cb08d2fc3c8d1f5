use std::io;
use std::path::Path;

/// Errors surfaced by the store and the command line; each maps to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad arguments or configuration.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, corrupt or inconsistent input data.
    #[error("{0}")]
    Data(String),
    /// A broken internal invariant.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Data(_) => 2,
            Error::Internal(_) => 3,
        }
    }

    pub fn io(path: &Path, e: io::Error) -> Self {
        Error::Data(format!("{}: {e}", path.display()))
    }

    pub fn data(path: &Path, msg: impl std::fmt::Display) -> Self {
        Error::Data(format!("{}: {msg}", path.display()))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
