use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty dataset")]
    EmptyDataset,

    /// A structural invariant of the data was violated (bad index, duplicate
    /// id, inconsistent dimension, ...). The message names the offender.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// A configuration value is out of its documented range or the requested
    /// combination of options is unusable.
    #[error("invalid config: {0}")]
    Config(String),

    /// A loss, gradient, or score came out NaN/inf.
    #[error("numeric failure: {0}")]
    NonFinite(String),
}

impl Error {
    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code convention: 1 usage, 2 data/invariant, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::NonFinite(_) => 3,
            _ => 2,
        }
    }
}
