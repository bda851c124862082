use std::path::PathBuf;

/// Errors raised across the crate. Each variant maps to one CLI exit class.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed or out-of-range user input.
    #[error("input error: {0}")]
    Input(String),
    /// A precondition between components was not met (e.g. missing self-loops).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Inconsistent variant / aggregator configuration.
    #[error("config error: {0}")]
    Config(String),
    /// NaN or infinity where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class: 2 for input-type errors, 3 for numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
