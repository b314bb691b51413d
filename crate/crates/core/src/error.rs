//! Error type shared across the crate. Variants map onto the CLI exit codes:
//! Config/InvalidArgument -> 1, Io/Parse -> 2, Protocol/Eval -> 3.

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("evaluation error: {0}")]
    Eval(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Exit code class for CLI reporting: 1 validation, 2 I/O, 3 runtime.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 1,
            Error::Io { .. } | Error::Parse(_) => 2,
            Error::Protocol(_) | Error::Eval(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
