use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the simulator library.
///
/// The CLI maps [`Error::is_user_error`] to exit status 2 and everything
/// else to exit status 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("config key `{key}`: {msg}")]
    ConfigField { key: String, msg: String },

    #[error("trace line {line}: {msg}")]
    Trace { line: usize, msg: String },

    #[error("burst table: {0}")]
    BurstTable(String),

    #[error("random stream `{0}` requested twice")]
    DuplicateStream(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn field(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::ConfigField {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than by the environment.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::Invariant(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
