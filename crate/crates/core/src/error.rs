use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value violates its precondition.
    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    /// Malformed input row.
    #[error("line {line}: bad field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    /// On-disk artifact disagrees with its manifest.
    #[error("load error in `{field}`: {message}")]
    Load { field: String, message: String },

    #[error("location `{0}` not found")]
    MissingLocation(String),

    #[error("prefix {0:?} is not a path of the token trie")]
    InvalidPrefix(Vec<String>),

    #[error("non-finite loss at batch {batch}; parameter norms: {norms}")]
    NonFinite { batch: usize, norms: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

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
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn load(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Load {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user-supplied parameters rather than by
    /// the data or the environment.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
