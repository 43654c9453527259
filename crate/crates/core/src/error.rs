use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration. `key` names the offending config entry.
    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("empty multiverse: no model survives the exclusion rules")]
    EmptyMultiverse,

    #[error("conflicting definition for `{key}`: {message}")]
    Conflict { key: String, message: String },

    /// Bad input data. `row` is the zero-based data row when known.
    #[error("data error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Data { row: Option<usize>, message: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("evaluation error at observation {obs}: {message}")]
    Evaluation { obs: usize, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("sampler initialisation failed after {attempts} attempts for model {model}")]
    Initialisation { model: String, attempts: usize },

    #[error("tail too short: {0} exceedances (need at least 5)")]
    TailTooShort(usize),

    #[error("{0}")]
    Precondition(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn data(row: Option<usize>, message: impl Into<String>) -> Self {
        Error::Data {
            row,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that come from the user's configuration rather than
    /// from fitting or evaluating a model.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::EmptyMultiverse
                | Error::Conflict { .. }
                | Error::Parse { .. }
                | Error::MissingColumn(_)
                | Error::Data { .. }
        )
    }
}
