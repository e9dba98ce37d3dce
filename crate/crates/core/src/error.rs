use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    /// A caller broke a documented precondition (shape, range, ordering).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("no valid pose at final history step for agent `{0}`")]
    MissingPose(String),

    #[error("insufficient history: need at least {needed} valid observations, found {found}")]
    InsufficientHistory { needed: usize, found: usize },

    #[error("empty corpus: synthesis config requests zero scenarios")]
    EmptyCorpus,

    #[error("layout error: {0}")]
    Layout(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("registry error: {0}")]
    Registry(String),

    #[error("join error: {0}")]
    Join(String),

    #[error("split construction error: {0}")]
    Construction(String),

    #[error("undefined score: {0}")]
    Undefined(String),

    #[error("stage `{stage}` is stale: {reason}; rerun `{stage}`")]
    Stale { stage: String, reason: String },

    #[error("runs are not comparable: {0}")]
    Comparability(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stale { .. } => 2,
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
