use std::path::PathBuf;

use thiserror::Error;

use crate::providers::ProviderError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("document {0} has no label")]
    MissingLabel(String),

    #[error("document {0} has no timestamp")]
    MissingTimestamp(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Provider(#[from] ProviderError),

    #[error("malformed model response: {0}")]
    MalformedResponse(String),

    #[error("topic {0:?} is empty after normalization")]
    EmptyAfterNormalization(String),

    #[error("general topic {0:?} has no sub-topics")]
    EmptySubtopics(String),

    #[error("embedding of {0:?} has zero norm")]
    ZeroVector(String),

    #[error("seed topic {0:?} matches no gold label")]
    UnknownSeed(String),

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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable kind, used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingLabel(_) => "missing_label",
            Error::MissingTimestamp(_) => "missing_timestamp",
            Error::InvalidInput(_) => "invalid_input",
            Error::Config(_) => "config",
            Error::Provider(e) => e.kind(),
            Error::MalformedResponse(_) => "malformed_response",
            Error::EmptyAfterNormalization(_) => "empty_after_normalization",
            Error::EmptySubtopics(_) => "empty_subtopics",
            Error::ZeroVector(_) => "zero_vector",
            Error::UnknownSeed(_) => "unknown_seed",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code: 2 config/input, 3 provider, 4 parse.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Provider(_) => 3,
            Error::MalformedResponse(_) => 4,
            _ => 2,
        }
    }
}
