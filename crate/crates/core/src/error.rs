use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: malformed JSON: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}:{line}: invalid sample `{sample_id}`: {reason}")]
    Validation {
        path: PathBuf,
        line: usize,
        sample_id: String,
        reason: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sample `{sample_id}` cannot be labeled: {reason}")]
    Labeling { sample_id: String, reason: String },

    #[error("AUROC is undefined: {0}")]
    UndefinedAuroc(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("report serialization failed: {0}")]
    Report(String),

    #[error("request failed: {0}")]
    Http(String),

    #[error("endpoint does not return logprobs: {0}")]
    MissingLogprobs(String),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by bad input or flags rather than by a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation { .. } | Error::Config(_)
        )
    }
}
