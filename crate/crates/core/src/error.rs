use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    #[error("source `{source_tag}` has {available} qualifying records, {required} required (short by {})", required - available)]
    InsufficientRecords {
        source_tag: String,
        available: usize,
        required: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unresolved placeholder `{{{0}}}`")]
    UnresolvedPlaceholder(String),

    #[error("cannot parse judge reply ({reason}): {reply:?}")]
    JudgmentParse { reason: String, reply: String },

    #[error("judge `{judge_id}` failed after {attempts} attempts: {message}")]
    Endpoint {
        judge_id: String,
        attempts: u32,
        message: String,
    },

    #[error("id mismatch; unmatched ids: {}", .0.join(", "))]
    IdMismatch(Vec<String>),

    #[error("missing {what} for record `{id}`")]
    MissingField { id: String, what: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("input of {len} tokens exceeds context length {max}")]
    ContextOverflow { len: usize, max: usize },

    #[error("non-finite value in tensor `{0}`")]
    NonFinite(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("unknown token id {0}")]
    UnknownToken(usize),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
