use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates an operation's precondition (shapes, ranges, empty sets).
    #[error("rejected input: {0}")]
    RejectedInput(String),

    /// A split, unlearning or attack specification is inconsistent with the data.
    #[error("rejected spec: {0}")]
    RejectedSpec(String),

    /// A non-finite value appeared during optimization.
    #[error("divergence in {context}: {detail}")]
    Divergence { context: String, detail: String },

    #[error("cosine similarity undefined for two zero vectors")]
    UndefinedSimilarity,

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("internal consistency: {0}")]
    Internal(String),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("config error at `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn rejected(msg: impl Into<String>) -> Self {
        Error::RejectedInput(msg.into())
    }

    pub(crate) fn divergence(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Divergence {
            context: context.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code used by the CLI: 2 for validation problems, 3 for
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::RejectedInput(_)
            | Error::RejectedSpec(_)
            | Error::Config { .. }
            | Error::Parse { .. } => 2,
            _ => 3,
        }
    }
}
