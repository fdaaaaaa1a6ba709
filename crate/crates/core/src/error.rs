//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by graph construction, the curation pipeline, training
/// and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// The input violates a structural constraint (cycle, dangling edge,
    /// duplicate identifier, missing required field).
    #[error("structural error: {0}")]
    Structural(String),

    /// A requested entity does not exist.
    #[error("lookup error: {0}")]
    Lookup(String),

    /// An argument is out of range or inconsistent with the data.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Malformed input text or JSON.
    #[error("parse error: {0}")]
    Parse(String),

    /// A post-condition that must hold by construction was violated.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// A pipeline stage failed; the partial manifest is preserved.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    /// A remote model endpoint could not be reached or answered garbage.
    #[error("external client error: {0}")]
    External(String),

    /// Training produced a non-finite loss; the offending batch is dumped
    /// next to the checkpoint directory.
    #[error("non-finite loss: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 input error, 2 stage failure,
    /// 3 invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) => 3,
            Error::Stage { .. } | Error::NonFinite(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
