use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A required input was empty or otherwise violated a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Transport or HTTP failure talking to a model backend.
    #[error("backend error: {0}")]
    Backend(String),

    #[error("backend request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },

    #[error("backend rejected credentials (HTTP {status}): {message}")]
    Auth { status: u16, message: String },

    /// One element of a batched request failed; the whole batch is rejected.
    #[error("batch item {index} failed: {message}")]
    BatchItem { index: usize, message: String },

    /// Model output could not be turned into the expected structure.
    #[error("could not parse model output: {0}")]
    Parse(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("{}:{line}: {message}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id {id:?} on line {line}")]
    DuplicateId { id: String, line: usize },

    #[error("missing template variable(s): {}", .0.join(", "))]
    MissingVariable(Vec<String>),

    #[error("unknown template {0:?}")]
    UnknownTemplate(String),

    #[error("fragments without cached vectors: {} (run `emomem precompute` first)", .0.join(", "))]
    UncachedVector(Vec<String>),

    #[error("missing personality labels for: {}", .0.join(", "))]
    MissingLabel(Vec<String>),

    #[error("unknown character {0:?}")]
    UnknownCharacter(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that originate in a model backend rather than in
    /// local data or configuration.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::Backend(_)
                | Error::Timeout { .. }
                | Error::Auth { .. }
                | Error::BatchItem { .. }
                | Error::Parse(_)
        )
    }
}
