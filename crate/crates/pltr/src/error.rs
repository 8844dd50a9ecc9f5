//! Crate-wide error type and exit-code mapping.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed corpus text (bad label string, ragged columns, invalid tag walk).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A precondition or invariant was violated by caller-supplied data.
    #[error("validation failure: {0}")]
    Validation(String),

    /// An input file does not exist or could not be opened.
    #[error("missing input: {path}")]
    MissingInput { path: String },

    /// Requested a capability that is deliberately not implemented.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The training loss left the finite range; carries the step index so the
    /// emitted trace can be inspected up to the failure point.
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 is reserved for usage errors (clap),
    /// 3 for missing inputs, 4 for validation/parse failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingInput { .. } => 3,
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Unsupported(_)
            | Error::NonFiniteLoss { .. } => 4,
            Error::Io { .. } | Error::Json(_) => 1,
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput { path }
        } else {
            Error::Io { path, source }
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
