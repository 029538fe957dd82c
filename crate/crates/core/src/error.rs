use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the analysis routines.
///
/// Variants are split between problems with the caller's inputs
/// (bad files, invalid parameters) and everything else, so front ends can
/// map them onto distinct exit codes via [`Error::is_user_error`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("invalid argument `{name}`: {message}")]
    InvalidArgument { name: &'static str, message: String },

    #[error("tokenizer: {0}")]
    Tokenizer(String),

    #[error("unknown symbol {symbol:?} and the model has neither an unk token nor byte fallback")]
    UnknownSymbol { symbol: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("requested {target} unique prompts but only {capacity} distinct keys exist")]
    Capacity { target: u64, capacity: u64 },

    #[error("gave up after {rejections} consecutive rejected draws with {accepted} of {target} prompts accepted")]
    CircuitBreaker {
        accepted: usize,
        target: usize,
        rejections: u64,
    },

    #[error("power-law fit infeasible: {0}")]
    FitInfeasible(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("provider: {0}")]
    Provider(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn invalid(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            message: message.into(),
        }
    }

    /// True when the error stems from caller-supplied input rather than
    /// from a defect or an environment failure.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Numerical(_) | Error::Provider(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
