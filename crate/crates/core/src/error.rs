use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Observation domain is degenerate or malformed.
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller violated an operation's preconditions (dimension mismatch, point outside B, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// Basis construction failed.
    #[error("basis construction error: {0}")]
    Construction(String),

    /// Exponent overflow in an intensity evaluation.
    #[error("numeric overflow: intensity exponent reached {max_exponent:.3}")]
    Overflow { max_exponent: f64 },

    /// Any other non-finite or degenerate numeric result.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Fitting failed.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// Malformed input data; `line` is 1-based when known.
    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<u64>, message: String },

    /// Model file failed validation on load.
    #[error("model file error: {0}")]
    ModelFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: Option<u64>, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
