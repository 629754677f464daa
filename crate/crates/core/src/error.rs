use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category, used in JSON error objects.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) | Error::GridMismatch(_) => "grid",
            Error::NonFinite(_) | Error::Numerical(_) => "numerical",
            Error::Domain(_) => "domain",
            Error::Precondition(_) => "precondition",
            Error::Config(_) => "config",
            Error::Parse(_) | Error::Csv(_) | Error::Json(_) => "parse",
            Error::Io(_) => "io",
        }
    }

    /// True for failures caused by bad input rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::NonFinite(_) | Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
