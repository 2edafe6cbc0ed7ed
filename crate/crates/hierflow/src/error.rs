use thiserror::Error;

/// Errors raised by the numerical engines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// Fourier or path-state truncation too coarse for the requested accuracy.
    #[error("truncation too coarse: {0}")]
    Truncation(String),

    #[error("bracket failure: series sum {sum} < 1 at lower bracket t = {t}")]
    BracketFailure { t: f64, sum: f64 },

    #[error("internal inconsistency: {0}")]
    Inconsistency(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::InvalidMeasure(_) | Error::Config(_) => 2,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 2,
            _ => 3,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
