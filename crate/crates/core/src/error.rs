use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite state on path {path} at step {step}")]
    NonFiniteState { path: usize, step: usize },

    #[error("{family}: singular normal equations (rank-deficient design)")]
    Singular { family: &'static str },

    #[error("lasso did not converge after {sweeps} sweeps (last max coefficient change {last_change:e})")]
    NoConvergence { sweeps: usize, last_change: f64 },

    #[error("degenerate features: {0}")]
    Degenerate(String),

    #[error("no fitted model for step {step}, mode {mode}")]
    MissingModel { step: usize, mode: usize },

    #[error("fit failed at step {step}, mode {mode}: {source}")]
    Fit {
        step: usize,
        mode: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("model '{label}': {source}")]
    Model {
        label: String,
        #[source]
        source: Box<Error>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for errors caused by bad input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Invalid(_) | Error::DimensionMismatch { .. } => true,
            Error::Model { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<bincode::Error> for Error {
    fn from(e: bincode::Error) -> Self {
        Error::Format(e.to_string())
    }
}
