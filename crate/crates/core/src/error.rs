use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("singular {what} at step {step} (t = {t})")]
    SingularMatrix { what: &'static str, step: usize, t: f64 },

    #[error("perturbed volatility is singular at t = {t} for p = {p}")]
    PerturbationInvalid { t: f64, p: f64 },

    #[error("coefficient evaluation failed on path {path}, step {step}: {reason}")]
    Coefficient { path: usize, step: usize, reason: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("model is not Markovian: {0}")]
    NotMarkovian(String),

    #[error("point {0:?} lies outside the state box")]
    OutOfDomain(Vec<f64>),

    #[error("regression failed at step {step}: {reason}")]
    Regression { step: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
