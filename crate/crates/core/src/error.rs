use std::path::PathBuf;

/// Errors produced by the counting, conditioning and inference routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("series did not converge: {0}")]
    NonConvergence(String),

    #[error("table needs {s_max}x{t_max} counts ({cells} cells), over the budget of {budget} cells")]
    TableTooLarge { s_max: usize, t_max: usize, cells: usize, budget: usize },

    #[error("conditioning outcome t = {t} has probability {probability:e}, below underflow")]
    ImpossibleOutcome { t: u64, probability: f64 },

    #[error("selection rule accepts probability {probability:e}, below underflow")]
    EmptyAcceptance { probability: f64 },

    #[error("Bayes and POVM routes disagree at s = {s}: {bayes:e} vs {povm:e}")]
    RouteMismatch { s: usize, bayes: f64, povm: f64 },

    #[error("omitted spectral weight {tail_bound:e} exceeds {limit:e}")]
    TailTooLarge { tail_bound: f64, limit: f64 },

    #[error("infeasible constraint: {0}")]
    Infeasible(String),

    #[error("degenerate record: {0}")]
    DegenerateRecord(String),

    #[error("malformed input {path:?}: {reason}")]
    Format { path: Option<PathBuf>, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
