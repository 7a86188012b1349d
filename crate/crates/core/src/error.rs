use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("point {point} lies outside the basis domain [{lo}, {hi}]")]
    Domain { point: f64, lo: f64, hi: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The symmetric system could not be factorized. `pivot` is the offending
    /// squared pivot at row `index`.
    #[error("penalized system is not positive definite (pivot {pivot:e} at row {index})")]
    NotPositiveDefinite { pivot: f64, index: usize },

    #[error("ill-conditioned system: {0}")]
    Conditioning(String),

    #[error("degenerate smoother: tr(S) = {trace} >= n = {n}")]
    DegenerateSmoother { trace: f64, n: usize },

    #[error("lambda selection failed: every grid point produced a degenerate score")]
    NoFiniteScore,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Schema(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
