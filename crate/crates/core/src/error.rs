use serde::Serialize;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of the numerical routines.
///
/// Every variant is serializable so the experiment runner can forward the
/// payload verbatim into its JSON diagnostics.
#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum Error {
    #[error("invalid `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("dimension mismatch for `{name}`: expected {expected}, found {found}")]
    DimensionMismatch {
        name: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("kernel is not flagged smooth, its derivative norm is undefined")]
    NonSmoothKernel,

    #[error("state became non-finite at t = {time}")]
    BlowUp { time: f64 },

    #[error("Picard map is not contracting, last distance ratios {ratios:?}")]
    NonContraction { ratios: Vec<f64> },

    #[error("control family has {candidates} sequences, exhaustive limit is {limit}")]
    FamilyTooLarge { candidates: u128, limit: usize },

    #[error("point is outside the domain of T*: |x - z(0)| = {gap}")]
    NotInDomain { gap: f64 },

    #[error("boundary problem routes disagree by {gap:e} (tolerance {tolerance:e})")]
    InconsistentBoundarySolve { gap: f64, tolerance: f64 },

    #[error("B-norm came out negative ({value:e})")]
    NegativeBNorm { value: f64 },

    #[error("value iteration did not converge in {iterations} sweeps, last update {last:e}")]
    NoConvergence {
        iterations: usize,
        last: f64,
        residuals: Vec<f64>,
    },

    #[error("({x}, {y}) lies outside the reduced domain")]
    OutsideDomain { x: f64, y: f64 },

    #[error("i/o failure: {message}")]
    Io { message: String },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io {
            message: e.to_string(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io {
            message: e.to_string(),
        }
    }
}
