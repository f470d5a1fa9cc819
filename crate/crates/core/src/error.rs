use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} is {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is singular or numerically rank deficient")]
    SingularMatrix,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("line search failed after {evaluations} function evaluations")]
    LineSearchFailure { evaluations: usize },

    #[error("parse error at data row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("duplicate observation for subject `{subject}` at time {time}")]
    DuplicateObservation { subject: String, time: u32 },

    #[error("treatment at data row {row} is {value}; expected 0 or 1")]
    NonBinaryTreatment { row: usize, value: f64 },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("one treatment arm is empty")]
    OneArmEmpty,

    #[error("outcome ranges of the treatment arms do not overlap")]
    NoOverlap,

    #[error("design matrix `{0}` is rank deficient")]
    SingularDesign(String),

    #[error("log-likelihood is not finite at the current parameter")]
    NonFiniteLikelihood,

    #[error("optimizer did not converge: {0}")]
    NoConvergence(String),

    #[error("coefficient index {index} out of range for {len} parameters")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("spline knots must be strictly increasing and at least three")]
    UnsortedKnots,

    #[error("no rows remain after excluding treated observations")]
    AllRowsExcluded,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
