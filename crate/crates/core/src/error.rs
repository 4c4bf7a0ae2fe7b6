use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("measure has an empty support")]
    EmptySupport,
    #[error("weight at index {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weights sum to zero")]
    ZeroTotalWeight,
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("point {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("point {index} is not on the unit sphere (norm {norm})")]
    OffSphere { index: usize, norm: f64 },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("sinkhorn did not converge after {iterations} iterations (marginal error {marginal_error:e})")]
    NotConverged {
        iterations: usize,
        marginal_error: f64,
    },
    #[error("overflow in scaling-domain iterations; retry with log_domain enabled")]
    Overflow,
    #[error("plan carries mass {mass:e} at ({row}, {col}) where the product measure has none")]
    InfiniteKl { row: usize, col: usize, mass: f64 },
    #[error("threshold grid is invalid: {0}")]
    InvalidGrid(String),
    #[error("curves are defined on different threshold grids")]
    GridMismatch,
    #[error("bootstrap replicate {index} failed: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
