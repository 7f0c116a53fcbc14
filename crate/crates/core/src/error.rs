use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RiderError>;

#[derive(Debug, Error)]
pub enum RiderError {
    /// Malformed input: bad shapes, out-of-range parameters, invalid configs.
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("process is not weakly stationary: min root modulus of the AR polynomial is {min_root_modulus:.6}")]
    Nonstationary { min_root_modulus: f64 },

    #[error("weights row has no positive entry; the tilted distribution is undefined")]
    DegenerateWeights,

    #[error("infeasible constraint set: {0}")]
    Infeasible(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{path}: row {row}, column `{column}`: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl RiderError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        RiderError::Validation(msg.into())
    }

    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            RiderError::Singular(_)
                | RiderError::NonConvergence(_)
                | RiderError::Infeasible(_)
                | RiderError::DegenerateWeights
        )
    }
}
