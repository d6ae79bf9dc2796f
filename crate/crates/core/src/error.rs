use thiserror::Error;

/// Failures reported by the estimator pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("boundary decomposition error: {0}")]
    Decomposition(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),
    #[error("field mismatch: {0}")]
    Mismatch(String),
    #[error("linear solver failure: {0}")]
    Solver(String),
    #[error("eigensolver did not converge after {iterations} iterations (last relative change {change:.3e})")]
    NoConvergence { iterations: usize, change: f64 },
    #[error("infeasible mean-value correction (cells {cells:?}, robin faces {faces:?})")]
    InfeasibleCorrection { cells: Vec<usize>, faces: Vec<usize> },
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
}

impl Error {
    /// True when the failure means a bound would not be guaranteed, as opposed
    /// to a malformed request.
    pub fn is_hypothesis_violation(&self) -> bool {
        matches!(
            self,
            Error::Hypothesis(_) | Error::Decomposition(_) | Error::InfeasibleCorrection { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
