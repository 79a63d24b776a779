use thiserror::Error;

pub type Result<T, E = MvstError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MvstError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("numerical range error: {0}")]
    NumericalRange(String),

    #[error("degenerate scatter matrix for {0}: not positive definite after jitter")]
    DegenerateScatter(String),

    #[error(
        "component {component} is degenerate (effective count {effective_count:.3} < {threshold}); \
         restart the fit with a different seed"
    )]
    DegenerateCluster { component: usize, effective_count: f64, threshold: usize },

    #[error("degenerate initial partition: cluster {cluster} has {count} members (need >= 2)")]
    DegenerateInit { cluster: usize, count: usize },

    #[error("log-likelihood became non-finite at iteration {iteration}")]
    NonFiniteLoglik { iteration: usize },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Dataset { line: usize, message: String },

    #[error("too many failed fits: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl MvstError {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            MvstError::NumericalRange(_)
                | MvstError::NotPositiveDefinite { .. }
                | MvstError::DegenerateScatter(_)
                | MvstError::DegenerateCluster { .. }
                | MvstError::NonFiniteLoglik { .. }
                | MvstError::TooManyFailures { .. }
        )
    }
}
