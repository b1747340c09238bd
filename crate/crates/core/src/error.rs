use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("Bernoulli polynomial order {0} is not supported (max 8)")]
    UnsupportedOrder(usize),

    #[error("point coordinate {0} lies outside the kernel domain [0, 1]")]
    OutOfDomain(f64),

    #[error("empty point set")]
    EmptyPointSet,

    #[error("Gram matrix is not positive semidefinite: min eigenvalue {min_eigenvalue:e} < -{tolerance:e}")]
    NotPositiveSemidefinite { min_eigenvalue: f64, tolerance: f64 },

    #[error("numerically singular system (residual {residual:e})")]
    NumericalSingularity { residual: f64 },

    #[error("objective or gradient became non-finite at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("no responders in sample")]
    NoResponders,

    #[error("no non-respondents in sample")]
    NoMissing,

    #[error("GCV trace denominator underflowed at lambda = {lambda:e}")]
    DegenerateTrace { lambda: f64 },

    #[error("all tuning scores are non-finite")]
    AllScoresNonFinite,

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("stratum with {size} members is too small for {folds} folds")]
    StratumTooSmall { size: usize, folds: usize },

    #[error("{failed} of {total} replicates failed (limit 1%); first error: {first}")]
    TooManyFailures { failed: usize, total: usize, first: String },
}

pub type Result<T> = std::result::Result<T, Error>;
