use alloc::string::String;

/// Errors raised by the core solvers and the evaluation harness.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sinkhorn did not converge after {iterations} iterations (marginal error {marginal_error:e})")]
    NonConvergence { iterations: usize, marginal_error: f64 },

    /// The Gibbs kernel underflowed in standard-domain mode; retry in log domain.
    #[error("numerical underflow in standard-domain sinkhorn (epsilon {epsilon:e})")]
    NumericalUnderflow { epsilon: f64 },

    #[error("invalid transport plan: {0}")]
    InvalidPlan(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is rank deficient (column {column})")]
    RankDeficient { column: usize },

    #[error("empty set: {0}")]
    EmptySet(String),

    #[error("linear algebra failure: {0}")]
    Linalg(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Dimension(alloc::format!($($arg)*))
    };
}

macro_rules! config_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Config(alloc::format!($($arg)*))
    };
}

pub(crate) use {config_err, dim_err};
