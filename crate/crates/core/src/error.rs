use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid coupling: {0}")]
    InvalidCoupling(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("exact OT solver failed: {message} (residual {residual:e})")]
    OtFailure { message: String, residual: f64 },

    #[error("Sinkhorn did not converge in {iterations} iterations (residual {residual:e})")]
    SinkhornNotConverged { iterations: usize, residual: f64 },

    #[error("degenerate null polytope: {0}")]
    DegeneratePolytope(String),

    #[error("linear program failed: {message}; cost vector {cost:?}")]
    LpFailure { message: String, cost: Vec<f64> },

    #[error("LP is unbounded for cost vector {0:?}")]
    LpUnbounded(Vec<f64>),

    #[error("invalid graph model: {0}")]
    InvalidGraph(String),

    #[error("exhaustive search over {n}! permutations exceeds the cap of {cap}; use relaxed matching")]
    ExhaustiveCapExceeded { n: usize, cap: usize },

    #[error("bootstrap replicate {index} failed: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sweep cell (n={n}, alpha={alpha}, rep={rep}) failed: {source}")]
    SweepCell {
        n: usize,
        alpha: f64,
        rep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
