use thiserror::Error;

/// Unified error type for every fallible operation in the crate.
///
/// Numerical thresholds are reported in f64 regardless of the working
/// scalar type so that error messages stay printable and comparable.
#[derive(Debug, Error)]
pub enum OpcertError {
    #[error("matrix must have dimension at least 1")]
    EmptyMatrix,

    #[error(
        "matrix is not Hermitian: asymmetry {deviation:.3e} exceeds tolerance {tolerance:.3e}"
    )]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("{what}: iterative solver failed to converge")]
    NonConvergence { what: &'static str },

    #[error("domain violation: {what}")]
    DomainViolation { what: String },

    #[error("tuple does not commute: residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    NotCommuting { residual: f64, tolerance: f64 },

    #[error("kernel arity mismatch: expected {expected} arguments, got {got}")]
    ArityMismatch { expected: usize, got: usize },

    #[error("differential is numerically singular: smallest Loewner entry {min_abs:.3e} below threshold {threshold:.3e}")]
    SingularDifferential { min_abs: f64, threshold: f64 },

    #[error("kernel {kernel} has no registered integral form")]
    NoIntegralForm { kernel: String },

    #[error("unknown map id: {name}")]
    UnknownMap { name: String },

    #[error("unknown crosscheck id: {name}")]
    UnknownCheck { name: String },

    #[error("bad parameter: {what}")]
    BadParameter { what: String },
}

pub type Result<T> = std::result::Result<T, OpcertError>;
