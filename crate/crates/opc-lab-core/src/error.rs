//! Error type shared by all core modules.

use thiserror::Error;

/// Result alias used across the crate.
pub type LabResult<T> = Result<T, LabError>;

/// Errors produced by core operations.
#[derive(Error, Debug)]
pub enum LabError {
    /// Incompatible vector/matrix dimensions for an operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A parameter violates an operation's contract.
    #[error("invalid argument for {context}: {message}")]
    InvalidArgument {
        context: &'static str,
        message: String,
    },

    /// Least-squares regressor matrix is rank-deficient.
    #[error("rank-deficient least-squares fit: no variation in {dimension}")]
    SingularFit { dimension: String },

    /// A linear system is numerically singular.
    #[error("singular system matrix in {context}: reciprocal condition {rcond:.3e}")]
    SingularSystem { context: &'static str, rcond: f64 },

    /// A reference-trajectory index walked past the recorded data.
    #[error("reference data exhausted: trajectory {b} has no transition at t={t}")]
    OutOfData { t: usize, b: usize },

    /// A matrix that must be positive semi-definite is not.
    #[error("matrix in {context} is not positive semi-definite (eigenvalue {eigenvalue:.3e})")]
    NotPsd {
        context: &'static str,
        eigenvalue: f64,
    },

    /// Closed-loop dynamics are unstable where stability is required.
    #[error("unstable closed loop in {context}: |{gain}| >= 1")]
    Unstable { context: &'static str, gain: f64 },

    /// A numeric evaluation produced a non-finite value.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// An operation that needs samples received none.
    #[error("empty input for {context}")]
    EmptyInput { context: &'static str },

    /// CSV (de)serialization failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Filesystem failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A field failed to parse while reading a serialized table.
    #[error("parse error in {context}: {message}")]
    Parse {
        context: &'static str,
        message: String,
    },
}
