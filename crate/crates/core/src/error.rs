use thiserror::Error;

/// Errors raised by the simulation and verification routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter lies outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Operands have incompatible shapes.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The truncated Fock space is too small for the requested state.
    #[error("truncation error: tail weight {tail:.3e} exceeds {limit:.1e} at dim {dim}; increase the dimension")]
    Truncation { dim: usize, tail: f64, limit: f64 },

    /// `|upsilon|` is too close to one for the general-dyne branch.
    #[error("homodyne limit: upsilon = {0} requires the homodyne branch")]
    HomodyneLimit(f64),

    /// A linear solve hit a (near-)singular matrix.
    #[error("singular matrix: condition number {condition:.3e} ({context})")]
    Singular { condition: f64, context: String },

    /// A quadrature or iteration failed to converge.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A stochastic step produced an invalid state.
    #[error("integration error at step {step}: {reason}")]
    Integration { step: usize, reason: String },

    /// The step size is too large for the requested accuracy.
    #[error("step-size error at step {step}: trace drift {drift:.3e}")]
    StepSize { step: usize, drift: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
