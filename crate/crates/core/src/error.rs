use thiserror::Error;

/// Errors raised by the simulation and experiment layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Probability mass beyond the Fock cutoff exceeds the admissible tail.
    #[error("truncation: {what} loses {tail:.3e} beyond cutoff {cutoff} (tolerance {tolerance:.1e})")]
    Truncation {
        what: String,
        cutoff: usize,
        tail: f64,
        tolerance: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A numerical self-consistency check failed.
    #[error("numerical tolerance: {0}")]
    Numerical(String),

    /// Error-propagation sensitivity requires a non-vanishing slope.
    #[error("sensitivity undefined: |dM/deta| = {slope:.3e}")]
    SensitivityUndefined { slope: f64 },

    #[error("configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
