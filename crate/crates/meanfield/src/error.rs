use thiserror::Error;

/// Library-wide error type. Every failure carries a human-readable diagnostic
/// that the CLI prints verbatim before exiting with code 1.
#[derive(Debug, Clone, Error)]
pub enum MfError {
    /// A caller-supplied value violates a precondition (out of domain,
    /// non-finite, unknown kind, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A bracketing scan found no sign change, i.e. the requested fixed
    /// point does not exist (ReLU-style unbounded maps).
    #[error("no variance fixed point: {0}")]
    NoFixedPoint(String),

    /// Fixed-point iteration left the trust region (exploding lengths).
    #[error("iteration diverged: {0}")]
    Diverged(String),

    /// An internal numerical guard tripped (degenerate denominator,
    /// quadrature breakdown, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, MfError>;
