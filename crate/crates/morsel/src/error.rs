//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by parsing, evaluation, geometry and analysis routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Expression source failed to parse.
    #[error("parse error at byte {offset}: {message}")]
    Parse {
        /// Byte offset into the source string where the error was detected.
        offset: usize,
        /// Human-readable description.
        message: String,
    },

    /// Evaluation hit a point outside the domain of a subexpression.
    #[error("domain error in `{subexpr}`: {reason}")]
    Domain { subexpr: String, reason: String },

    /// Gauss-Newton projection onto a constraint system did not converge.
    #[error("projection did not converge after {iterations} iterations (residual {residual:.3e})")]
    ProjectionDiverged { iterations: usize, residual: f64 },

    /// A constraint Jacobian lost rank where full rank was required.
    #[error("rank-deficient constraint system: {0}")]
    RankDeficient(String),

    /// Rejection sampling ran out of attempts.
    #[error("sampling exhausted: produced {got} of {want} points after {attempts} attempts")]
    SamplingExhausted {
        got: usize,
        want: usize,
        attempts: usize,
    },

    /// A scenario file or its parameters are invalid.
    #[error("invalid scenario: {0}")]
    Scenario(String),

    /// A precondition on an operation was not met by the caller.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Requested fiber level lies outside the estimated range of the function.
    #[error("level {level} outside estimated range [{min:.6}, {max:.6}]")]
    LevelOutOfRange { level: f64, min: f64, max: f64 },

    /// An internal cross-check failed; indicates a numerical misclassification upstream.
    #[error("internal consistency: {0}")]
    InternalConsistency(String),
}

impl Error {
    pub(crate) fn domain(subexpr: impl ToString, reason: impl Into<String>) -> Self {
        Error::Domain {
            subexpr: subexpr.to_string(),
            reason: reason.into(),
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
