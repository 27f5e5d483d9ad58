use thiserror::Error;

/// Errors raised by the model functions and solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum WpcsError {
    /// An argument lies outside the domain of a closed-form function.
    #[error("domain error in {func}: {detail}")]
    Domain { func: &'static str, detail: String },

    /// A configuration or profile field violates its invariant.
    #[error("invalid field `{field}`: {detail}")]
    Validation { field: String, detail: String },

    /// A bisection did not reach its tolerance within the iteration cap.
    #[error("{solver} did not converge after {iterations} iterations")]
    Convergence {
        solver: &'static str,
        iterations: usize,
    },

    /// The instance cannot be solved as posed (e.g. raw data cannot be sensed within T).
    #[error("infeasible input: {0}")]
    Infeasible(String),

    /// Transmitting a positive number of bits in zero time.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Brute-force oracles refuse instances whose grid would explode.
    #[error("instance too large for grid oracle: {0}")]
    Size(String),

    /// Block-coordinate ascent produced a reward decrease beyond tolerance.
    #[error("reward decreased from {before} to {after} at iteration {iteration}")]
    NonMonotone {
        iteration: usize,
        before: f64,
        after: f64,
    },
}

pub type Result<T> = std::result::Result<T, WpcsError>;

pub(crate) fn domain(func: &'static str, detail: impl Into<String>) -> WpcsError {
    WpcsError::Domain {
        func,
        detail: detail.into(),
    }
}

pub(crate) fn invalid(field: impl Into<String>, detail: impl Into<String>) -> WpcsError {
    WpcsError::Validation {
        field: field.into(),
        detail: detail.into(),
    }
}
