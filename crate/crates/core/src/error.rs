use thiserror::Error;

/// Errors raised by model construction, the solvers, and the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Two matrices (or a matrix and a vector) have incompatible shapes.
    #[error("dimension mismatch between {first} and {second}: {detail}")]
    Dimension {
        first: &'static str,
        second: &'static str,
        detail: String,
    },

    /// A covariance or weight matrix is not symmetric, or not (semi)definite.
    #[error("definiteness violation in {name}: {detail}")]
    Definiteness { name: &'static str, detail: String },

    /// A matrix that must be inverted is numerically singular.
    #[error("singular matrix in {context}: {detail}")]
    Singular { context: &'static str, detail: String },

    /// A fixed-point iteration did not reach its tolerance.
    #[error("{solver} did not converge after {iterations} iterations (last residual {residual:e})")]
    Convergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// An argument is outside its admissible range.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The simulated state left the numerically meaningful range.
    #[error("closed loop diverged at step {step} (state norm {norm:e})")]
    Divergence { step: usize, norm: f64 },

    /// Two independent computations of the same quantity disagree.
    #[error("internal consistency failure: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
