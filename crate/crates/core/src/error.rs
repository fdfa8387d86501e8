//! Error type shared by all library modules.

use thiserror::Error;

/// Errors produced by problem setup, geometry queries, transform
/// construction, and the simulation/estimation pipeline.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Invalid argument (sizes, non-divisor step counts, malformed inputs).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Query outside the domain where the operation is well defined
    /// (e.g. projection from the center of a sphere).
    #[error("domain error: {0}")]
    Domain(String),

    /// A model assumption required by the transform is violated
    /// (degenerate noise on the surface, uncertifiable contraction, ...).
    #[error("model assumption violated: {0}")]
    Model(String),

    /// Numerical failure during evaluation or iteration.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Drift or diffusion returned a non-finite value along a path.
    #[error("non-finite {quantity} at step {step}, state {state:?}")]
    NonFinite {
        quantity: &'static str,
        step: usize,
        state: Vec<f64>,
    },

    /// Rejection sampling exhausted its attempt budget.
    #[error("sampling failed: {0}")]
    Sampling(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
