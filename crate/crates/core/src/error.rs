use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("augmented sample {index} has zero degree")]
    IsolatedSample { index: usize },

    #[error("zero marginal on side {side} at index {index}")]
    ZeroMarginal { side: char, index: usize },

    #[error("missing label metadata: {0}")]
    MissingLabels(String),

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("rotation is not orthogonal: max |RᵀR - I| = {deviation:.3e}")]
    NotOrthogonal { deviation: f64 },

    #[error("dimension {dim} has no sample with |f_j(x)| above {tolerance:e}")]
    DeadDimension { dim: usize, tolerance: f64 },

    #[error("features are not sign-canonicalized (dimension {dim})")]
    NotCanonical { dim: usize },

    #[error("normal equations are singular; use ridge > 0")]
    SingularNormalEquations,

    #[error("zero-norm feature row {row}")]
    ZeroNormRow { row: usize },

    #[error("training diverged at step {step}: loss {loss:e} (initial {initial:e})")]
    Diverged { step: usize, loss: f64, initial: f64 },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
