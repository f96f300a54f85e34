use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unsupported layout: spatial dimension {spatial_dim}, field dimension {field_dim}")]
    UnsupportedLayout { spatial_dim: usize, field_dim: usize },

    #[error("degenerate density: |d2L/dq_t2| = {0:e} at the zero jet")]
    DegenerateDensity(f64),

    #[error("blend sharpness must be positive, got {0}")]
    InvalidSharpness(f64),

    #[error("jet is missing second derivatives")]
    MissingSecondDerivatives,

    #[error("hermite fit failed: {reason} (nodes: {coords:?})")]
    FitFailure {
        reason: String,
        coords: Vec<Vec<f64>>,
    },

    #[error("point {point:?} lies outside the patch cell")]
    OutsidePatch { point: Vec<f64> },

    #[error("divergence at step {step}, node {node}, round {round}")]
    Divergence {
        step: usize,
        node: usize,
        round: usize,
    },

    #[error("mass matrix collapsed: |det M| = {0:e}")]
    MassMatrixCollapse(f64),

    #[error("implicit solve did not converge within {iterations} iterations (residual {residual:e})")]
    ImplicitSolve { iterations: usize, residual: f64 },

    #[error("adaptive step size underflow: dt = {0:e}")]
    StepSizeUnderflow(f64),

    #[error("grid too small: {0}")]
    GridTooSmall(String),

    #[error("relative L2 undefined: reference norm is zero")]
    UndefinedMetric,

    #[error("training diverged at step {step}: loss = {loss}")]
    TrainingDiverged { step: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u8),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
