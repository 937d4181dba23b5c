use thiserror::Error;

/// Errors produced by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("nonpositive temperature {0} K")]
    NonPositiveTemperature(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid mechanism: {0}")]
    InvalidMechanism(String),

    #[error("unknown species `{0}`")]
    UnknownSpecies(String),

    #[error("operation requires a mass-action mechanism")]
    NotMassAction,

    #[error("vector field vanishes at the evaluation point (equilibrium singularity)")]
    SingularPoint,

    #[error("nonpositive concentration {value} for species index {index}")]
    NonPositiveConcentration { index: usize, value: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("integration exceeded {0} steps")]
    StepLimit(usize),

    #[error("step size underflow at t = {0}")]
    StepTooSmall(f64),

    #[error("Newton iteration failed inside implicit step at t = {0}")]
    NewtonFailure(f64),

    #[error("stop event never triggered before t = {0}")]
    EventNotTriggered(f64),

    #[error("infeasible constraints: {0}")]
    Infeasible(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("Newton solve diverged: {message} (residual {residual:e})")]
    NewtonDivergence {
        message: String,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("degenerate Schur ordering: eigenvalues {0} and {1} share a real part across the gap")]
    DegenerateOrdering(String, String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
