use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("rate parameter `{name}` must be positive, got {value}")]
    NonPositiveRate { name: &'static str, value: f64 },

    #[error("scheme parameters are invalid: {0}")]
    InvalidParams(String),

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("invalid problem configuration: {0}")]
    InvalidProblem(String),

    #[error("analytic derivatives are inconsistent: {0}")]
    InconsistentDerivatives(String),

    #[error("diffusion matrix is numerically singular at t = {t} (condition estimate {condition:e})")]
    DegenerateDiffusion { t: f64, condition: f64 },

    #[error("non-finite value encountered{}", node.map(|n| format!(" at node {n}")).unwrap_or_default())]
    NonFiniteValue { node: Option<usize> },

    #[error("grid functions live on different grids")]
    GridMismatch,

    #[error("log-log fit needs at least 3 distinct points, got {0}")]
    FitUnderdetermined(usize),

    #[error("training loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("problem has no analytic solution")]
    MissingAnalyticSolution,

    #[error("invalid exponent p = {p}: need a*p > theta and p > 1")]
    InvalidP { p: f64 },

    #[error("constraint violated: {0}")]
    ConstraintViolated(String),

    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed input: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
