use thiserror::Error;

/// Errors raised by scenario construction and the solvers.
///
/// Numeric payloads are carried as `f64` so the type stays independent of the
/// scalar parameter.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("diffusivity must be positive, got d = {value} at a = {age}, x = {position}")]
    NonPositiveDiffusivity { age: f64, position: f64, value: f64 },

    #[error("mortality must be nonnegative, got m = {value} at a = {age}, x = {position}")]
    NegativeMortality { age: f64, position: f64, value: f64 },

    #[error("birth kernel has a negative entry {value} at a = {age}")]
    NegativeBirth { age: f64, value: f64 },

    #[error("birth kernel vanishes identically on the age grid")]
    TrivialBirth,

    #[error("coefficient `{name}` is not finite at a = {age}")]
    NonFiniteCoefficient { name: &'static str, age: f64 },

    #[error("coefficient `{name}` has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: &'static str,
        got: (usize, usize),
        expected: (usize, usize),
    },

    #[error(
        "infinite maximal age truncated at a_max requires a negative growth bound, got {growth_bound}"
    )]
    NonDecayingTail { growth_bound: f64 },

    #[error("age {age} outside [0, {a_max}]")]
    AgeOutOfRange { age: f64, a_max: f64 },

    #[error("time {time} is not a multiple of the age step {step}")]
    TimeNotAligned { time: f64, step: f64 },

    #[error("index order violated: need {from} <= {to} <= {n_age}")]
    IndexOrder {
        from: usize,
        to: usize,
        n_age: usize,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("step matrix I - delta A(a) is singular at a = {age}")]
    SingularStep { age: f64 },

    #[error("step operator at a = {age} has a negative entry {value}")]
    NonPositiveStep { age: f64, value: f64 },

    #[error("age step too coarse: delta * |b(0)| / 2 = {value} must stay below 1")]
    CoarseBoundaryStep { value: f64 },

    #[error("power iteration did not converge in {iterations} iterations (residual {residual})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("no sign change of r(Q_lambda) - 1 found for |lambda| up to {bound}")]
    BracketNotFound { bound: f64 },

    #[error(
        "lambda = {lambda} collides with an eigenvalue: r(Q_lambda) = {radius} is within {threshold} of 1"
    )]
    EigenvalueCollision {
        lambda: f64,
        radius: f64,
        threshold: f64,
    },

    #[error("projection normalisation {denom} is not positive")]
    NonPositiveNormalization { denom: f64 },

    #[error("nonlinear mortality returned a negative value {value} at age node {node}")]
    NegativeNonlinearMortality { node: usize, value: f64 },

    #[error("Malthusian parameter {lambda0} must be positive for the nonlinear projection")]
    NonPositiveGrowth { lambda0: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
