use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {rule}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        rule: &'static str,
    },

    #[error("strong competition required (a > 1 and b > 1), got a = {a}, b = {b}")]
    NotStrongCompetition { a: f64, b: f64 },

    #[error("time step {dt} violates the monotone stability bound {bound}")]
    UnstableStep { dt: f64, bound: f64 },

    #[error("initial condition does not fit the grid: {0}")]
    InitialCondition(String),

    #[error("discretizations differ: {0}")]
    Mismatch(String),

    #[error("speed {speed} is below the minimal KPP speed {minimal}")]
    BelowMinimalSpeed { speed: f64, minimal: f64 },

    #[error("Newton iteration did not converge after {iterations} steps (residual {residual:e}, speed {speed})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        speed: f64,
    },

    #[error("converged profile is not monotone (worst violation {violation:e} at xi = {xi})")]
    NotMonotone { violation: f64, xi: f64 },

    #[error("perturbed system is not bistable for epsilon = {epsilon}")]
    BistabilityLost { epsilon: f64 },

    #[error("too few usable tail samples ({found}, need {needed})")]
    TailUnderflow { found: usize, needed: usize },

    #[error("evaluation at xi = {xi} is outside the extendable range [{min}, {max}]")]
    OutOfRange { xi: f64, min: f64, max: f64 },

    #[error("wave kind does not match the requested family: {0}")]
    WrongWaveKind(String),

    #[error("regression window rejected: {0}")]
    BadWindow(String),

    #[error("objective is not unimodal on the bracket; local minima at {minima:?}")]
    NotUnimodal { minima: Vec<f64> },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("singular matrix at pivot {0}")]
    Singular(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
