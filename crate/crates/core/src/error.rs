use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("negative input: {what} = {value:e} at index {index}")]
    NegativeInput {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("monotonicity lost: min increment {min_increment:e} at node {node} (tolerance {tol:e})")]
    MonotonicityLoss {
        node: usize,
        min_increment: f64,
        tol: f64,
    },

    #[error("singular tridiagonal system at row {0}")]
    Singular(usize),

    #[error("nonpositive Green lower bound {0:e}")]
    NonpositiveBound(f64),

    #[error("shooting diverged at r = {r:e} (v = {v:e})")]
    Diverged { r: f64, v: f64 },

    #[error("no sign change of v(R) for a = {a} on lambda in (0, {lambda_hi:e}]")]
    NoBracket { a: f64, lambda_hi: f64 },

    #[error("supersolution construction failed: {0}")]
    Construction(String),

    #[error("time step collapsed to {dt:e} at t = {t:e}")]
    StepCollapse { t: f64, dt: f64 },
}

pub type Result<T> = std::result::Result<T, KsError>;
