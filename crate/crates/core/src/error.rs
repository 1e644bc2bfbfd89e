use crate::model::Level;

/// Errors produced by the chain construction, solvers and analyses.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("level (J={j}, M={m}) is outside the state space for N={n}")]
    InvalidLevel { j: i64, m: i64, n: u32 },

    #[error("state index {index} out of range (state count {count})")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("generator has no unique stationary distribution: {0}")]
    SingularOrNonUnique(String),

    #[error("iteration did not converge after {iterations} steps (last change {last_change:e})")]
    NotConverged { iterations: u64, last_change: f64 },

    #[error("entropy production diverges on one-way edge {from} -> {to}")]
    DivergentEntropy { from: Level, to: Level },

    #[error("steady-state intensity is zero; g2 is undefined")]
    DarkState,

    #[error("negative weight {value:e} at index {index} exceeds roundoff tolerance")]
    NegativeWeight { index: usize, value: f64 },

    #[error("empty averaging window: burn-in {t_burn} is not before end time {t_end}")]
    EmptyWindow { t_burn: f64, t_end: f64 },

    #[error("too few events: need at least {needed}, found {found}")]
    TooFewEvents { needed: usize, found: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
