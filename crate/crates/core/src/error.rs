//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by game construction, sampling, estimation and the
/// verification oracles.
#[derive(Debug, Error)]
pub enum Error {
    #[error("interaction matrix is singular or ill-conditioned (cond = {cond:.3e}, bound = {bound:.3e})")]
    SingularMatrix { cond: f64, bound: f64 },

    #[error("interaction matrix diagonal entry [{index}][{index}] = {value} must be strictly positive")]
    NonPositiveDiagonal { index: usize, value: f64 },

    #[error("log-transform exponent magnitude {value:.3e} exceeds guard {bound:.3e}; cost scaling is degenerate")]
    Overflow { value: f64, bound: f64 },

    #[error("desirability entry {index} = {value} is not strictly positive")]
    NonPositiveDesirability { index: usize, value: f64 },

    #[error("non-finite state on path {path} at step {step}; dynamics unstable or dt too large")]
    NonFiniteState { path: usize, step: usize },

    #[error("policy returned a non-finite control at t = {t}")]
    NonFiniteControl { t: f64 },

    #[error("effective sample size {ess:.2} below floor {floor}; cost scale overwhelms the sampling budget")]
    DegenerateWeights { ess: f64, floor: f64 },

    #[error("trajectory batch has no recorded controls")]
    MissingControls,

    #[error("query time {t} is not strictly before the horizon T = {horizon}")]
    HorizonExhausted { t: f64, horizon: f64 },

    #[error("kernel bandwidth must be positive, got {0}")]
    BandwidthNonPositive(f64),

    #[error("expected exactly 2 players, got {0}")]
    PlayerCountMismatch(usize),

    #[error("ensembles or fields are on mismatched time/space grids")]
    GridMismatch,

    #[error("solution domain too narrow: boundary sensitivity {probe:.3e} exceeds {tol:.1e} at query points")]
    DomainTooNarrow { probe: f64, tol: f64 },

    #[error("backward PDE step produced a non-positive or non-finite value at time row {row}")]
    InstabilityDetected { row: usize },

    #[error("explicit stepping unstable: dtau = {dtau:.3e} exceeds stability bound {bound:.3e}")]
    ExplicitStepUnstable { dtau: f64, bound: f64 },

    #[error("time {t} does not lie on the dt = {dt} grid starting at {t0}")]
    OffGridTime { t: f64, dt: f64, t0: f64 },

    #[error("invalid game spec: {0}")]
    InvalidSpec(String),

    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
