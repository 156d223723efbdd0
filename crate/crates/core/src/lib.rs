//! Solver library for a class of continuous-time, finite-player, general-sum
//! stochastic differential games whose coupled Hamilton-Jacobi-Bellman system
//! becomes linear after a matrix-valued logarithmic change of variables.
//!
//! Each player steers a diffusion
//!
//! ```text
//! dx_t = f(x_t) dt + g(x_t) (u_t^i dt + dw_t^i)
//! ```
//!
//! and pays a running/terminal state cost plus a KL penalty against a nominal
//! plan and cross log-likelihood terms coupling it to the other players. With
//! an interaction matrix `alpha` (and `beta = alpha^-1`) weighting those
//! terms, the desirability variables
//!
//! ```text
//! Z_i(t, x) = exp(-sum_j beta_ij J_j(t, x))
//! ```
//!
//! satisfy *decoupled linear* parabolic PDEs, so each `Z_i` has a Feynman-Kac
//! representation as an expectation over forward reference paths. Everything
//! in this crate flows from that fact:
//!
//! - [`game`] — game definitions, the interaction matrix, the log transform;
//! - [`sde`] — seeded, reproducible Euler-Maruyama path sampling;
//! - [`desirability`] — interaction-adjusted path costs and Monte Carlo
//!   estimates of `Z_i`;
//! - [`control`] — the sampling-based feedback control law and closed-loop
//!   equilibrium rollouts;
//! - [`measure`] — exponential tilting of reference ensembles, path-space
//!   likelihood ratios, and cost-equivalence checks;
//! - [`oracle`] — independent finite-difference and Riccati solvers used to
//!   verify the sampler;
//! - [`experiment`] — the reproducible two-player experiment suite with CSV
//!   artifacts.

pub mod control;
pub mod desirability;
pub mod error;
pub mod experiment;
pub mod game;
pub mod measure;
pub mod numeric;
pub mod oracle;
pub mod sde;
pub mod seeding;

pub use error::{Error, Result};
pub use game::{
    CenterPath, CostModel, DiffusionModel, DriftModel, DynamicsModel, GameSpec, InteractionMatrix,
    NominalControl,
};
pub use sde::{FeedbackPolicy, TrajectoryBatch};
