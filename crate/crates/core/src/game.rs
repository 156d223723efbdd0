//! Game definitions: dynamics, per-player costs, nominal policies, the
//! interaction matrix, and the logarithmic (Cole-Hopf) change of variables
//! between value functions and desirability functions.
//!
//! The interaction matrix `alpha` weights each player's own KL control
//! penalty (`alpha_ii`) and the cross log-likelihood couplings (`alpha_ij`).
//! Its inverse `beta` is what mixes the players' running and terminal costs
//! inside each decoupled linear PDE, so it is computed once, validated, and
//! carried alongside `alpha`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bound on the interaction matrix condition number. Above this the
/// `beta` entries are garbage amplifiers and construction fails fast.
pub const DEFAULT_COND_BOUND: f64 = 1e8;

/// Default guard on log-transform exponent magnitudes.
pub const DEFAULT_EXP_GUARD: f64 = 700.0;

// ---------------------------------------------------------------------------
// Interaction matrix
// ---------------------------------------------------------------------------

/// Player interaction weights `alpha` together with `beta = alpha^-1`.
///
/// Invariants established at construction:
/// - all diagonal entries of `alpha` are strictly positive,
/// - `alpha * beta` and `beta * alpha` equal the identity to 1e-10 entrywise,
/// - the condition number is finite and below the configured bound.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    alpha: DMatrix<f64>,
    beta: DMatrix<f64>,
    condition_number: f64,
}

impl InteractionMatrix {
    /// Build from raw entries with the default condition-number bound.
    pub fn new(alpha: DMatrix<f64>) -> Result<Self> {
        Self::with_cond_bound(alpha, DEFAULT_COND_BOUND)
    }

    /// Build from raw entries, inverting by dense LU and validating the
    /// round-trip identity and the condition number.
    pub fn with_cond_bound(alpha: DMatrix<f64>, cond_bound: f64) -> Result<Self> {
        if !alpha.is_square() || alpha.nrows() == 0 {
            return Err(Error::InvalidSpec(
                "interaction matrix must be square and non-empty".into(),
            ));
        }
        for i in 0..alpha.nrows() {
            let d = alpha[(i, i)];
            if !(d > 0.0) {
                return Err(Error::NonPositiveDiagonal { index: i, value: d });
            }
        }
        let svd = alpha.clone().svd(false, false);
        let s_max = svd.singular_values.max();
        let s_min = svd.singular_values.min();
        let cond = if s_min > 0.0 {
            s_max / s_min
        } else {
            f64::INFINITY
        };
        if !cond.is_finite() || cond > cond_bound {
            return Err(Error::SingularMatrix {
                cond,
                bound: cond_bound,
            });
        }
        let beta = alpha
            .clone()
            .lu()
            .try_inverse()
            .ok_or(Error::SingularMatrix {
                cond,
                bound: cond_bound,
            })?;
        let n = alpha.nrows();
        let id = DMatrix::<f64>::identity(n, n);
        let round_trip = (&alpha * &beta - &id).abs().max();
        let round_trip_rev = (&beta * &alpha - &id).abs().max();
        if round_trip > 1e-10 || round_trip_rev > 1e-10 {
            return Err(Error::SingularMatrix {
                cond,
                bound: cond_bound,
            });
        }
        Ok(InteractionMatrix {
            alpha,
            beta,
            condition_number: cond,
        })
    }

    /// Identity interaction of the given size: fully decoupled players.
    pub fn identity(players: usize) -> Self {
        let id = DMatrix::<f64>::identity(players, players);
        InteractionMatrix {
            alpha: id.clone(),
            beta: id,
            condition_number: 1.0,
        }
    }

    /// Symmetric two-player coupling `[[1, gamma], [gamma, 1]]`.
    ///
    /// Positive `gamma` is repulsive (players avoid overlap), negative
    /// `gamma` attractive. Requires `|gamma| < 1` for nonsingularity.
    pub fn two_player(gamma: f64) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(2, 2, &[1.0, gamma, gamma, 1.0]))
    }

    /// Non-reciprocal two-player coupling `[[1, -gamma], [gamma, 1]]`:
    /// one player is penalized for overlap while the other is drawn to it.
    pub fn two_player_asymmetric(gamma: f64) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(2, 2, &[1.0, -gamma, gamma, 1.0]))
    }

    pub fn players(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub fn beta(&self) -> &DMatrix<f64> {
        &self.beta
    }

    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }

    /// True when `alpha` is exactly the identity (fully decoupled players).
    pub fn is_identity(&self) -> bool {
        let n = self.players();
        (0..n).all(|i| (0..n).all(|j| self.alpha[(i, j)] == if i == j { 1.0 } else { 0.0 }))
    }
}

/// Forward log transform: `Z_i = exp(-sum_j beta_ij J_j)`.
///
/// Errors with [`Error::Overflow`] if any exponent magnitude exceeds the
/// guard (default 700, just under the f64 overflow threshold), which signals
/// degenerate cost scaling rather than a representable desirability.
pub fn cole_hopf_forward(values: &[f64], interaction: &InteractionMatrix) -> Result<Vec<f64>> {
    cole_hopf_forward_guarded(values, interaction, DEFAULT_EXP_GUARD)
}

/// [`cole_hopf_forward`] with an explicit exponent guard.
pub fn cole_hopf_forward_guarded(
    values: &[f64],
    interaction: &InteractionMatrix,
    guard: f64,
) -> Result<Vec<f64>> {
    let n = interaction.players();
    assert_eq!(values.len(), n, "value vector length must match players");
    let beta = interaction.beta();
    let mut z = Vec::with_capacity(n);
    for i in 0..n {
        let exponent: f64 = -(0..n).map(|j| beta[(i, j)] * values[j]).sum::<f64>();
        if exponent.abs() > guard {
            return Err(Error::Overflow {
                value: exponent.abs(),
                bound: guard,
            });
        }
        z.push(exponent.exp());
    }
    Ok(z)
}

/// Inverse log transform: `J_i = -sum_j alpha_ij log Z_j`.
///
/// Requires every `Z_j > 0`; composing with [`cole_hopf_forward`] recovers
/// the input to 1e-10 relative accuracy.
pub fn cole_hopf_inverse(z: &[f64], interaction: &InteractionMatrix) -> Result<Vec<f64>> {
    let n = interaction.players();
    assert_eq!(z.len(), n, "desirability vector length must match players");
    for (i, &v) in z.iter().enumerate() {
        if !(v > 0.0) {
            return Err(Error::NonPositiveDesirability { index: i, value: v });
        }
    }
    let logs: Vec<f64> = z.iter().map(|v| v.ln()).collect();
    let alpha = interaction.alpha();
    Ok((0..n)
        .map(|i| -(0..n).map(|j| alpha[(i, j)] * logs[j]).sum::<f64>())
        .collect())
}

// ---------------------------------------------------------------------------
// Dynamics
// ---------------------------------------------------------------------------

/// Drift families. Arbitrary drift functions are a code-level extension
/// point, not a config feature; these closed forms keep the verification
/// oracles exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftModel {
    Zero,
    /// `f(x) = b`.
    Constant { b: Vec<f64> },
    /// `f(x) = A x + b`.
    Linear { a: Vec<Vec<f64>>, b: Vec<f64> },
}

impl DriftModel {
    /// Write `f(x)` into `out`.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            DriftModel::Zero => out.fill(0.0),
            DriftModel::Constant { b } => out.copy_from_slice(b),
            DriftModel::Linear { a, b } => {
                for (r, row) in a.iter().enumerate() {
                    let mut acc = b[r];
                    for (c, &a_rc) in row.iter().enumerate() {
                        acc += a_rc * x[c];
                    }
                    out[r] = acc;
                }
            }
        }
    }

    fn validate(&self, state_dim: usize) -> Result<()> {
        match self {
            DriftModel::Zero => Ok(()),
            DriftModel::Constant { b } if b.len() == state_dim => Ok(()),
            DriftModel::Linear { a, b }
                if b.len() == state_dim
                    && a.len() == state_dim
                    && a.iter().all(|row| row.len() == state_dim) =>
            {
                Ok(())
            }
            _ => Err(Error::InvalidSpec(format!(
                "drift shape incompatible with state dimension {state_dim}"
            ))),
        }
    }
}

/// Diffusion families: a constant `n x m` matrix or a scalar multiple of the
/// identity (requiring `n == m`). State-dependent diffusion is out of scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionModel {
    /// `g = sigma * I`.
    Scalar { sigma: f64 },
    /// Constant rectangular `g`.
    Matrix { g: Vec<Vec<f64>> },
}

impl DiffusionModel {
    /// Accumulate `g * v` into `out` (adds, does not overwrite).
    pub fn apply_add(&self, v: &[f64], out: &mut [f64]) {
        match self {
            DiffusionModel::Scalar { sigma } => {
                for (o, &vi) in out.iter_mut().zip(v) {
                    *o += sigma * vi;
                }
            }
            DiffusionModel::Matrix { g } => {
                for (r, row) in g.iter().enumerate() {
                    let mut acc = 0.0;
                    for (c, &g_rc) in row.iter().enumerate() {
                        acc += g_rc * v[c];
                    }
                    out[r] += acc;
                }
            }
        }
    }

    /// `g^T v` (maps state-space vectors to input space).
    pub fn transpose_apply(&self, v: &[f64], out: &mut [f64]) {
        match self {
            DiffusionModel::Scalar { sigma } => {
                for (o, &vi) in out.iter_mut().zip(v) {
                    *o = sigma * vi;
                }
            }
            DiffusionModel::Matrix { g } => {
                out.fill(0.0);
                for (r, row) in g.iter().enumerate() {
                    for (c, &g_rc) in row.iter().enumerate() {
                        out[c] += g_rc * v[r];
                    }
                }
            }
        }
    }

    /// The scalar diffusion coefficient, if this is a one-dimensional model.
    pub fn scalar_1d(&self) -> Option<f64> {
        match self {
            DiffusionModel::Scalar { sigma } => Some(*sigma),
            DiffusionModel::Matrix { g } if g.len() == 1 && g[0].len() == 1 => Some(g[0][0]),
            _ => None,
        }
    }

    fn input_dim(&self, state_dim: usize) -> Result<usize> {
        match self {
            DiffusionModel::Scalar { sigma } => {
                if !sigma.is_finite() {
                    return Err(Error::InvalidSpec("diffusion sigma must be finite".into()));
                }
                Ok(state_dim)
            }
            DiffusionModel::Matrix { g } => {
                if g.len() != state_dim || g.is_empty() {
                    return Err(Error::InvalidSpec(format!(
                        "diffusion matrix must have {state_dim} rows"
                    )));
                }
                let m = g[0].len();
                if m == 0 || g.iter().any(|row| row.len() != m) {
                    return Err(Error::InvalidSpec(
                        "diffusion matrix rows must be non-empty and equal length".into(),
                    ));
                }
                Ok(m)
            }
        }
    }
}

/// State dynamics `dx = f(x) dt + g (u dt + dw)` with `x` in `R^n`,
/// inputs in `R^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel {
    pub drift: DriftModel,
    pub diffusion: DiffusionModel,
    state_dim: usize,
    input_dim: usize,
}

impl DynamicsModel {
    pub fn new(drift: DriftModel, diffusion: DiffusionModel, state_dim: usize) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::InvalidSpec("state dimension must be positive".into()));
        }
        drift.validate(state_dim)?;
        let input_dim = diffusion.input_dim(state_dim)?;
        Ok(DynamicsModel {
            drift,
            diffusion,
            state_dim,
            input_dim,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
}

// ---------------------------------------------------------------------------
// Costs
// ---------------------------------------------------------------------------

/// Well-center path `m(t)`: constant, or moving linearly from the origin to
/// `c` over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CenterPath {
    Constant { c: Vec<f64> },
    /// `m(t) = c * (t / T)`.
    LinearInTime { c: Vec<f64> },
}

impl CenterPath {
    pub fn coord_at(&self, coord: usize, t: f64, horizon: f64) -> f64 {
        match self {
            CenterPath::Constant { c } => c[coord],
            CenterPath::LinearInTime { c } => c[coord] * (t / horizon),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CenterPath::Constant { c } | CenterPath::LinearInTime { c } => c.len(),
        }
    }
}

/// Per-player running cost family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RunningCost {
    Zero,
    /// `(q/2) * |x - m(t)|^2`.
    QuadraticWell { q: f64, center: CenterPath },
}

/// Per-player terminal cost family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalCost {
    Zero,
    /// `(q_t/2) * |x - m(T)|^2`, with `m` evaluated at the horizon.
    Quadratic { q_t: f64, center: CenterPath },
}

/// One player's running and terminal state costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub running: RunningCost,
    pub terminal: TerminalCost,
}

impl CostModel {
    pub fn zero() -> Self {
        CostModel {
            running: RunningCost::Zero,
            terminal: TerminalCost::Zero,
        }
    }

    /// Running cost `C(t, x)`.
    pub fn running_at(&self, t: f64, x: &[f64], horizon: f64) -> f64 {
        match &self.running {
            RunningCost::Zero => 0.0,
            RunningCost::QuadraticWell { q, center } => {
                let mut acc = 0.0;
                for (coord, &xc) in x.iter().enumerate() {
                    let d = xc - center.coord_at(coord, t, horizon);
                    acc += d * d;
                }
                0.5 * q * acc
            }
        }
    }

    /// Terminal cost `Psi(x)`.
    pub fn terminal_at(&self, x: &[f64], horizon: f64) -> f64 {
        match &self.terminal {
            TerminalCost::Zero => 0.0,
            TerminalCost::Quadratic { q_t, center } => {
                let mut acc = 0.0;
                for (coord, &xc) in x.iter().enumerate() {
                    let d = xc - center.coord_at(coord, horizon, horizon);
                    acc += d * d;
                }
                0.5 * q_t * acc
            }
        }
    }

    fn validate(&self, state_dim: usize) -> Result<()> {
        if let RunningCost::QuadraticWell { q, center } = &self.running {
            if !(*q >= 0.0) {
                return Err(Error::InvalidSpec("running stiffness q must be >= 0".into()));
            }
            if center.dim() != state_dim {
                return Err(Error::InvalidSpec(
                    "running cost center dimension mismatch".into(),
                ));
            }
        }
        if let TerminalCost::Quadratic { q_t, center } = &self.terminal {
            if !(*q_t >= 0.0) {
                return Err(Error::InvalidSpec(
                    "terminal stiffness q_t must be >= 0".into(),
                ));
            }
            if center.dim() != state_dim {
                return Err(Error::InvalidSpec(
                    "terminal cost center dimension mismatch".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Nominal (reference) feedback control for one player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NominalControl {
    Zero,
    Constant { u: Vec<f64> },
}

impl NominalControl {
    pub fn eval_into(&self, out: &mut [f64]) {
        match self {
            NominalControl::Zero => out.fill(0.0),
            NominalControl::Constant { u } => out.copy_from_slice(u),
        }
    }

    fn validate(&self, input_dim: usize) -> Result<()> {
        match self {
            NominalControl::Zero => Ok(()),
            NominalControl::Constant { u } if u.len() == input_dim => Ok(()),
            _ => Err(Error::InvalidSpec(
                "nominal control dimension mismatch".into(),
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Game spec
// ---------------------------------------------------------------------------

/// Full game definition: shared dynamics, per-player costs and nominal
/// controls, the interaction matrix, the horizon and its discretization.
///
/// Immutable after construction; cheap to clone and safe to share across
/// worker threads.
///
/// Serializes to/from the JSON document
/// `{players, horizon, dt, initial_state, dynamics: {drift, diffusion},
/// costs: [{running, terminal}], nominal_controls, alpha}`; unknown fields
/// are rejected and all structural invariants are re-validated on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GameSpecDoc", into = "GameSpecDoc")]
pub struct GameSpec {
    players: usize,
    dynamics: DynamicsModel,
    costs: Vec<CostModel>,
    nominal_controls: Vec<NominalControl>,
    interaction: InteractionMatrix,
    horizon: f64,
    dt: f64,
    initial_state: Vec<f64>,
    steps: usize,
}

impl GameSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dynamics: DynamicsModel,
        costs: Vec<CostModel>,
        nominal_controls: Vec<NominalControl>,
        interaction: InteractionMatrix,
        horizon: f64,
        dt: f64,
        initial_state: Vec<f64>,
    ) -> Result<Self> {
        let players = interaction.players();
        if costs.len() != players {
            return Err(Error::InvalidSpec(format!(
                "expected {players} cost models, got {}",
                costs.len()
            )));
        }
        if nominal_controls.len() != players {
            return Err(Error::InvalidSpec(format!(
                "expected {players} nominal controls, got {}",
                nominal_controls.len()
            )));
        }
        if !(horizon > 0.0) {
            return Err(Error::InvalidSpec("horizon must be positive".into()));
        }
        if !(dt > 0.0 && dt <= horizon) {
            return Err(Error::InvalidSpec("dt must satisfy 0 < dt <= horizon".into()));
        }
        let steps_f = horizon / dt;
        let steps = steps_f.round() as usize;
        if steps == 0 || (steps as f64 * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(Error::InvalidSpec(format!(
                "horizon / dt = {steps_f} is not an integer number of steps"
            )));
        }
        if initial_state.len() != dynamics.state_dim() {
            return Err(Error::InvalidSpec(
                "initial state dimension does not match dynamics".into(),
            ));
        }
        if initial_state.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("initial state must be finite".into()));
        }
        for cost in &costs {
            cost.validate(dynamics.state_dim())?;
        }
        for nominal in &nominal_controls {
            nominal.validate(dynamics.input_dim())?;
        }
        Ok(GameSpec {
            players,
            dynamics,
            costs,
            nominal_controls,
            interaction,
            horizon,
            dt,
            initial_state,
            steps,
        })
    }

    pub fn players(&self) -> usize {
        self.players
    }

    pub fn dynamics(&self) -> &DynamicsModel {
        &self.dynamics
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn cost(&self, player: usize) -> &CostModel {
        &self.costs[player]
    }

    pub fn costs(&self) -> &[CostModel] {
        &self.costs
    }

    pub fn nominal_control(&self, player: usize) -> &NominalControl {
        &self.nominal_controls[player]
    }

    pub fn interaction(&self) -> &InteractionMatrix {
        &self.interaction
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of integration steps over the full horizon.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial_state
    }

    /// A copy of this spec with the interaction matrix replaced (used by the
    /// experiment runner to sweep coupling regimes).
    pub fn with_interaction(&self, interaction: InteractionMatrix) -> Result<Self> {
        GameSpec::new(
            self.dynamics.clone(),
            self.costs.clone(),
            self.nominal_controls.clone(),
            interaction,
            self.horizon,
            self.dt,
            self.initial_state.clone(),
        )
    }

    /// The beta-mixed running cost entering player `i`'s linear PDE:
    /// `sum_j beta_ij C_j(t, x)`.
    ///
    /// Terms with `beta_ij == 0` are skipped, so with the identity
    /// interaction the result depends on player `i`'s own cost alone,
    /// bit for bit.
    pub fn mixed_running_cost(&self, player: usize, t: f64, x: &[f64]) -> f64 {
        let beta = self.interaction.beta();
        let mut acc = 0.0;
        for j in 0..self.players {
            let b = beta[(player, j)];
            if b != 0.0 {
                acc += b * self.costs[j].running_at(t, x, self.horizon);
            }
        }
        acc
    }

    /// The beta-mixed terminal cost `sum_j beta_ij Psi_j(x)`.
    pub fn mixed_terminal_cost(&self, player: usize, x: &[f64]) -> f64 {
        let beta = self.interaction.beta();
        let mut acc = 0.0;
        for j in 0..self.players {
            let b = beta[(player, j)];
            if b != 0.0 {
                acc += b * self.costs[j].terminal_at(x, self.horizon);
            }
        }
        acc
    }

    /// Parse a spec from its JSON document form.
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Serialize to the JSON document form (pretty-printed).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialization cannot fail")
    }
}

// ---------------------------------------------------------------------------
// JSON document form
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DynamicsDoc {
    drift: DriftModel,
    diffusion: DiffusionModel,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostDoc {
    running: RunningCost,
    terminal: TerminalCost,
}

/// On-disk schema for [`GameSpec`]. Field names are part of the external
/// interface; do not rename.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSpecDoc {
    players: usize,
    horizon: f64,
    dt: f64,
    initial_state: Vec<f64>,
    dynamics: DynamicsDoc,
    costs: Vec<CostDoc>,
    nominal_controls: Vec<NominalControl>,
    alpha: Vec<Vec<f64>>,
}

impl TryFrom<GameSpecDoc> for GameSpec {
    type Error = Error;

    fn try_from(doc: GameSpecDoc) -> Result<Self> {
        let n = doc.players;
        if n == 0 {
            return Err(Error::InvalidSpec("players must be >= 1".into()));
        }
        if doc.alpha.len() != n || doc.alpha.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidSpec(format!(
                "alpha must be a {n}x{n} matrix matching `players`"
            )));
        }
        let flat: Vec<f64> = doc.alpha.iter().flatten().copied().collect();
        let interaction = InteractionMatrix::new(DMatrix::from_row_slice(n, n, &flat))?;
        let state_dim = doc.initial_state.len();
        let dynamics = DynamicsModel::new(doc.dynamics.drift, doc.dynamics.diffusion, state_dim)?;
        let costs = doc
            .costs
            .into_iter()
            .map(|c| CostModel {
                running: c.running,
                terminal: c.terminal,
            })
            .collect();
        GameSpec::new(
            dynamics,
            costs,
            doc.nominal_controls,
            interaction,
            doc.horizon,
            doc.dt,
            doc.initial_state,
        )
    }
}

impl From<GameSpec> for GameSpecDoc {
    fn from(spec: GameSpec) -> Self {
        let n = spec.players;
        let alpha = (0..n)
            .map(|i| (0..n).map(|j| spec.interaction.alpha()[(i, j)]).collect())
            .collect();
        GameSpecDoc {
            players: n,
            horizon: spec.horizon,
            dt: spec.dt,
            initial_state: spec.initial_state,
            dynamics: DynamicsDoc {
                drift: spec.dynamics.drift,
                diffusion: spec.dynamics.diffusion,
            },
            costs: spec
                .costs
                .into_iter()
                .map(|c| CostDoc {
                    running: c.running,
                    terminal: c.terminal,
                })
                .collect(),
            nominal_controls: spec.nominal_controls,
            alpha,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_player_spec(gamma: f64, q: f64, q_t: f64, a: f64) -> GameSpec {
        let dynamics = DynamicsModel::new(
            DriftModel::Zero,
            DiffusionModel::Scalar { sigma: 1.0 },
            1,
        )
        .unwrap();
        let costs = vec![
            CostModel {
                running: RunningCost::QuadraticWell {
                    q,
                    center: CenterPath::LinearInTime { c: vec![-a] },
                },
                terminal: TerminalCost::Quadratic {
                    q_t,
                    center: CenterPath::LinearInTime { c: vec![-a] },
                },
            },
            CostModel {
                running: RunningCost::QuadraticWell {
                    q,
                    center: CenterPath::LinearInTime { c: vec![a] },
                },
                terminal: TerminalCost::Quadratic {
                    q_t,
                    center: CenterPath::LinearInTime { c: vec![a] },
                },
            },
        ];
        GameSpec::new(
            dynamics,
            costs,
            vec![NominalControl::Zero, NominalControl::Zero],
            InteractionMatrix::two_player(gamma).unwrap(),
            1.0,
            0.01,
            vec![0.0],
        )
        .unwrap()
    }

    #[test]
    fn identity_interaction_inverts_to_identity() {
        let im = InteractionMatrix::new(DMatrix::identity(2, 2)).unwrap();
        assert_eq!(im.beta(), &DMatrix::identity(2, 2));
        assert_eq!(im.condition_number(), 1.0);
    }

    #[test]
    fn two_player_beta_matches_hand_inverse() {
        // [[1, 0.6], [0.6, 1]]^-1 = [[1.5625, -0.9375], [-0.9375, 1.5625]]
        let im = InteractionMatrix::two_player(0.6).unwrap();
        let beta = im.beta();
        assert_relative_eq!(beta[(0, 0)], 1.5625, max_relative = 1e-12);
        assert_relative_eq!(beta[(0, 1)], -0.9375, max_relative = 1e-12);
        assert_relative_eq!(beta[(1, 0)], -0.9375, max_relative = 1e-12);
        assert_relative_eq!(beta[(1, 1)], 1.5625, max_relative = 1e-12);
    }

    #[test]
    fn rank_one_matrix_is_rejected() {
        let alpha = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match InteractionMatrix::new(alpha) {
            Err(Error::SingularMatrix { .. }) => {}
            other => panic!("expected SingularMatrix, got {other:?}"),
        }
    }

    #[test]
    fn non_positive_diagonal_is_rejected() {
        let alpha = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match InteractionMatrix::new(alpha) {
            Err(Error::NonPositiveDiagonal { index: 1, .. }) => {}
            other => panic!("expected NonPositiveDiagonal, got {other:?}"),
        }
    }

    #[test]
    fn cond_bound_is_enforced() {
        let alpha = DMatrix::from_row_slice(2, 2, &[1.0, 0.9999999, 0.9999999, 1.0]);
        match InteractionMatrix::with_cond_bound(alpha, 1e5) {
            Err(Error::SingularMatrix { cond, bound }) => {
                assert!(cond > bound);
            }
            other => panic!("expected SingularMatrix, got {other:?}"),
        }
    }

    #[test]
    fn forward_transform_zero_values() {
        let im = InteractionMatrix::two_player(0.3).unwrap();
        let z = cole_hopf_forward(&[0.0, 0.0], &im).unwrap();
        assert_eq!(z, vec![1.0, 1.0]);
    }

    #[test]
    fn forward_transform_decoupled() {
        let im = InteractionMatrix::identity(2);
        let z = cole_hopf_forward(&[2.0, 3.0], &im).unwrap();
        assert_relative_eq!(z[0], (-2.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(z[1], (-3.0f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn forward_transform_row_sum_case() {
        // beta row sums for gamma = 0.6 are 1/(1+gamma) = 0.625.
        let im = InteractionMatrix::two_player(0.6).unwrap();
        let z = cole_hopf_forward(&[1.0, 1.0], &im).unwrap();
        assert_relative_eq!(z[0], (-0.625f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(z[1], (-0.625f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn forward_transform_overflow_guard() {
        let im = InteractionMatrix::identity(1);
        match cole_hopf_forward(&[-800.0], &im) {
            Err(Error::Overflow { .. }) => {}
            other => panic!("expected Overflow, got {other:?}"),
        }
    }

    #[test]
    fn inverse_transform_trivial_cases() {
        let im = InteractionMatrix::two_player(0.4).unwrap();
        assert_eq!(cole_hopf_inverse(&[1.0, 1.0], &im).unwrap(), vec![0.0, 0.0]);

        let id = InteractionMatrix::identity(2);
        let j = cole_hopf_inverse(&[(-1.0f64).exp(), (-4.0f64).exp()], &id).unwrap();
        assert_relative_eq!(j[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(j[1], 4.0, max_relative = 1e-12);
    }

    #[test]
    fn inverse_transform_rejects_non_positive() {
        let im = InteractionMatrix::identity(2);
        match cole_hopf_inverse(&[1.0, 0.0], &im) {
            Err(Error::NonPositiveDesirability { index: 1, .. }) => {}
            other => panic!("expected NonPositiveDesirability, got {other:?}"),
        }
    }

    #[test]
    fn mixed_running_cost_examples() {
        // gamma = 0: player 1's own cost only. q = 1, m1(t) = -t/T, x = 0,
        // t = T = 1 gives C1 = 0.5.
        let spec = {
            let mut s = two_player_spec(0.0, 1.0, 1.0, 1.0);
            s.interaction = InteractionMatrix::identity(2);
            s
        };
        assert_relative_eq!(spec.mixed_running_cost(0, 1.0, &[0.0]), 0.5);

        // gamma = 0.6, symmetric wells at x = 0: C1 = C2 = 0.5, so the mix is
        // (beta_11 + beta_12) * 0.5 = 0.3125.
        let spec = two_player_spec(0.6, 1.0, 1.0, 1.0);
        assert_relative_eq!(
            spec.mixed_running_cost(0, 1.0, &[0.0]),
            0.3125,
            max_relative = 1e-12
        );
    }

    #[test]
    fn mixed_cost_zero_for_zero_costs() {
        let dynamics = DynamicsModel::new(
            DriftModel::Zero,
            DiffusionModel::Scalar { sigma: 1.0 },
            1,
        )
        .unwrap();
        let spec = GameSpec::new(
            dynamics,
            vec![CostModel::zero(), CostModel::zero()],
            vec![NominalControl::Zero, NominalControl::Zero],
            InteractionMatrix::two_player(0.6).unwrap(),
            1.0,
            0.1,
            vec![0.0],
        )
        .unwrap();
        for t in [0.0, 0.5, 1.0] {
            assert_eq!(spec.mixed_running_cost(0, t, &[2.5]), 0.0);
            assert_eq!(spec.mixed_running_cost(1, t, &[-2.5]), 0.0);
        }
    }

    #[test]
    fn identity_interaction_mixed_cost_is_own_cost() {
        let mut spec = two_player_spec(0.0, 2.0, 3.0, 1.0);
        spec.interaction = InteractionMatrix::identity(2);
        for (t, x) in [(0.0, 0.3), (0.4, -1.2), (1.0, 0.0)] {
            let own = spec.cost(0).running_at(t, &[x], 1.0);
            assert_eq!(spec.mixed_running_cost(0, t, &[x]), own);
        }
    }

    #[test]
    fn quadratic_well_nonnegative_and_zero_at_center() {
        let cost = CostModel {
            running: RunningCost::QuadraticWell {
                q: 2.0,
                center: CenterPath::LinearInTime { c: vec![-1.0] },
            },
            terminal: TerminalCost::Zero,
        };
        for t in [0.0, 0.25, 0.5, 1.0] {
            let m = -t;
            assert_eq!(cost.running_at(t, &[m], 1.0), 0.0);
            assert!(cost.running_at(t, &[m + 0.7], 1.0) > 0.0);
        }
    }

    #[test]
    fn json_round_trip_and_unknown_field_rejection() {
        let spec = two_player_spec(0.6, 2.0, 1.0, 1.0);
        let text = spec.to_json();
        let back = GameSpec::from_json(&text).unwrap();
        assert_eq!(spec, back);

        let with_unknown = text.replacen("\"players\"", "\"bogus\": 1, \"players\"", 1);
        assert!(GameSpec::from_json(&with_unknown).is_err());
    }

    #[test]
    fn json_rejects_inconsistent_alpha_shape() {
        let spec = two_player_spec(0.0, 1.0, 1.0, 1.0);
        let text = spec.to_json().replace("\"players\": 2", "\"players\": 3");
        assert!(GameSpec::from_json(&text).is_err());
    }

    #[test]
    fn spec_validation_catches_bad_grids() {
        let dynamics = DynamicsModel::new(
            DriftModel::Zero,
            DiffusionModel::Scalar { sigma: 1.0 },
            1,
        )
        .unwrap();
        let build = |horizon: f64, dt: f64| {
            GameSpec::new(
                dynamics.clone(),
                vec![CostModel::zero()],
                vec![NominalControl::Zero],
                InteractionMatrix::identity(1),
                horizon,
                dt,
                vec![0.0],
            )
        };
        assert!(build(1.0, 0.01).is_ok());
        assert!(build(1.0, 0.3).is_err()); // 1/0.3 not an integer
        assert!(build(0.0, 0.01).is_err());
        assert!(build(1.0, 2.0).is_err());
    }

    fn valid_interaction() -> impl Strategy<Value = DMatrix<f64>> {
        // Diagonally dominant matrices with positive diagonal: nonsingular
        // and well conditioned by construction.
        (1usize..4).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.5f64..2.0, n),
                proptest::collection::vec(-0.4f64..0.4, n * n),
            )
                .prop_map(move |(diag, off)| {
                    let mut m = DMatrix::zeros(n, n);
                    for i in 0..n {
                        for j in 0..n {
                            m[(i, j)] = if i == j {
                                diag[i] + 0.4 * (n as f64)
                            } else {
                                off[i * n + j] / n as f64
                            };
                        }
                    }
                    m
                })
        })
    }

    proptest! {
        #[test]
        fn interaction_round_trip_identity(alpha in valid_interaction()) {
            let im = InteractionMatrix::new(alpha).unwrap();
            let n = im.players();
            let id = DMatrix::<f64>::identity(n, n);
            prop_assert!((im.alpha() * im.beta() - &id).abs().max() < 1e-10);
            prop_assert!((im.beta() * im.alpha() - &id).abs().max() < 1e-10);
        }

        #[test]
        fn cole_hopf_round_trips(
            alpha in valid_interaction(),
            raw in proptest::collection::vec(-5.0f64..5.0, 4),
        ) {
            let im = InteractionMatrix::new(alpha).unwrap();
            let j: Vec<f64> = raw.iter().take(im.players()).copied().collect();
            let z = cole_hopf_forward(&j, &im).unwrap();
            prop_assert!(z.iter().all(|&v| v > 0.0));
            let back = cole_hopf_inverse(&z, &im).unwrap();
            for (a, b) in j.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            }

            // Reverse composition on positive vectors.
            let z0: Vec<f64> = raw.iter().take(im.players()).map(|v| v.abs() + 0.1).collect();
            let j0 = cole_hopf_inverse(&z0, &im).unwrap();
            let z1 = cole_hopf_forward(&j0, &im).unwrap();
            for (a, b) in z0.iter().zip(&z1) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            }
        }
    }
}
