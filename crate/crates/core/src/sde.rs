//! Seeded, reproducible Euler-Maruyama simulation of reference and
//! controlled dynamics.
//!
//! Reference paths follow the nominally controlled forward SDE
//!
//! ```text
//! dx = (f(x) + g ubar) dt + g dw,    dw ~ N(0, dt I_m)
//! ```
//!
//! and controlled paths replace `ubar` with a feedback policy `u(t, x)`.
//!
//! Determinism contract: results are a pure function of
//! `(spec, player, t0, x0, paths, seed, policy)` and independent of the
//! number of worker threads. Each path draws from its own counter-based
//! stream (`ChaCha8`, stream = path index), so path `p`'s noise does not
//! depend on how paths are scheduled or how many exist.

use std::io::Write;
use std::sync::Arc;

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::GameSpec;

// ---------------------------------------------------------------------------
// Trajectory batch
// ---------------------------------------------------------------------------

/// A batch of `M` sampled state paths with their driving noise increments
/// and RNG provenance. Immutable once returned.
///
/// Array layouts: `states` is `M x (K+1) x n`, `noises` is `M x K x m`
/// (raw Wiener increments, units sqrt(time)), `controls` when present is
/// `M x K x m`.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    pub states: Array3<f64>,
    pub noises: Array3<f64>,
    pub controls: Option<Array3<f64>>,
    /// Start time of the batch.
    pub t0: f64,
    /// Integration step.
    pub dt: f64,
    /// Seed the batch was drawn with.
    pub seed: u64,
    /// Owning player, if the batch was sampled under a specific player's
    /// reference or control; `None` for shared ensembles.
    pub player: Option<usize>,
}

impl TrajectoryBatch {
    pub fn paths(&self) -> usize {
        self.states.shape()[0]
    }

    /// Number of integration steps `K` (one less than stored time points).
    pub fn steps(&self) -> usize {
        self.noises.shape()[1]
    }

    pub fn state_dim(&self) -> usize {
        self.states.shape()[2]
    }

    pub fn input_dim(&self) -> usize {
        self.noises.shape()[2]
    }

    /// Grid time of step index `k` (0 ..= K).
    pub fn time_at(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Map a time to its grid index, failing if it is off-grid.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        let k = ((t - self.t0) / self.dt).round();
        if k < 0.0 || k > self.steps() as f64 || (self.t0 + k * self.dt - t).abs() > 1e-9 {
            return Err(Error::OffGridTime {
                t,
                dt: self.dt,
                t0: self.t0,
            });
        }
        Ok(k as usize)
    }

    /// Dump as CSV with columns `path, step, t, x_1..x_n [, u_1..u_m]`.
    ///
    /// Control columns are present only when controls were recorded; the
    /// terminal row of each path leaves them empty (no control is applied
    /// at the horizon).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.state_dim();
        let m = self.input_dim();
        write!(out, "path,step,t")?;
        for c in 0..n {
            write!(out, ",x_{}", c + 1)?;
        }
        if self.controls.is_some() {
            for d in 0..m {
                write!(out, ",u_{}", d + 1)?;
            }
        }
        writeln!(out)?;
        for p in 0..self.paths() {
            for k in 0..=self.steps() {
                write!(out, "{},{},{}", p, k, self.time_at(k))?;
                for c in 0..n {
                    write!(out, ",{}", self.states[[p, k, c]])?;
                }
                if let Some(controls) = &self.controls {
                    for d in 0..m {
                        if k < self.steps() {
                            write!(out, ",{}", controls[[p, k, d]])?;
                        } else {
                            write!(out, ",")?;
                        }
                    }
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Feedback policies
// ---------------------------------------------------------------------------

/// A feedback control law `(t, x) -> u`, deterministic given its own internal
/// seed configuration, with a human-readable provenance descriptor.
#[derive(Clone)]
pub struct FeedbackPolicy {
    evaluator: Arc<dyn Fn(f64, &[f64]) -> Result<Vec<f64>> + Send + Sync>,
    descriptor: String,
}

impl FeedbackPolicy {
    /// Wrap a fallible evaluator (e.g. one backed by Monte Carlo sampling).
    pub fn new<F>(descriptor: impl Into<String>, evaluator: F) -> Self
    where
        F: Fn(f64, &[f64]) -> Result<Vec<f64>> + Send + Sync + 'static,
    {
        FeedbackPolicy {
            evaluator: Arc::new(evaluator),
            descriptor: descriptor.into(),
        }
    }

    /// Wrap an infallible closed-form feedback law.
    pub fn from_fn<F>(descriptor: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self::new(descriptor, move |t, x| Ok(f(t, x)))
    }

    /// The constant policy `u(t, x) = u`.
    pub fn constant(u: Vec<f64>) -> Self {
        Self::from_fn(format!("constant {u:?}"), move |_, _| u.clone())
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        (self.evaluator)(t, x)
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }
}

impl std::fmt::Debug for FeedbackPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeedbackPolicy")
            .field("descriptor", &self.descriptor)
            .finish()
    }
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

/// Number of steps from `t0` to the horizon; errors if `t0` is off-grid or
/// not strictly before the horizon.
pub(crate) fn steps_to_horizon(spec: &GameSpec, t0: f64) -> Result<usize> {
    if t0 < 0.0 {
        return Err(Error::InvalidSpec(format!("start time {t0} is negative")));
    }
    if t0 >= spec.horizon() {
        return Err(Error::HorizonExhausted {
            t: t0,
            horizon: spec.horizon(),
        });
    }
    let dt = spec.dt();
    let k = ((spec.horizon() - t0) / dt).round();
    if (t0 + k * dt - spec.horizon()).abs() > 1e-9 * spec.horizon().max(1.0) {
        return Err(Error::OffGridTime { t: t0, dt, t0: 0.0 });
    }
    Ok(k as usize)
}

#[derive(Clone, Copy)]
enum ControlSource<'a> {
    /// Player's nominal control (constant in time and state).
    Nominal,
    Policy(&'a FeedbackPolicy),
}

#[derive(Clone, Copy)]
pub(crate) enum NoiseMode {
    Normal,
    /// Test-only: suppress noise to recover the deterministic ODE skeleton.
    #[cfg_attr(not(test), allow(dead_code))]
    Zero,
}

/// Euler-Maruyama rollout of the reference dynamics
/// `dx = (f + g ubar) dt + g dw` from `(t0, x0)`, retaining states and noise
/// increments. Bitwise deterministic given `(spec, player, t0, x0, paths,
/// seed)`.
pub fn rollout_reference(
    spec: &GameSpec,
    player: usize,
    t0: f64,
    x0: &[f64],
    paths: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    rollout_impl(
        spec,
        player,
        ControlSource::Nominal,
        t0,
        x0,
        paths,
        seed,
        NoiseMode::Normal,
        false,
    )
}

/// Euler-Maruyama rollout of `dx = (f + g u(t, x)) dt + g dw` with the
/// applied controls recorded in the batch.
pub fn rollout_controlled(
    spec: &GameSpec,
    player: usize,
    policy: &FeedbackPolicy,
    t0: f64,
    x0: &[f64],
    paths: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    rollout_impl(
        spec,
        player,
        ControlSource::Policy(policy),
        t0,
        x0,
        paths,
        seed,
        NoiseMode::Normal,
        true,
    )
}

#[cfg(test)]
pub(crate) fn rollout_controlled_zero_noise(
    spec: &GameSpec,
    player: usize,
    policy: &FeedbackPolicy,
    t0: f64,
    x0: &[f64],
    paths: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    rollout_impl(
        spec,
        player,
        ControlSource::Policy(policy),
        t0,
        x0,
        paths,
        seed,
        NoiseMode::Zero,
        true,
    )
}

fn validate_rollout_args(spec: &GameSpec, player: usize, x0: &[f64], paths: usize) -> Result<()> {
    if player >= spec.players() {
        return Err(Error::InvalidSpec(format!(
            "player index {player} out of range (N = {})",
            spec.players()
        )));
    }
    if paths == 0 {
        return Err(Error::InvalidSpec("path count must be >= 1".into()));
    }
    if x0.len() != spec.state_dim() {
        return Err(Error::InvalidSpec(format!(
            "start state dimension {} does not match state dimension {}",
            x0.len(),
            spec.state_dim()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSpec("start state must be finite".into()));
    }
    Ok(())
}

/// Simulate one path into preallocated state/noise/control rows.
#[allow(clippy::too_many_arguments)]
fn simulate_path(
    spec: &GameSpec,
    source: ControlSource<'_>,
    nominal: &[f64],
    t0: f64,
    x0: &[f64],
    steps: usize,
    seed: u64,
    path: usize,
    noise_mode: NoiseMode,
    st: &mut [f64],
    nz: &mut [f64],
    mut ct: Option<&mut [f64]>,
) -> Result<()> {
    let n = spec.state_dim();
    let m = spec.input_dim();
    let dt = spec.dt();
    let sqrt_dt = dt.sqrt();
    let dynamics = spec.dynamics();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);

    let mut x = x0.to_vec();
    let mut drift = vec![0.0; n];
    let mut input = vec![0.0; m];
    let mut control = nominal.to_vec();
    st[..n].copy_from_slice(&x);

    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        let dw = &mut nz[k * m..(k + 1) * m];
        match noise_mode {
            NoiseMode::Normal => {
                for w in dw.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *w = sqrt_dt * z;
                }
            }
            NoiseMode::Zero => dw.fill(0.0),
        }
        if let ControlSource::Policy(policy) = source {
            let u = policy.eval(t, &x)?;
            if u.len() != m {
                return Err(Error::InvalidSpec(format!(
                    "policy returned control of dimension {}, expected {m}",
                    u.len()
                )));
            }
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteControl { t });
            }
            control.copy_from_slice(&u);
        }
        if let Some(ct) = ct.as_deref_mut() {
            ct[k * m..(k + 1) * m].copy_from_slice(&control);
        }
        dynamics.drift.eval_into(&x, &mut drift);
        for ((inp, &u), &w) in input.iter_mut().zip(control.iter()).zip(dw.iter()) {
            *inp = u * dt + w;
        }
        for (xc, &fc) in x.iter_mut().zip(drift.iter()) {
            *xc += fc * dt;
        }
        dynamics.diffusion.apply_add(&input, &mut x);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                path,
                step: k + 1,
            });
        }
        st[(k + 1) * n..(k + 2) * n].copy_from_slice(&x);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn rollout_impl(
    spec: &GameSpec,
    player: usize,
    source: ControlSource<'_>,
    t0: f64,
    x0: &[f64],
    paths: usize,
    seed: u64,
    noise_mode: NoiseMode,
    record_controls: bool,
) -> Result<TrajectoryBatch> {
    validate_rollout_args(spec, player, x0, paths)?;
    let steps = steps_to_horizon(spec, t0)?;
    let n = spec.state_dim();
    let m = spec.input_dim();

    let mut states = Array3::<f64>::zeros((paths, steps + 1, n));
    let mut noises = Array3::<f64>::zeros((paths, steps, m));
    let mut controls = record_controls.then(|| Array3::<f64>::zeros((paths, steps, m)));

    let mut nominal = vec![0.0; m];
    spec.nominal_control(player).eval_into(&mut nominal);

    let state_rows = states.as_slice_mut().expect("contiguous");
    let noise_rows = noises.as_slice_mut().expect("contiguous");

    // Group cheap nominal paths into coarse tasks; policy-driven paths can
    // each hide a Monte Carlo query, so they stay individually stealable.
    let min_paths_per_task = match source {
        ControlSource::Nominal => (FOLD_SERIAL_WORK / (steps.max(1) * 64)).clamp(1, 1024),
        ControlSource::Policy(_) => 1,
    };
    let results: Vec<Result<()>> = match &mut controls {
        Some(ctrl) => {
            let ctrl_rows = ctrl.as_slice_mut().expect("contiguous");
            state_rows
                .par_chunks_mut((steps + 1) * n)
                .zip(noise_rows.par_chunks_mut(steps * m))
                .zip(ctrl_rows.par_chunks_mut(steps * m))
                .with_min_len(min_paths_per_task)
                .enumerate()
                .map(|(p, ((st, nz), ct))| {
                    simulate_path(
                        spec, source, &nominal, t0, x0, steps, seed, p, noise_mode, st, nz,
                        Some(ct),
                    )
                })
                .collect()
        }
        None => state_rows
            .par_chunks_mut((steps + 1) * n)
            .zip(noise_rows.par_chunks_mut(steps * m))
            .with_min_len(min_paths_per_task)
            .enumerate()
            .map(|(p, (st, nz))| {
                simulate_path(
                    spec, source, &nominal, t0, x0, steps, seed, p, noise_mode, st, nz, None,
                )
            })
            .collect(),
    };
    for r in results {
        r?;
    }

    Ok(TrajectoryBatch {
        states,
        noises,
        controls,
        t0,
        dt: spec.dt(),
        seed,
        player: Some(player),
    })
}

// ---------------------------------------------------------------------------
// Streaming fold
// ---------------------------------------------------------------------------

/// Per-task scratch buffers so the hot loop never allocates.
struct FoldScratch {
    x: Vec<f64>,
    drift: Vec<f64>,
    input: Vec<f64>,
    dw: Vec<f64>,
}

impl FoldScratch {
    fn new(n: usize, m: usize) -> Self {
        FoldScratch {
            x: vec![0.0; n],
            drift: vec![0.0; n],
            input: vec![0.0; m],
            dw: vec![0.0; m],
        }
    }
}

/// Below this many Euler steps of total work the fold runs serially: policy
/// queries inside an already-parallel closed-loop rollout are small, and
/// nesting them into rayon costs far more than it buys.
const FOLD_SERIAL_WORK: usize = 1 << 20;

#[allow(clippy::too_many_arguments)]
fn fold_one_path<T, Step, Done>(
    spec: &GameSpec,
    nominal: &[f64],
    t0: f64,
    x0: &[f64],
    steps: usize,
    seed: u64,
    path: usize,
    init: &T,
    step: &Step,
    done: &Done,
    scratch: &mut FoldScratch,
) -> Result<T>
where
    T: Clone,
    Step: Fn(&mut T, usize, f64, &[f64], &[f64]),
    Done: Fn(&mut T, &[f64]),
{
    let dt = spec.dt();
    let sqrt_dt = dt.sqrt();
    let dynamics = spec.dynamics();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    let mut acc = init.clone();
    scratch.x.copy_from_slice(x0);
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        for w in scratch.dw.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = sqrt_dt * z;
        }
        step(&mut acc, k, t, &scratch.x, &scratch.dw);
        dynamics.drift.eval_into(&scratch.x, &mut scratch.drift);
        for ((inp, &u), &w) in scratch
            .input
            .iter_mut()
            .zip(nominal.iter())
            .zip(scratch.dw.iter())
        {
            *inp = u * dt + w;
        }
        for (xc, &fc) in scratch.x.iter_mut().zip(scratch.drift.iter()) {
            *xc += fc * dt;
        }
        dynamics.diffusion.apply_add(&scratch.input, &mut scratch.x);
        if scratch.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                path,
                step: k + 1,
            });
        }
    }
    done(&mut acc, &scratch.x);
    Ok(acc)
}

/// Streaming fold over reference paths: for each path, `step` is called at
/// every grid point with `(acc, k, t_k, x_k, dw_k)` *before* the transition
/// and `done` once with `(acc, x_K)`, without retaining trajectories.
///
/// Draws the exact same noise stream as [`rollout_reference`] with the same
/// `(seed, path)` key, so folded functionals agree bit-for-bit with their
/// batch counterparts. This is the low-memory route for large path counts:
/// memory is `O(paths)` instead of `O(paths * steps)`.
pub fn fold_reference<T, Step, Done>(
    spec: &GameSpec,
    player: usize,
    t0: f64,
    x0: &[f64],
    paths: usize,
    seed: u64,
    init: T,
    step: Step,
    done: Done,
) -> Result<Vec<T>>
where
    T: Clone + Send + Sync,
    Step: Fn(&mut T, usize, f64, &[f64], &[f64]) + Sync,
    Done: Fn(&mut T, &[f64]) + Sync,
{
    validate_rollout_args(spec, player, x0, paths)?;
    let steps = steps_to_horizon(spec, t0)?;
    let n = spec.state_dim();
    let m = spec.input_dim();

    let mut nominal = vec![0.0; m];
    spec.nominal_control(player).eval_into(&mut nominal);

    if paths.saturating_mul(steps) <= FOLD_SERIAL_WORK {
        let mut scratch = FoldScratch::new(n, m);
        let mut out = Vec::with_capacity(paths);
        for p in 0..paths {
            out.push(fold_one_path(
                spec, &nominal, t0, x0, steps, seed, p, &init, &step, &done, &mut scratch,
            )?);
        }
        return Ok(out);
    }

    let results: Vec<Result<T>> = (0..paths)
        .into_par_iter()
        .with_min_len(256)
        .map_init(
            || FoldScratch::new(n, m),
            |scratch, p| {
                fold_one_path(spec, &nominal, t0, x0, steps, seed, p, &init, &step, &done, scratch)
            },
        )
        .collect();
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{
        CostModel, DiffusionModel, DriftModel, DynamicsModel, GameSpec, InteractionMatrix,
        NominalControl,
    };
    use crate::numeric::{mean, sample_variance};

    fn single_player_spec(drift: DriftModel, sigma: f64, horizon: f64, dt: f64) -> GameSpec {
        GameSpec::new(
            DynamicsModel::new(drift, DiffusionModel::Scalar { sigma }, 1).unwrap(),
            vec![CostModel::zero()],
            vec![NominalControl::Zero],
            InteractionMatrix::identity(1),
            horizon,
            dt,
            vec![0.0],
        )
        .unwrap()
    }

    fn terminal_states(batch: &TrajectoryBatch) -> Vec<f64> {
        let last = batch.steps();
        (0..batch.paths()).map(|p| batch.states[[p, last, 0]]).collect()
    }

    #[test]
    fn brownian_terminal_variance_matches_closed_form() {
        // dx = dw, Var(x_T) = T = 1.
        let spec = single_player_spec(DriftModel::Zero, 1.0, 1.0, 0.01);
        let batch = rollout_reference(&spec, 0, 0.0, &[0.0], 100_000, 7).unwrap();
        let var = sample_variance(&terminal_states(&batch));
        assert!((0.97..=1.03).contains(&var), "var = {var}");
    }

    #[test]
    fn single_step_is_exact() {
        let spec = single_player_spec(DriftModel::Zero, 0.7, 1.0, 1.0);
        let batch = rollout_reference(&spec, 0, 0.0, &[0.25], 100, 3).unwrap();
        for p in 0..batch.paths() {
            let expect = 0.25 + 0.7 * batch.noises[[p, 0, 0]];
            assert_eq!(batch.states[[p, 1, 0]], expect);
        }
    }

    #[test]
    fn rollouts_are_bitwise_deterministic() {
        let spec = single_player_spec(
            DriftModel::Linear {
                a: vec![vec![-0.5]],
                b: vec![0.1],
            },
            0.5,
            1.0,
            0.02,
        );
        let a = rollout_reference(&spec, 0, 0.0, &[1.0], 500, 42).unwrap();
        let b = rollout_reference(&spec, 0, 0.0, &[1.0], 500, 42).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.noises, b.noises);
    }

    #[test]
    fn path_prefix_is_stable_under_batch_growth() {
        // Per-path streams: adding paths must not change existing ones.
        let spec = single_player_spec(DriftModel::Zero, 1.0, 1.0, 0.1);
        let small = rollout_reference(&spec, 0, 0.0, &[0.0], 10, 9).unwrap();
        let large = rollout_reference(&spec, 0, 0.0, &[0.0], 1000, 9).unwrap();
        for p in 0..10 {
            for k in 0..=10 {
                assert_eq!(small.states[[p, k, 0]], large.states[[p, k, 0]]);
            }
        }
    }

    #[test]
    fn nominal_policy_reproduces_reference_bitwise() {
        let spec = single_player_spec(DriftModel::Zero, 1.0, 1.0, 0.05);
        let reference = rollout_reference(&spec, 0, 0.0, &[0.0], 200, 11).unwrap();
        let policy = FeedbackPolicy::constant(vec![0.0]);
        let controlled = rollout_controlled(&spec, 0, &policy, 0.0, &[0.0], 200, 11).unwrap();
        assert_eq!(reference.states, controlled.states);
        assert!(controlled.controls.is_some());
    }

    #[test]
    fn linear_feedback_matches_ou_variance() {
        // u = -x with sigma = 1: an Ornstein-Uhlenbeck process with
        // Var(x_T) = (1 - e^{-2T}) / 2.
        let spec = single_player_spec(DriftModel::Zero, 1.0, 1.0, 0.01);
        let policy = FeedbackPolicy::from_fn("-x", |_, x| vec![-x[0]]);
        let batch = rollout_controlled(&spec, 0, &policy, 0.0, &[0.0], 100_000, 5).unwrap();
        let var = sample_variance(&terminal_states(&batch));
        let exact = (1.0 - (-2.0f64).exp()) / 2.0;
        assert!(
            (var - exact).abs() <= 0.03 * exact,
            "var = {var}, exact = {exact}"
        );
    }

    #[test]
    fn zero_noise_rollout_matches_ode_oracle() {
        // With noise off, u = -x and sigma = 1 integrate xdot = -x. Compare
        // against a fine RK4 solution of the same ODE.
        let dt = 0.01;
        let spec = single_player_spec(DriftModel::Zero, 1.0, 1.0, dt);
        let policy = FeedbackPolicy::from_fn("-x", |_, x| vec![-x[0]]);
        let batch =
            rollout_controlled_zero_noise(&spec, 0, &policy, 0.0, &[1.0], 1, 0).unwrap();
        // RK4 with a 100x finer step.
        let mut x = 1.0f64;
        let h = dt / 100.0;
        for _ in 0..((1.0 / h).round() as usize) {
            let f = |v: f64| -v;
            let k1 = f(x);
            let k2 = f(x + 0.5 * h * k1);
            let k3 = f(x + 0.5 * h * k2);
            let k4 = f(x + h * k3);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        let terminal = batch.states[[0, batch.steps(), 0]];
        assert!(
            (terminal - x).abs() <= dt,
            "euler = {terminal}, ode = {x}"
        );
    }

    #[test]
    fn weak_error_halves_with_dt() {
        // Linear-drift reference dynamics dx = -x dt + dw: the terminal
        // variance error against the exact OU moment should drop by roughly
        // 2x when dt is halved (weak order one).
        let exact = (1.0 - (-2.0f64).exp()) / 2.0;
        let mut errors = Vec::new();
        for dt in [0.05, 0.025] {
            let spec = single_player_spec(
                DriftModel::Linear {
                    a: vec![vec![-1.0]],
                    b: vec![0.0],
                },
                1.0,
                1.0,
                dt,
            );
            let batch = rollout_reference(&spec, 0, 0.0, &[0.0], 400_000, 21).unwrap();
            let var = sample_variance(&terminal_states(&batch));
            errors.push((var - exact).abs());
        }
        let ratio = errors[0] / errors[1];
        assert!(
            (1.5..=3.0).contains(&ratio),
            "errors = {errors:?}, ratio = {ratio}"
        );
    }

    #[test]
    fn noise_increments_have_correct_moments() {
        let dt = 0.01;
        let spec = single_player_spec(DriftModel::Zero, 1.0, 1.0, dt);
        let batch = rollout_reference(&spec, 0, 0.0, &[0.0], 10_000, 13).unwrap();
        let all: Vec<f64> = batch.noises.iter().copied().collect();
        assert!(all.len() >= 1_000_000);
        let m = mean(&all);
        let bound = 4.0 * (dt / all.len() as f64).sqrt();
        assert!(m.abs() < bound, "mean = {m}, bound = {bound}");
        let var = sample_variance(&all);
        assert!(
            (var - dt).abs() <= 0.05 * dt,
            "per-step variance {var} vs dt {dt}"
        );
    }

    #[test]
    fn unstable_dynamics_reports_non_finite_state() {
        let spec = single_player_spec(
            DriftModel::Linear {
                a: vec![vec![1e6]],
                b: vec![0.0],
            },
            1.0,
            1.0,
            0.01,
        );
        match rollout_reference(&spec, 0, 0.0, &[1.0], 4, 1) {
            Err(Error::NonFiniteState { .. }) => {}
            other => panic!("expected NonFiniteState, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_policy_is_rejected() {
        let spec = single_player_spec(DriftModel::Zero, 1.0, 1.0, 0.1);
        let policy = FeedbackPolicy::from_fn("nan", |_, _| vec![f64::NAN]);
        match rollout_controlled(&spec, 0, &policy, 0.0, &[0.0], 2, 1) {
            Err(Error::NonFiniteControl { .. }) => {}
            other => panic!("expected NonFiniteControl, got {other:?}"),
        }
    }

    #[test]
    fn fold_matches_batch_functionals_bitwise() {
        let spec = single_player_spec(
            DriftModel::Constant { b: vec![0.2] },
            0.8,
            1.0,
            0.05,
        );
        let batch = rollout_reference(&spec, 0, 0.0, &[0.3], 64, 77).unwrap();
        // Fold computes sum of x_k^2 * dt plus terminal x; batch replays it.
        let folded = fold_reference(
            &spec,
            0,
            0.0,
            &[0.3],
            64,
            77,
            0.0f64,
            |acc, _, _, x, _| *acc += x[0] * x[0] * 0.05,
            |acc, x| *acc += x[0],
        )
        .unwrap();
        for p in 0..64 {
            let mut acc = 0.0;
            for k in 0..batch.steps() {
                let x = batch.states[[p, k, 0]];
                acc += x * x * 0.05;
            }
            acc += batch.states[[p, batch.steps(), 0]];
            assert_eq!(acc, folded[p], "path {p}");
        }
    }

    #[test]
    fn off_grid_start_time_is_rejected() {
        let spec = single_player_spec(DriftModel::Zero, 1.0, 1.0, 0.1);
        assert!(matches!(
            rollout_reference(&spec, 0, 0.03, &[0.0], 2, 1),
            Err(Error::OffGridTime { .. })
        ));
        assert!(matches!(
            rollout_reference(&spec, 0, 1.0, &[0.0], 2, 1),
            Err(Error::HorizonExhausted { .. })
        ));
    }

    #[test]
    fn csv_export_has_exact_column_order() {
        let spec = single_player_spec(DriftModel::Zero, 1.0, 0.2, 0.1);
        let policy = FeedbackPolicy::constant(vec![0.5]);
        let batch = rollout_controlled(&spec, 0, &policy, 0.0, &[0.0], 2, 1).unwrap();
        let mut buf = Vec::new();
        batch.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "path,step,t,x_1,u_1");
        let first = lines.next().unwrap();
        assert!(first.starts_with("0,0,0,"), "{first}");
    }
}
