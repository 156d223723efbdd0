//! Recovery of the equilibrium path measure by exponential tilting,
//! path-space likelihood ratios, and the empirical equivalence check between
//! the measure-theoretic and control-theoretic forms of the game cost.
//!
//! The equilibrium measure of player `i` is absolutely continuous with
//! respect to its reference measure with density `exp(-S_i(omega)) / Z_i`,
//! so reweighting a reference ensemble by normalized `exp(-S_i)` realizes it
//! without solving anything: the same equilibrium that closed-loop control
//! produces by steering.

use std::sync::Arc;

use crate::desirability::{self, DEFAULT_ESS_FLOOR};
use crate::error::{Error, Result};
use crate::game::{GameSpec, NominalControl};
use crate::numeric::{kahan_sum, WeightStats};
use crate::sde::{rollout_controlled, FeedbackPolicy, TrajectoryBatch};
use crate::seeding;

/// Reference trajectories plus normalized exponential-tilt weights
/// representing the equilibrium measure of one player.
#[derive(Debug, Clone)]
pub struct WeightedEnsemble {
    pub batch: Arc<TrajectoryBatch>,
    /// Normalized weights summing to 1 (within 1e-12).
    pub weights: Vec<f64>,
    /// Logs of the normalized weights.
    pub log_weights: Vec<f64>,
    pub player: usize,
    /// Effective sample size `1 / sum w_p^2`, in `[1, M]`.
    pub ess: f64,
}

impl WeightedEnsemble {
    /// Weighted mean of the state at grid index `k`, with per-coordinate
    /// delta-method standard errors.
    pub fn mean_state_at(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.batch.state_dim();
        let paths = self.batch.paths();
        let mut mean = vec![0.0; n];
        let mut se = vec![0.0; n];
        for c in 0..n {
            let m = kahan_sum(
                (0..paths).map(|p| self.weights[p] * self.batch.states[[p, k, c]]),
            );
            let var = kahan_sum((0..paths).map(|p| {
                let d = self.batch.states[[p, k, c]] - m;
                self.weights[p] * self.weights[p] * d * d
            }));
            mean[c] = m;
            se[c] = var.sqrt();
        }
        (mean, se)
    }

    /// Weighted standard deviation of coordinate `c` at grid index `k`.
    pub fn std_at(&self, k: usize, coord: usize) -> f64 {
        let paths = self.batch.paths();
        let m = kahan_sum(
            (0..paths).map(|p| self.weights[p] * self.batch.states[[p, k, coord]]),
        );
        let var = kahan_sum((0..paths).map(|p| {
            let d = self.batch.states[[p, k, coord]] - m;
            self.weights[p] * d * d
        }));
        var.max(0.0).sqrt()
    }
}

/// Tilt a reference batch into player `i`'s equilibrium ensemble with
/// weights proportional to `exp(-S_i)`.
pub fn tilt_weights(
    batch: Arc<TrajectoryBatch>,
    spec: &GameSpec,
    player: usize,
) -> Result<WeightedEnsemble> {
    tilt_weights_with_floor(batch, spec, player, DEFAULT_ESS_FLOOR)
}

/// [`tilt_weights`] with an explicit effective-sample-size floor.
pub fn tilt_weights_with_floor(
    batch: Arc<TrajectoryBatch>,
    spec: &GameSpec,
    player: usize,
    ess_floor: f64,
) -> Result<WeightedEnsemble> {
    let costs = desirability::path_cost(&batch, spec, player)?;
    tilt_from_path_costs(batch, &costs.values, player, ess_floor)
}

/// Build a tilted ensemble directly from per-path exponents (weights are
/// `exp(-s_p)`, normalized). Exposed so invariance properties of the
/// normalization itself can be exercised without re-sampling.
pub fn tilt_from_path_costs(
    batch: Arc<TrajectoryBatch>,
    path_costs: &[f64],
    player: usize,
    ess_floor: f64,
) -> Result<WeightedEnsemble> {
    if path_costs.len() != batch.paths() {
        return Err(Error::InvalidSpec(
            "path cost vector length does not match batch".into(),
        ));
    }
    let stats = WeightStats::from_exponents(path_costs);
    let ess = stats.ess();
    if ess < ess_floor {
        return Err(Error::DegenerateWeights {
            ess,
            floor: ess_floor,
        });
    }
    Ok(WeightedEnsemble {
        weights: stats.normalized(),
        log_weights: stats.normalized_log(),
        batch,
        player,
        ess,
    })
}

// ---------------------------------------------------------------------------
// Weighted kernel density estimation
// ---------------------------------------------------------------------------

/// Rule-of-thumb bandwidth `1.06 * sigma_hat * ESS^{-1/5}` from the weighted
/// spread of the time-`t` marginal (coordinates averaged).
pub fn silverman_bandwidth(ensemble: &WeightedEnsemble, t: f64) -> Result<f64> {
    let k = ensemble.batch.time_index(t)?;
    let n = ensemble.batch.state_dim();
    let avg_std =
        (0..n).map(|c| ensemble.std_at(k, c)).sum::<f64>() / n as f64;
    Ok(1.06 * avg_std * ensemble.ess.powf(-0.2))
}

/// Weighted Gaussian kernel density estimate of the time-`t` marginal,
/// evaluated at each grid state. Product kernel with a common bandwidth.
pub fn weighted_density(
    ensemble: &WeightedEnsemble,
    t: f64,
    grid: &[Vec<f64>],
    bandwidth: f64,
) -> Result<Vec<(Vec<f64>, f64)>> {
    if !(bandwidth > 0.0) {
        return Err(Error::BandwidthNonPositive(bandwidth));
    }
    let k = ensemble.batch.time_index(t)?;
    let n = ensemble.batch.state_dim();
    let paths = ensemble.batch.paths();
    let norm = 1.0 / (bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let mut out = Vec::with_capacity(grid.len());
    for point in grid {
        if point.len() != n {
            return Err(Error::InvalidSpec(
                "density grid state dimension mismatch".into(),
            ));
        }
        let density = kahan_sum((0..paths).map(|p| {
            let mut kernel = 1.0;
            for c in 0..n {
                let z = (point[c] - ensemble.batch.states[[p, k, c]]) / bandwidth;
                kernel *= norm * (-0.5 * z * z).exp();
            }
            ensemble.weights[p] * kernel
        }));
        out.push((point.clone(), density));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Path-space likelihood ratios
// ---------------------------------------------------------------------------

/// Per-path log Radon-Nikodym derivative of the controlled law with respect
/// to the player's reference law, along the batch's own sampled paths:
///
/// ```text
/// log(dP/dR) = sum_k (u_k - ubar)^T dw_k + (1/2) sum_k |u_k - ubar|^2 dt
/// ```
///
/// Requires recorded controls (controlled rollouts only).
pub fn log_rn_self(batch: &TrajectoryBatch, nominal: &NominalControl) -> Result<Vec<f64>> {
    let controls = batch.controls.as_ref().ok_or(Error::MissingControls)?;
    let m = batch.input_dim();
    let dt = batch.dt;
    let mut ubar = vec![0.0; m];
    nominal.eval_into(&mut ubar);
    let mut out = Vec::with_capacity(batch.paths());
    for p in 0..batch.paths() {
        let mut acc = 0.0;
        for k in 0..batch.steps() {
            let mut dot = 0.0;
            let mut norm_sq = 0.0;
            for d in 0..m {
                let du = controls[[p, k, d]] - ubar[d];
                dot += du * batch.noises[[p, k, d]];
                norm_sq += du * du;
            }
            acc += dot + 0.5 * norm_sq * dt;
        }
        out.push(acc);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Cost equivalence
// ---------------------------------------------------------------------------

/// Both evaluations of one player's game cost, with standard errors.
#[derive(Debug, Clone)]
pub struct CostEquivalence {
    /// Measure-theoretic form: trajectory cost + alpha_ii E[log dP_i/dR_i]
    /// + sum_{j != i} alpha_ij E_i[log dP_j/dR_j].
    pub j_measure: f64,
    pub se_measure: f64,
    /// Control-theoretic form with explicit quadratic and cross terms.
    pub j_control: f64,
    pub se_control: f64,
    /// Standard error of the paired per-path difference.
    pub se_diff: f64,
}

/// Empirically check that the measure-theoretic and control-theoretic cost
/// functionals agree for every player under the supplied feedback policies.
///
/// All players' policies are required because the cross terms evaluate
/// player `j`'s feedback along player `i`'s controlled paths. The cross
/// log-likelihood is evaluated in its deterministic time-integral form
/// (the stochastic-integral form has the same expectation but a martingale
/// noise term that would only inflate the variance).
pub fn cost_equivalence_check(
    spec: &GameSpec,
    policies: &[FeedbackPolicy],
    paths: usize,
    seed: u64,
) -> Result<Vec<CostEquivalence>> {
    let n_players = spec.players();
    if policies.len() != n_players {
        return Err(Error::InvalidSpec(format!(
            "expected {n_players} policies, got {}",
            policies.len()
        )));
    }
    let m = spec.input_dim();
    let dt = spec.dt();
    let alpha = spec.interaction().alpha();
    let mut nominals = vec![vec![0.0; m]; n_players];
    for (j, nb) in nominals.iter_mut().enumerate() {
        spec.nominal_control(j).eval_into(nb);
    }

    let mut out = Vec::with_capacity(n_players);
    for i in 0..n_players {
        let batch = rollout_controlled(
            spec,
            i,
            &policies[i],
            0.0,
            spec.initial_state(),
            paths,
            seeding::derive2(seed, 0x6571, i as u64),
        )?;
        let rn_self = log_rn_self(&batch, spec.nominal_control(i))?;
        let controls = batch.controls.as_ref().expect("controlled rollout");
        let steps = batch.steps();

        let mut j_measure = Vec::with_capacity(paths);
        let mut j_control = Vec::with_capacity(paths);
        let mut x = vec![0.0; spec.state_dim()];
        let mut u_other = vec![vec![0.0; m]; n_players];
        for p in 0..paths {
            let mut traj = 0.0;
            let mut cross_measure = 0.0;
            let mut quad_control = 0.0;
            for k in 0..steps {
                let t = batch.time_at(k);
                for (c, slot) in x.iter_mut().enumerate() {
                    *slot = batch.states[[p, k, c]];
                }
                traj += spec.cost(i).running_at(t, &x, spec.horizon()) * dt;

                for (j, ub) in u_other.iter_mut().enumerate() {
                    if j == i {
                        for d in 0..m {
                            ub[d] = controls[[p, k, d]];
                        }
                    } else {
                        let u = policies[j].eval(t, &x)?;
                        ub.copy_from_slice(&u);
                    }
                }

                // Own quadratic penalty (both forms share the trajectory
                // cost; the self-KL differs only by a martingale term).
                let mut self_sq = 0.0;
                for d in 0..m {
                    let du = u_other[i][d] - nominals[i][d];
                    self_sq += du * du;
                }
                quad_control += 0.5 * alpha[(i, i)] * self_sq * dt;

                for j in 0..n_players {
                    if j == i {
                        continue;
                    }
                    let a_ij = alpha[(i, j)];
                    if a_ij == 0.0 {
                        continue;
                    }
                    let mut cross_m = 0.0;
                    let mut ubar_sq = 0.0;
                    let mut u_sq = 0.0;
                    let mut cross_c = 0.0;
                    for d in 0..m {
                        let duj = u_other[j][d] - nominals[j][d];
                        // Time-integral form of E_i[log dP_j/dR_j]:
                        // (u_j - ubar_j) . (u_i - ubar_j) - 0.5 |u_j - ubar_j|^2
                        cross_m += duj * (u_other[i][d] - nominals[j][d]) - 0.5 * duj * duj;
                        ubar_sq += nominals[j][d] * nominals[j][d];
                        u_sq += u_other[j][d] * u_other[j][d];
                        cross_c += duj * u_other[i][d];
                    }
                    cross_measure += a_ij * cross_m * dt;
                    quad_control += (0.5 * a_ij * (ubar_sq - u_sq) + a_ij * cross_c) * dt;
                }
            }
            for (c, slot) in x.iter_mut().enumerate() {
                *slot = batch.states[[p, steps, c]];
            }
            let terminal = spec.cost(i).terminal_at(&x, spec.horizon());
            traj += terminal;
            j_measure.push(traj + alpha[(i, i)] * rn_self[p] + cross_measure);
            j_control.push(traj + quad_control);
        }

        let diffs: Vec<f64> = j_measure
            .iter()
            .zip(&j_control)
            .map(|(a, b)| a - b)
            .collect();
        out.push(CostEquivalence {
            j_measure: crate::numeric::mean(&j_measure),
            se_measure: crate::numeric::standard_error(&j_measure),
            j_control: crate::numeric::mean(&j_control),
            se_control: crate::numeric::standard_error(&j_control),
            se_diff: crate::numeric::standard_error(&diffs),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Expectation distance
// ---------------------------------------------------------------------------

/// A per-player marginal source: tilted reference ensemble (weighted means)
/// or closed-loop controlled ensemble (plain means). Both estimate the same
/// equilibrium moments.
#[derive(Debug, Clone, Copy)]
pub enum EnsembleMarginal<'a> {
    Tilted(&'a WeightedEnsemble),
    Controlled(&'a TrajectoryBatch),
}

impl EnsembleMarginal<'_> {
    fn batch(&self) -> &TrajectoryBatch {
        match self {
            EnsembleMarginal::Tilted(e) => &e.batch,
            EnsembleMarginal::Controlled(b) => b,
        }
    }

    /// Mean state and per-coordinate standard errors at grid index `k`.
    pub fn mean_state_at(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        match self {
            EnsembleMarginal::Tilted(e) => e.mean_state_at(k),
            EnsembleMarginal::Controlled(b) => {
                let n = b.state_dim();
                let paths = b.paths();
                let mut mean = vec![0.0; n];
                let mut se = vec![0.0; n];
                for c in 0..n {
                    let vals: Vec<f64> = (0..paths).map(|p| b.states[[p, k, c]]).collect();
                    mean[c] = crate::numeric::mean(&vals);
                    se[c] = crate::numeric::standard_error(&vals);
                }
                (mean, se)
            }
        }
    }
}

/// Euclidean distance between the two players' mean states at every grid
/// time: `D(t) = |E_1[x_t] - E_2[x_t]|`.
pub fn expectation_distance(ensembles: &[EnsembleMarginal<'_>]) -> Result<Vec<(f64, f64)>> {
    if ensembles.len() != 2 {
        return Err(Error::PlayerCountMismatch(ensembles.len()));
    }
    let a = ensembles[0].batch();
    let b = ensembles[1].batch();
    if a.steps() != b.steps()
        || (a.t0 - b.t0).abs() > 1e-12
        || (a.dt - b.dt).abs() > 1e-12
        || a.state_dim() != b.state_dim()
    {
        return Err(Error::GridMismatch);
    }
    let mut out = Vec::with_capacity(a.steps() + 1);
    for k in 0..=a.steps() {
        let (ma, _) = ensembles[0].mean_state_at(k);
        let (mb, _) = ensembles[1].mean_state_at(k);
        let dist = ma
            .iter()
            .zip(&mb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        out.push((a.time_at(k), dist));
    }
    Ok(out)
}
