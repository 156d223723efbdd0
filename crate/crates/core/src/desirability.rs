//! Interaction-adjusted path costs and Monte Carlo estimates of the
//! desirability functions `Z_i(t, x)`.
//!
//! Along a sampled path `omega` the interaction-adjusted cost is
//!
//! ```text
//! S_i(omega) = sum_j beta_ij [ integral_t^T C_j(s, x_s) ds + Psi_j(x_T) ]
//! ```
//!
//! and the Feynman-Kac representation of the desirability is the plain
//! reference-measure expectation `Z_i(t, x) = E[exp(-S_i)]`. All weight
//! arithmetic is done in log space with max-subtraction: `exp(-S)` underflows
//! long before the estimate itself becomes meaningless.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::GameSpec;
use crate::numeric::WeightStats;
use crate::sde::{rollout_reference, TrajectoryBatch};
use crate::seeding;

/// Default effective-sample-size floor below which estimates error out
/// rather than returning silently noisy values.
pub const DEFAULT_ESS_FLOOR: f64 = 10.0;

/// Quadrature rule for the running-cost integral along a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    /// Evaluate at the left grid point of each step (matches the
    /// Euler-Maruyama evaluation points; the default).
    LeftRiemann,
    Trapezoid,
}

/// Per-path interaction-adjusted costs for one player.
#[derive(Debug, Clone)]
pub struct PathCostVector {
    pub values: Vec<f64>,
    pub player: usize,
    pub quadrature: Quadrature,
}

/// Monte Carlo estimate of `Z_i(t, x)` with sampling diagnostics.
#[derive(Debug, Clone)]
pub struct DesirabilityEstimate {
    /// `(1/M) sum_p exp(-S_p)`, strictly positive.
    pub value: f64,
    /// Standard error of the mean weight.
    pub std_error: f64,
    /// Effective sample size `(sum w)^2 / sum w^2`, in `[1, M]`.
    pub ess: f64,
    /// Paths used.
    pub paths: usize,
    /// Numerically stable `log(value)`.
    pub log_value: f64,
}

fn check_batch(batch: &TrajectoryBatch, spec: &GameSpec, player: usize) -> Result<()> {
    if player >= spec.players() {
        return Err(Error::InvalidSpec(format!(
            "player index {player} out of range (N = {})",
            spec.players()
        )));
    }
    if batch.state_dim() != spec.state_dim() {
        return Err(Error::InvalidSpec(
            "batch state dimension does not match spec".into(),
        ));
    }
    if (batch.dt - spec.dt()).abs() > 1e-12 {
        return Err(Error::InvalidSpec(
            "batch step size does not match spec".into(),
        ));
    }
    let end = batch.t0 + batch.steps() as f64 * batch.dt;
    if (end - spec.horizon()).abs() > 1e-9 * spec.horizon().max(1.0) {
        return Err(Error::InvalidSpec(format!(
            "batch covers [{}, {end}], expected horizon {}",
            batch.t0,
            spec.horizon()
        )));
    }
    Ok(())
}

/// Interaction-adjusted path cost `S_i` for every path in the batch, using
/// left-Riemann quadrature on the running cost.
pub fn path_cost(batch: &TrajectoryBatch, spec: &GameSpec, player: usize) -> Result<PathCostVector> {
    path_cost_with(batch, spec, player, Quadrature::LeftRiemann)
}

/// [`path_cost`] with an explicit quadrature rule.
pub fn path_cost_with(
    batch: &TrajectoryBatch,
    spec: &GameSpec,
    player: usize,
    quadrature: Quadrature,
) -> Result<PathCostVector> {
    check_batch(batch, spec, player)?;
    let states = batch
        .states
        .as_slice()
        .ok_or_else(|| Error::InvalidSpec("batch states must be contiguous".into()))?;
    let steps = batch.steps();
    let n = batch.state_dim();
    let dt = batch.dt;
    let t0 = batch.t0;
    let row = |p: usize, k: usize| &states[(p * (steps + 1) + k) * n..(p * (steps + 1) + k + 1) * n];

    let values: Vec<f64> = (0..batch.paths())
        .into_par_iter()
        .map(|p| {
            let mut acc = 0.0;
            match quadrature {
                Quadrature::LeftRiemann => {
                    for k in 0..steps {
                        let t = t0 + k as f64 * dt;
                        acc += spec.mixed_running_cost(player, t, row(p, k)) * dt;
                    }
                }
                Quadrature::Trapezoid => {
                    for k in 0..steps {
                        let t = t0 + k as f64 * dt;
                        let left = spec.mixed_running_cost(player, t, row(p, k));
                        let right = spec.mixed_running_cost(player, t + dt, row(p, k + 1));
                        acc += 0.5 * (left + right) * dt;
                    }
                }
            }
            acc + spec.mixed_terminal_cost(player, row(p, steps))
        })
        .collect();

    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { path: bad, step: steps });
    }
    Ok(PathCostVector {
        values,
        player,
        quadrature,
    })
}

/// Estimate from precomputed exponents, enforcing the ESS floor.
pub(crate) fn estimate_from_exponents(
    s: &[f64],
    ess_floor: f64,
) -> Result<DesirabilityEstimate> {
    let stats = WeightStats::from_exponents(s);
    let ess = stats.ess();
    if ess < ess_floor {
        return Err(Error::DegenerateWeights {
            ess,
            floor: ess_floor,
        });
    }
    let paths = stats.len();
    let log_value = stats.log_mean();
    let value = log_value.exp();
    // Sample std of exp(-S) over sqrt(M), rescaled out of the stabilized frame.
    let mean_scaled = stats.sum / paths as f64;
    let var_scaled = if paths > 1 {
        crate::numeric::kahan_sum(
            stats
                .scaled
                .iter()
                .map(|w| (w - mean_scaled) * (w - mean_scaled)),
        ) / (paths - 1) as f64
    } else {
        0.0
    };
    let std_error = stats.log_offset.exp() * (var_scaled / paths as f64).sqrt();
    Ok(DesirabilityEstimate {
        value,
        std_error,
        ess,
        paths,
        log_value,
    })
}

/// Feynman-Kac Monte Carlo estimate of `Z_i` from a reference batch.
pub fn estimate_z(
    batch: &TrajectoryBatch,
    spec: &GameSpec,
    player: usize,
) -> Result<DesirabilityEstimate> {
    estimate_z_with_floor(batch, spec, player, DEFAULT_ESS_FLOOR)
}

/// [`estimate_z`] with an explicit effective-sample-size floor.
pub fn estimate_z_with_floor(
    batch: &TrajectoryBatch,
    spec: &GameSpec,
    player: usize,
    ess_floor: f64,
) -> Result<DesirabilityEstimate> {
    estimate_from_quadrature(batch, spec, player, Quadrature::LeftRiemann, ess_floor)
}

/// [`estimate_z`] with explicit quadrature rule and ESS floor. Trapezoid
/// trades the default's Euler-consistency for an O(dt^2) running-cost
/// integral.
pub fn estimate_from_quadrature(
    batch: &TrajectoryBatch,
    spec: &GameSpec,
    player: usize,
    quadrature: Quadrature,
    ess_floor: f64,
) -> Result<DesirabilityEstimate> {
    let costs = path_cost_with(batch, spec, player, quadrature)?;
    estimate_from_exponents(&costs.values, ess_floor)
}

/// Independent `Z_i(t, x)` estimates at several query states, with
/// deterministic per-point seeds derived from `(seed, point index)`.
pub fn estimate_z_field(
    spec: &GameSpec,
    player: usize,
    t: f64,
    states: &[Vec<f64>],
    paths: usize,
    seed: u64,
) -> Result<Vec<DesirabilityEstimate>> {
    states
        .iter()
        .enumerate()
        .map(|(idx, x)| {
            let point_seed = seeding::derive(seed, idx as u64);
            let batch = rollout_reference(spec, player, t, x, paths, point_seed)?;
            estimate_z(&batch, spec, player)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{
        CenterPath, CostModel, DiffusionModel, DriftModel, DynamicsModel, InteractionMatrix,
        NominalControl, RunningCost, TerminalCost,
    };
    use ndarray::Array3;

    fn quadratic_cost(q: f64, q_t: f64, c: f64) -> CostModel {
        CostModel {
            running: RunningCost::QuadraticWell {
                q,
                center: CenterPath::LinearInTime { c: vec![c] },
            },
            terminal: TerminalCost::Quadratic {
                q_t,
                center: CenterPath::LinearInTime { c: vec![c] },
            },
        }
    }

    fn spec_1d(costs: Vec<CostModel>, interaction: InteractionMatrix, sigma: f64, dt: f64) -> GameSpec {
        let players = interaction.players();
        GameSpec::new(
            DynamicsModel::new(DriftModel::Zero, DiffusionModel::Scalar { sigma }, 1).unwrap(),
            costs,
            vec![NominalControl::Zero; players],
            interaction,
            1.0,
            dt,
            vec![0.0],
        )
        .unwrap()
    }

    /// A batch frozen at x = 0 for every path and step.
    fn frozen_batch(paths: usize, steps: usize, dt: f64) -> TrajectoryBatch {
        TrajectoryBatch {
            states: Array3::zeros((paths, steps + 1, 1)),
            noises: Array3::zeros((paths, steps, 1)),
            controls: None,
            t0: 0.0,
            dt,
            seed: 0,
            player: None,
        }
    }

    #[test]
    fn zero_costs_give_zero_path_cost_and_unit_z() {
        let spec = spec_1d(
            vec![CostModel::zero(), CostModel::zero()],
            InteractionMatrix::two_player(0.6).unwrap(),
            1.0,
            0.01,
        );
        let batch = rollout_reference(&spec, 0, 0.0, &[0.0], 64, 3).unwrap();
        let s = path_cost(&batch, &spec, 0).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
        let z = estimate_z(&batch, &spec, 0).unwrap();
        assert_eq!(z.value, 1.0);
        assert_eq!(z.std_error, 0.0);
        assert_eq!(z.ess, 64.0);
        assert_eq!(z.log_value, 0.0);
    }

    #[test]
    fn frozen_path_cost_matches_analytic_integral() {
        // x = 0, q = q_t = a = T = 1, m1(t) = -t/T:
        // S = q a^2 T / 6 + q_t a^2 / 2 = 2/3, up to O(dt) quadrature error.
        let dt = 0.01;
        let spec = spec_1d(
            vec![quadratic_cost(1.0, 1.0, -1.0)],
            InteractionMatrix::identity(1),
            1.0,
            dt,
        );
        let batch = frozen_batch(3, 100, dt);
        let s = path_cost(&batch, &spec, 0).unwrap();
        for &v in &s.values {
            assert!((v - 2.0 / 3.0).abs() <= dt, "S = {v}");
        }
        // Trapezoid should be closer (O(dt^2) on this smooth integrand).
        let s2 = path_cost_with(&batch, &spec, 0, Quadrature::Trapezoid).unwrap();
        assert!((s2.values[0] - 2.0 / 3.0).abs() < (s.values[0] - 2.0 / 3.0).abs());
    }

    #[test]
    fn frozen_path_cost_with_coupling_scales_by_beta_row_sum() {
        // Symmetric wells make C1 = C2 along x = 0, so S_1 scales by
        // (beta_11 + beta_12) = 0.625 relative to the decoupled case.
        let dt = 0.01;
        let coupled = spec_1d(
            vec![quadratic_cost(1.0, 1.0, -1.0), quadratic_cost(1.0, 1.0, 1.0)],
            InteractionMatrix::two_player(0.6).unwrap(),
            1.0,
            dt,
        );
        let batch = frozen_batch(1, 100, dt);
        let s = path_cost(&batch, &coupled, 0).unwrap();
        let expect = 0.625 * (2.0 / 3.0);
        assert!((s.values[0] - expect).abs() <= dt, "S = {}", s.values[0]);
    }

    #[test]
    fn gaussian_benchmark_one_player() {
        // C = 0, Psi = x^2, sigma = 1, T = 0.25, x0 = 0:
        // Z_0(0) = 1 / sqrt(1 + 2 sigma^2 T) = 1 / sqrt(1.5).
        let spec = GameSpec::new(
            DynamicsModel::new(DriftModel::Zero, DiffusionModel::Scalar { sigma: 1.0 }, 1)
                .unwrap(),
            vec![CostModel {
                running: RunningCost::Zero,
                terminal: TerminalCost::Quadratic {
                    q_t: 2.0,
                    center: CenterPath::Constant { c: vec![0.0] },
                },
            }],
            vec![NominalControl::Zero],
            InteractionMatrix::identity(1),
            0.25,
            0.0025,
            vec![0.0],
        )
        .unwrap();
        let batch = rollout_reference(&spec, 0, 0.0, &[0.0], 200_000, 1234).unwrap();
        let est = estimate_z(&batch, &spec, 0).unwrap();
        let exact = 1.0 / 1.5f64.sqrt();
        assert!(
            (est.value - exact).abs() <= 3.0 * est.std_error,
            "Z = {} +- {}, exact = {exact}",
            est.value,
            est.std_error
        );
        assert!(est.ess > 1.0 && est.ess <= 200_000.0);
        assert!((est.log_value.exp() - est.value).abs() < 1e-12);
    }

    #[test]
    fn field_estimates_decrease_away_from_origin() {
        // Z_0(x) = exp(-x^2 / (1 + 2 s^2)) / sqrt(1 + 2 s^2) with s^2 = T.
        let spec = GameSpec::new(
            DynamicsModel::new(DriftModel::Zero, DiffusionModel::Scalar { sigma: 1.0 }, 1)
                .unwrap(),
            vec![CostModel {
                running: RunningCost::Zero,
                terminal: TerminalCost::Quadratic {
                    q_t: 2.0,
                    center: CenterPath::Constant { c: vec![0.0] },
                },
            }],
            vec![NominalControl::Zero],
            InteractionMatrix::identity(1),
            0.25,
            0.0025,
            vec![0.0],
        )
        .unwrap();
        let xs = vec![vec![0.0], vec![0.5], vec![1.0]];
        let ests = estimate_z_field(&spec, 0, 0.0, &xs, 100_000, 99).unwrap();
        let s2 = 1.0 + 2.0 * 0.25;
        for (x, est) in xs.iter().zip(&ests) {
            let exact = (-x[0] * x[0] / s2).exp() / s2.sqrt();
            assert!(
                (est.value - exact).abs() <= 3.0 * est.std_error,
                "x = {}, Z = {} +- {}, exact = {exact}",
                x[0],
                est.value,
                est.std_error
            );
        }
        assert!(ests[0].value > ests[1].value && ests[1].value > ests[2].value);
    }

    #[test]
    fn field_single_point_composes_rollout_and_estimate() {
        let spec = spec_1d(
            vec![quadratic_cost(1.0, 1.0, -1.0)],
            InteractionMatrix::identity(1),
            0.5,
            0.01,
        );
        let field = estimate_z_field(&spec, 0, 0.0, &[vec![0.3]], 500, 55).unwrap();
        let batch =
            rollout_reference(&spec, 0, 0.0, &[0.3], 500, seeding::derive(55, 0)).unwrap();
        let direct = estimate_z(&batch, &spec, 0).unwrap();
        assert_eq!(field[0].value, direct.value);
        assert_eq!(field[0].std_error, direct.std_error);
    }

    #[test]
    fn zero_costs_at_several_points_are_exactly_one() {
        let spec = spec_1d(vec![CostModel::zero()], InteractionMatrix::identity(1), 1.0, 0.1);
        let xs: Vec<Vec<f64>> = (-2..=2).map(|i| vec![i as f64]).collect();
        let ests = estimate_z_field(&spec, 0, 0.0, &xs, 50, 7).unwrap();
        assert_eq!(ests.len(), 5);
        for est in ests {
            assert_eq!(est.value, 1.0);
        }
    }

    #[test]
    fn cost_scaling_by_power_of_two_scales_s_exactly() {
        let dt = 0.02;
        let base = spec_1d(
            vec![quadratic_cost(1.5, 0.75, -1.0), quadratic_cost(1.5, 0.75, 1.0)],
            InteractionMatrix::two_player(0.4).unwrap(),
            0.5,
            dt,
        );
        let scaled = spec_1d(
            vec![quadratic_cost(3.0, 1.5, -1.0), quadratic_cost(3.0, 1.5, 1.0)],
            InteractionMatrix::two_player(0.4).unwrap(),
            0.5,
            dt,
        );
        let batch = rollout_reference(&base, 0, 0.0, &[0.0], 200, 17).unwrap();
        let s1 = path_cost(&batch, &base, 0).unwrap();
        let s2 = path_cost(&batch, &scaled, 0).unwrap();
        for (a, b) in s1.values.iter().zip(&s2.values) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn identity_interaction_ignores_other_players_costs_bitwise() {
        let dt = 0.02;
        let a = spec_1d(
            vec![quadratic_cost(2.0, 1.0, -1.0), quadratic_cost(2.0, 1.0, 1.0)],
            InteractionMatrix::identity(2),
            0.5,
            dt,
        );
        let b = spec_1d(
            vec![quadratic_cost(2.0, 1.0, -1.0), quadratic_cost(17.0, 5.0, 0.3)],
            InteractionMatrix::identity(2),
            0.5,
            dt,
        );
        let batch = rollout_reference(&a, 0, 0.0, &[0.0], 100, 23).unwrap();
        let s_a = path_cost(&batch, &a, 0).unwrap();
        let s_b = path_cost(&batch, &b, 0).unwrap();
        assert_eq!(s_a.values, s_b.values);
    }

    #[test]
    fn estimates_are_bitwise_reproducible() {
        let spec = spec_1d(
            vec![quadratic_cost(2.0, 1.0, -1.0)],
            InteractionMatrix::identity(1),
            0.5,
            0.01,
        );
        let a = estimate_z_field(&spec, 0, 0.0, &[vec![0.0]], 2000, 31).unwrap();
        let b = estimate_z_field(&spec, 0, 0.0, &[vec![0.0]], 2000, 31).unwrap();
        assert_eq!(a[0].value, b[0].value);
        assert_eq!(a[0].log_value, b[0].log_value);
    }

    #[test]
    fn degenerate_weights_raise_an_error() {
        // A brutal terminal cost concentrates all weight on a single path.
        let spec = spec_1d(
            vec![quadratic_cost(0.0, 5000.0, -1.0)],
            InteractionMatrix::identity(1),
            1.0,
            0.05,
        );
        let batch = rollout_reference(&spec, 0, 0.0, &[0.0], 200, 71).unwrap();
        match estimate_z(&batch, &spec, 0) {
            Err(Error::DegenerateWeights { ess, floor }) => {
                assert!(ess < floor);
            }
            other => panic!("expected DegenerateWeights, got {other:?}"),
        }
    }
}
