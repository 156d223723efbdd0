//! Scratch calibration: probe ESS, Z standard errors, regime separations and
//! closed-loop agreement for candidate default parameter sets.

use std::sync::Arc;
use std::time::Instant;

use lsdg::control::nash_closed_loop;
use lsdg::desirability::estimate_z;
use lsdg::game::{
    CenterPath, CostModel, DiffusionModel, DriftModel, DynamicsModel, GameSpec,
    InteractionMatrix, NominalControl, RunningCost, TerminalCost,
};
use lsdg::measure::{tilt_weights, EnsembleMarginal};
use lsdg::oracle::{riccati_lq_reference, solve_linear_pde_fd, Grid1D};
use lsdg::sde::rollout_reference;
use lsdg::seeding;

fn two_player_spec(sigma: f64, q: f64, q_t: f64, a: f64, horizon: f64, dt: f64, im: InteractionMatrix) -> GameSpec {
    let well = |c: f64| CostModel {
        running: RunningCost::QuadraticWell {
            q,
            center: CenterPath::LinearInTime { c: vec![c] },
        },
        terminal: TerminalCost::Quadratic {
            q_t,
            center: CenterPath::LinearInTime { c: vec![c] },
        },
    };
    GameSpec::new(
        DynamicsModel::new(DriftModel::Zero, DiffusionModel::Scalar { sigma }, 1).unwrap(),
        vec![well(-a), well(a)],
        vec![NominalControl::Zero, NominalControl::Zero],
        im,
        horizon,
        dt,
        vec![0.0],
    )
    .unwrap()
}

fn main() {
    let (sigma, q, q_t, a, horizon) = (0.5, 2.0, 1.0, 1.0, 1.0);
    let dt = 0.005;
    let m_ref = 200_000;
    let seed = 42u64;

    println!("params: sigma={sigma} q={q} q_t={q_t} a={a} T={horizon} dt={dt} M_ref={m_ref}");
    let mut terminal_means = Vec::new();
    for (label, im) in [
        ("gamma=-0.6", InteractionMatrix::two_player(-0.6).unwrap()),
        ("gamma=0.0", InteractionMatrix::two_player(0.0).unwrap()),
        ("gamma=0.6", InteractionMatrix::two_player(0.6).unwrap()),
        ("asym 0.6", InteractionMatrix::two_player_asymmetric(0.6).unwrap()),
    ] {
        let spec = two_player_spec(sigma, q, q_t, a, horizon, dt, im);
        let mut means = Vec::new();
        for player in 0..2 {
            let t0 = Instant::now();
            let batch = Arc::new(
                rollout_reference(&spec, player, 0.0, &[0.0], m_ref, seeding::derive2(seed, 1, player as u64))
                    .unwrap(),
            );
            let z = estimate_z(&batch, &spec, player).unwrap();
            let ens = tilt_weights(batch, &spec, player).unwrap();
            let k = ens.batch.steps();
            let (mean, se) = ens.mean_state_at(k);
            means.push((mean[0], se[0]));
            println!(
                "{label} p{player}: Z={:.4} relSE={:.3}% ESS={:.0} ({:.1}% of M)  E[x_T]={:+.4} +- {:.4}  [{:.2?}]",
                z.value,
                100.0 * z.std_error / z.value,
                ens.ess,
                100.0 * ens.ess / m_ref as f64,
                mean[0],
                se[0],
                t0.elapsed()
            );
        }
        terminal_means.push((label, means.clone()));
        let d = ((means[0].0 - means[1].0) as f64).abs();
        let se = (means[0].1.powi(2) + means[1].1.powi(2)).sqrt();
        println!("{label}: D(T) = {d:.4} +- {se:.4}");
    }

    // Riccati gamma=0 check.
    let center = CenterPath::LinearInTime { c: vec![-a] };
    let ric = riccati_lq_reference(q, q_t, sigma, horizon, &center, dt / 10.0);
    let mean_path = ric.mean_trajectory(0.0, dt);
    println!(
        "riccati gamma=0 p0: E[x_T] = {:+.4}, p(0)={:.3} r(0)={:+.3}, u*(0,0)={:+.4}",
        mean_path.last().unwrap().1,
        ric.p_at(0.0),
        ric.r_at(0.0),
        ric.feedback(0.0, 0.0),
    );

    // FD vs MC at gamma = 0.6, t=0, x=0.
    let spec = two_player_spec(sigma, q, q_t, a, horizon, dt, InteractionMatrix::two_player(0.6).unwrap());
    let grid = Grid1D::covering(&spec, 801, 1000).unwrap();
    let t0 = Instant::now();
    let field = solve_linear_pde_fd(&spec, 0, &grid).unwrap();
    println!("FD solve: {:.2?}, domain [{:.2},{:.2}]", t0.elapsed(), grid.x_min, grid.x_max);
    let batch = rollout_reference(&spec, 0, 0.0, &[0.0], m_ref, seeding::derive(seed, 9)).unwrap();
    let z = estimate_z(&batch, &spec, 0).unwrap();
    println!(
        "gamma=0.6 p0: Z_mc = {:.5} +- {:.5}, Z_fd = {:.5}, rel diff = {:.3}%",
        z.value,
        z.std_error,
        field.value_at(0.0, 0.0),
        100.0 * (z.value - field.value_at(0.0, 0.0)).abs() / field.value_at(0.0, 0.0)
    );

    // Closed-loop timing + two-perspective agreement at acceptance budgets.
    let dt_cl = 0.01;
    let m_policy = 1500;
    let m_ensemble = 400;
    let spec_cl = two_player_spec(sigma, q, q_t, a, horizon, dt_cl, InteractionMatrix::two_player(0.6).unwrap());
    let t0 = Instant::now();
    let batches = nash_closed_loop(&spec_cl, m_policy, m_ensemble, seed).unwrap();
    println!(
        "closed loop (M_pol={m_policy}, M_ens={m_ensemble}, dt={dt_cl}): {:.2?}",
        t0.elapsed()
    );
    for (player, batch) in batches.iter().enumerate() {
        let ctrl = EnsembleMarginal::Controlled(batch);
        let (mean, se) = ctrl.mean_state_at(batch.steps());
        let ref_batch = Arc::new(
            rollout_reference(&spec_cl, player, 0.0, &[0.0], m_ref, seeding::derive2(seed, 1, player as u64)).unwrap(),
        );
        let ens = tilt_weights(ref_batch, &spec_cl, player).unwrap();
        let (tmean, tse) = ens.mean_state_at(ens.batch.steps());
        println!(
            "p{player}: controlled E[x_T] = {:+.4} +- {:.4} | tilted = {:+.4} +- {:.4} | diff = {:.4}",
            mean[0], se[0], tmean[0], tse[0], (mean[0] - tmean[0]).abs()
        );
    }
}
