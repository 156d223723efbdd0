//! Scratch: quadrature-bias scaling of the Feynman-Kac estimator.

use lsdg::desirability::{estimate_from_quadrature, Quadrature};
use lsdg::game::*;
use lsdg::oracle::{solve_linear_pde_fd, Grid1D};
use lsdg::sde::rollout_reference;

fn spec(dt: f64) -> GameSpec {
    let well = |c: f64| CostModel {
        running: RunningCost::QuadraticWell { q: 2.0, center: CenterPath::LinearInTime { c: vec![c] } },
        terminal: TerminalCost::Quadratic { q_t: 1.0, center: CenterPath::LinearInTime { c: vec![c] } },
    };
    GameSpec::new(
        DynamicsModel::new(DriftModel::Zero, DiffusionModel::Scalar { sigma: 0.5 }, 1).unwrap(),
        vec![well(-1.0), well(1.0)],
        vec![NominalControl::Zero, NominalControl::Zero],
        InteractionMatrix::two_player(0.6).unwrap(),
        1.0,
        dt,
        vec![0.0],
    )
    .unwrap()
}

fn main() {
    let s = spec(0.005);
    let grid = Grid1D::covering(&s, 1601, 2000).unwrap();
    let field = solve_linear_pde_fd(&s, 0, &grid).unwrap();
    let z_fd = field.value_at(0.0, -1.0);
    println!("Z_fd(0, -1) = {z_fd}");
    for dt in [0.005, 0.002, 0.001] {
        let s = spec(dt);
        let batch = rollout_reference(&s, 0, 0.0, &[-1.0], 200_000, 777).unwrap();
        for quad in [Quadrature::LeftRiemann, Quadrature::Trapezoid] {
            let est = estimate_from_quadrature(&batch, &s, 0, quad, 10.0).unwrap();
            println!(
                "dt = {dt}, {quad:?}: Z = {:.4} +- {:.4}, rel gap = {:+.3}%",
                est.value,
                est.std_error,
                100.0 * (est.value - z_fd) / z_fd
            );
        }
    }
}
