//! Scratch microbenchmark of the Euler-step pipeline.

use std::time::Instant;

use lsdg::game::*;
use lsdg::sde::fold_reference;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() {
    // 1. Raw normal draws.
    let t0 = Instant::now();
    let mut acc = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    const N: usize = 100_000_000;
    for _ in 0..N {
        let z: f64 = StandardNormal.sample(&mut rng);
        acc += z;
    }
    println!("raw draws: {:.2} ns/draw (acc {acc:.3})", t0.elapsed().as_nanos() as f64 / N as f64);

    // 2. RNG re-init cost per path (1500 paths x 50 steps pattern).
    let t0 = Instant::now();
    let mut acc = 0.0f64;
    for p in 0..2_000_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        rng.set_stream(p);
        for _ in 0..8 {
            let z: f64 = StandardNormal.sample(&mut rng);
            acc += z;
        }
    }
    println!(
        "init+8 draws: {:.2} ns/draw with init amortized (acc {acc:.3})",
        t0.elapsed().as_nanos() as f64 / (2_000_000.0 * 8.0)
    );

    // 3. Zero-cost fold (serial path), 2000 x 500 = 1e6 steps x 100 reps.
    let spec = GameSpec::new(
        DynamicsModel::new(DriftModel::Zero, DiffusionModel::Scalar { sigma: 0.5 }, 1).unwrap(),
        vec![CostModel::zero(), CostModel::zero()],
        vec![NominalControl::Zero, NominalControl::Zero],
        InteractionMatrix::two_player(0.6).unwrap(),
        1.0,
        0.002,
        vec![0.0],
    )
    .unwrap();
    let t0 = Instant::now();
    let mut sink = 0.0;
    for rep in 0..100 {
        let out = fold_reference(&spec, 0, 0.0, &[0.0], 2000, rep, 0.0f64, |a, _, _, x, _| *a += x[0], |_, _| {}).unwrap();
        sink += out[0];
    }
    println!("fold zero-cost: {:.2} ns/step ({sink:.3})", t0.elapsed().as_nanos() as f64 / 1e8);

    // 4. Fold with the mixed quadratic cost in the step closure.
    let well = |c: f64| CostModel {
        running: RunningCost::QuadraticWell { q: 2.0, center: CenterPath::LinearInTime { c: vec![c] } },
        terminal: TerminalCost::Quadratic { q_t: 1.0, center: CenterPath::LinearInTime { c: vec![c] } },
    };
    let spec2 = GameSpec::new(
        DynamicsModel::new(DriftModel::Zero, DiffusionModel::Scalar { sigma: 0.5 }, 1).unwrap(),
        vec![well(-1.0), well(1.0)],
        vec![NominalControl::Zero, NominalControl::Zero],
        InteractionMatrix::two_player(0.6).unwrap(),
        1.0,
        0.002,
        vec![0.0],
    )
    .unwrap();
    let t0 = Instant::now();
    let mut sink = 0.0;
    for rep in 0..100 {
        let out = fold_reference(
            &spec2, 0, 0.0, &[0.0], 2000, rep, 0.0f64,
            |a, _, t, x, _| *a += spec2.mixed_running_cost(0, t, x) * 0.002,
            |a, x| *a += spec2.mixed_terminal_cost(0, x),
        )
        .unwrap();
        sink += out[0];
    }
    println!("fold mixed-cost: {:.2} ns/step ({sink:.3})", t0.elapsed().as_nanos() as f64 / 1e8);
}
