//! Command-line driver: loads an experiment config, applies global
//! overrides, and dispatches to the library.
//!
//! Exit codes: 0 on success, 1 on config/usage validation failure, 2 on
//! runtime or numerical failure.

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use lsdg::control::{control_estimate, make_pi_policy};
use lsdg::desirability::estimate_z_field;
use lsdg::experiment::{run_experiment, ExperimentConfig};
use lsdg::game::{
    CenterPath, DriftModel, GameSpec, NominalControl, RunningCost, TerminalCost,
};
use lsdg::measure::{cost_equivalence_check, tilt_weights};
use lsdg::oracle::{riccati_lq_reference, solve_linear_pde_fd, Grid1D};
use lsdg::sde::rollout_reference;
use lsdg::seeding;
use lsdg::Error;

const CONFIG_SCHEMA_HELP: &str = "\
Config document (JSON):
{
  \"spec\": {
    \"players\": N,
    \"horizon\": T, \"dt\": step, \"initial_state\": [x0...],
    \"dynamics\": {
      \"drift\": {\"type\": \"zero\"} | {\"type\": \"constant\", \"b\": [...]}
               | {\"type\": \"linear\", \"a\": [[...]], \"b\": [...]},
      \"diffusion\": {\"type\": \"scalar\", \"sigma\": s} | {\"type\": \"matrix\", \"g\": [[...]]}
    },
    \"costs\": [{
      \"running\": {\"type\": \"zero\"} | {\"type\": \"quadratic_well\", \"q\": q,
                   \"center\": {\"type\": \"constant\"|\"linear_in_time\", \"c\": [...]}},
      \"terminal\": {\"type\": \"zero\"} | {\"type\": \"quadratic\", \"q_t\": q_t, \"center\": {...}}
    }, ...],
    \"nominal_controls\": [{\"type\": \"zero\"} | {\"type\": \"constant\", \"u\": [...]}, ...],
    \"alpha\": [[...]]
  },
  \"gammas\": [-0.6, 0.0, 0.6],
  \"asymmetric\": false,
  \"sampling\": {\"M_reference\": M, \"M_policy\": M, \"M_ensemble\": M, \"seed\": u64},
  \"outputs\": {\"directory\": \"out\", \"kde_bandwidth\": \"auto\"|h, \"query_grid\": [[x], ...]}
}
Unknown fields are rejected.";

#[derive(Parser)]
#[command(
    name = "lsdg",
    about = "Feedback Nash equilibria of linearly solvable stochastic differential games",
    disable_help_subcommand = true
)]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true, default_value = "configs/default.json")]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the reference-sampling path count.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config document against the schema and report every violation.
    Validate {
        /// Config path (defaults to --config).
        path: Option<PathBuf>,
    },
    /// Reference rollouts of the base spec, dumped to CSV.
    Sample {
        #[arg(long, default_value_t = 0)]
        player: usize,
    },
    /// Monte Carlo desirability estimates at the config's query grid.
    Desirability {
        /// Query time (grid-aligned).
        #[arg(long, default_value_t = 0.0)]
        t: f64,
    },
    /// One feedback-control query at (t, x).
    Control {
        #[arg(long, default_value_t = 0)]
        player: usize,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        /// State, comma separated.
        #[arg(long, default_value = "0.0", allow_hyphen_values = true)]
        x: String,
    },
    /// Exponentially tilted reference ensembles: ESS and terminal moments.
    Reweight,
    /// Finite-difference (and, when applicable, closed-form) oracle solves
    /// with a Monte Carlo comparison report.
    Oracle {
        #[arg(long, default_value_t = 801)]
        nx: usize,
        #[arg(long, default_value_t = 1000)]
        nt: usize,
    },
    /// The full regime-sweep experiment with CSV artifacts and a manifest.
    Experiment,
    /// Empirical check that the measure-theoretic and control-theoretic
    /// costs agree under the sampling-based equilibrium policies.
    Equivalence,
}

/// Run with explicit argv, returning the process exit code.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            // Help/version requests are successes; anything else is a usage
            // error and gets the config schema appended.
            use clap::error::ErrorKind;
            let kind = err.kind();
            let _ = err.print();
            if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                return 0;
            }
            eprintln!("\n{CONFIG_SCHEMA_HELP}");
            return 1;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Json(_) | Error::InvalidSpec(_) | Error::InvalidConfig(_) => 1,
                _ => 2,
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::from_json_file(&cli.config)?;
    if let Some(out) = &cli.out {
        config.outputs.directory = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.sampling.seed = seed;
    }
    if let Some(paths) = cli.paths {
        config.sampling.m_reference = paths;
    }
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(Error::InvalidConfig(violations.join("\n")));
    }
    Ok(config)
}

fn parse_state(text: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("cannot parse state component '{p}'")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<i32, Error> {
    match &cli.command {
        Command::Validate { path } => {
            let path = path.clone().unwrap_or_else(|| cli.config.clone());
            let text = fs::read_to_string(&path)?;
            match ExperimentConfig::from_json(&text) {
                Ok(config) => {
                    let violations = config.violations();
                    if violations.is_empty() {
                        if !cli.quiet {
                            println!("{}: ok", path.display());
                        }
                        Ok(0)
                    } else {
                        for v in violations {
                            eprintln!("{}: {v}", path.display());
                        }
                        Ok(1)
                    }
                }
                Err(err) => {
                    eprintln!("{}: {err}", path.display());
                    eprintln!("\n{CONFIG_SCHEMA_HELP}");
                    Ok(1)
                }
            }
        }

        Command::Sample { player } => {
            let config = load_config(&cli)?;
            let spec = &config.spec;
            let batch = rollout_reference(
                spec,
                *player,
                0.0,
                spec.initial_state(),
                config.sampling.m_reference,
                config.sampling.seed,
            )?;
            let out_dir = &config.outputs.directory;
            fs::create_dir_all(out_dir)?;
            let path = out_dir.join(format!("samples_player{player}.csv"));
            let mut buf = Vec::new();
            batch.write_csv(&mut buf)?;
            fs::write(&path, buf)?;
            if !cli.quiet {
                println!(
                    "wrote {} paths x {} steps to {}",
                    batch.paths(),
                    batch.steps(),
                    path.display()
                );
            }
            Ok(0)
        }

        Command::Desirability { t } => {
            let config = load_config(&cli)?;
            let spec = &config.spec;
            let out_dir = &config.outputs.directory;
            fs::create_dir_all(out_dir)?;
            let mut csv = String::from("player,x,z,se,ess\n");
            for player in 0..spec.players() {
                let estimates = estimate_z_field(
                    spec,
                    player,
                    *t,
                    &config.outputs.query_grid,
                    config.sampling.m_reference,
                    seeding::derive(config.sampling.seed, player as u64),
                )?;
                for (x, est) in config.outputs.query_grid.iter().zip(&estimates) {
                    if !cli.quiet {
                        println!(
                            "player {player} x = {:+.4}: Z = {:.6} +- {:.6} (ess {:.0})",
                            x[0], est.value, est.std_error, est.ess
                        );
                    }
                    csv.push_str(&format!(
                        "{player},{},{},{},{}\n",
                        x[0], est.value, est.std_error, est.ess
                    ));
                }
            }
            let path = out_dir.join("desirability.csv");
            fs::write(&path, csv)?;
            if !cli.quiet {
                println!("wrote {}", path.display());
            }
            Ok(0)
        }

        Command::Control { player, t, x } => {
            let config = load_config(&cli)?;
            let state = parse_state(x)?;
            let paths = cli.paths.unwrap_or(config.sampling.m_policy);
            let est = control_estimate(
                &config.spec,
                *player,
                *t,
                &state,
                paths,
                config.sampling.seed,
            )?;
            println!(
                "u*({t}, {state:?}) = {:?} +- {:?} (ess {:.0} of {paths})",
                est.value, est.std_error, est.ess
            );
            Ok(0)
        }

        Command::Reweight => {
            let config = load_config(&cli)?;
            let spec = &config.spec;
            for player in 0..spec.players() {
                let batch = Arc::new(rollout_reference(
                    spec,
                    player,
                    0.0,
                    spec.initial_state(),
                    config.sampling.m_reference,
                    seeding::derive(config.sampling.seed, player as u64),
                )?);
                let ensemble = tilt_weights(batch, spec, player)?;
                let last = ensemble.batch.steps();
                let (mean, se) = ensemble.mean_state_at(last);
                println!(
                    "player {player}: ESS = {:.0} of {} ({:.1}%), terminal mean = {:?} +- {:?}, std = {:.4}",
                    ensemble.ess,
                    config.sampling.m_reference,
                    100.0 * ensemble.ess / config.sampling.m_reference as f64,
                    mean,
                    se,
                    ensemble.std_at(last, 0),
                );
            }
            Ok(0)
        }

        Command::Oracle { nx, nt } => {
            let config = load_config(&cli)?;
            oracle_report(&cli, &config, *nx, *nt)
        }

        Command::Experiment => {
            let config = load_config(&cli)?;
            let manifest = run_experiment(&config)?;
            if !cli.quiet {
                println!(
                    "experiment complete: {} artifacts in {} (config hash {})",
                    manifest.files.len(),
                    config.outputs.directory.display(),
                    &manifest.config_hash[..12],
                );
                for entry in &manifest.files {
                    println!("  {}  {}", &entry.sha256[..12], entry.path);
                }
            }
            Ok(0)
        }

        Command::Equivalence => {
            let config = load_config(&cli)?;
            let spec = &config.spec;
            let policies: Vec<_> = (0..spec.players())
                .map(|p| {
                    make_pi_policy(
                        spec,
                        p,
                        config.sampling.m_policy,
                        seeding::derive2(config.sampling.seed, 0x6571, p as u64),
                    )
                })
                .collect();
            let paths = cli.paths.unwrap_or(config.sampling.m_ensemble);
            let pairs = cost_equivalence_check(spec, &policies, paths, config.sampling.seed)?;
            let mut ok = true;
            for (player, pair) in pairs.iter().enumerate() {
                let diff = (pair.j_measure - pair.j_control).abs();
                let combined = (pair.se_measure.powi(2) + pair.se_control.powi(2)).sqrt();
                let verdict = diff <= 4.0 * combined;
                ok &= verdict;
                println!(
                    "player {player}: J_measure = {:.5} +- {:.5}, J_control = {:.5} +- {:.5}, |diff| = {:.5} ({} 4 SE)",
                    pair.j_measure,
                    pair.se_measure,
                    pair.j_control,
                    pair.se_control,
                    diff,
                    if verdict { "within" } else { "EXCEEDS" },
                );
            }
            Ok(if ok { 0 } else { 2 })
        }
    }
}

/// Closed-form desirability for the pure Gaussian case (single decoupled
/// player, zero drift and nominal, zero running cost, constant-center
/// quadratic terminal): `Z(0, x) = exp(-k (x - c)^2 / (2 (1 + k s^2 T))) /
/// sqrt(1 + k s^2 T)`.
fn closed_form_gaussian(spec: &GameSpec, player: usize) -> Option<impl Fn(f64) -> f64> {
    if spec.state_dim() != 1
        || !matches!(spec.dynamics().drift, DriftModel::Zero)
        || !matches!(spec.nominal_control(player), NominalControl::Zero)
        || !spec.interaction().is_identity()
        || !matches!(spec.cost(player).running, RunningCost::Zero)
    {
        return None;
    }
    let sigma = spec.dynamics().diffusion.scalar_1d()?;
    let (q_t, c) = match &spec.cost(player).terminal {
        TerminalCost::Quadratic {
            q_t,
            center: CenterPath::Constant { c },
        } => (*q_t, c[0]),
        _ => return None,
    };
    let s2t = sigma * sigma * spec.horizon();
    let denom = 1.0 + q_t * s2t;
    Some(move |x: f64| (-(0.5 * q_t) * (x - c) * (x - c) / denom).exp() / denom.sqrt())
}

fn oracle_report(cli: &Cli, config: &ExperimentConfig, nx: usize, nt: usize) -> Result<i32, Error> {
    let spec = &config.spec;
    let out_dir = &config.outputs.directory;
    fs::create_dir_all(out_dir)?;
    let grid = Grid1D::covering(spec, nx, nt)?;
    if !cli.quiet {
        println!(
            "grid: x in [{:.3}, {:.3}], nx = {nx}, nt = {nt}",
            grid.x_min, grid.x_max
        );
    }
    let mut worst = 0.0f64;
    for player in 0..spec.players() {
        let field = solve_linear_pde_fd(spec, player, &grid)?;
        let path = out_dir.join(format!("zfield_player{player}.csv"));
        lsdg::experiment::write_zfield_csv(&field, &path)?;

        let estimates = estimate_z_field(
            spec,
            player,
            0.0,
            &config.outputs.query_grid,
            config.sampling.m_reference,
            seeding::derive2(config.sampling.seed, 0x0fd, player as u64),
        )?;
        for (x, est) in config.outputs.query_grid.iter().zip(&estimates) {
            let z_fd = field.value_at(0.0, x[0]);
            let rel = (est.value - z_fd).abs() / z_fd;
            worst = worst.max(rel);
            if !cli.quiet {
                println!(
                    "player {player} x = {:+.3}: Z_mc = {:.6} +- {:.6}, Z_fd = {:.6}, rel diff = {:.4}%",
                    x[0],
                    est.value,
                    est.std_error,
                    z_fd,
                    100.0 * rel
                );
            }
        }

        if let Some(exact) = closed_form_gaussian(spec, player) {
            let mut worst_fd = 0.0f64;
            for x in &config.outputs.query_grid {
                let z_fd = field.value_at(0.0, x[0]);
                worst_fd = worst_fd.max((z_fd - exact(x[0])).abs() / exact(x[0]));
            }
            println!(
                "player {player}: closed-form check, max FD error = {:.4}%",
                100.0 * worst_fd
            );
        }

        // Uncoupled tracking regime: cross-check against the Riccati form.
        if spec.interaction().is_identity()
            && matches!(spec.dynamics().drift, DriftModel::Zero)
            && matches!(spec.nominal_control(player), NominalControl::Zero)
        {
            if let RunningCost::QuadraticWell { q, center } = &spec.cost(player).running {
                if let TerminalCost::Quadratic { q_t, .. } = &spec.cost(player).terminal {
                    let sigma = spec.dynamics().diffusion.scalar_1d().unwrap();
                    let sol = riccati_lq_reference(
                        *q,
                        *q_t,
                        sigma,
                        spec.horizon(),
                        center,
                        spec.dt() / 10.0,
                    );
                    let x0 = spec.initial_state()[0];
                    let z_ric = (-sol.value(0.0, x0)).exp();
                    let z_fd = field.value_at(0.0, x0);
                    println!(
                        "player {player}: Riccati cross-check at x0, Z_fd = {:.6}, Z_riccati = {:.6}, rel diff = {:.4}%",
                        z_fd,
                        z_ric,
                        100.0 * (z_fd - z_ric).abs() / z_ric
                    );
                }
            }
        }
    }
    if !cli.quiet {
        println!("max Monte Carlo vs finite-difference relative difference: {:.4}%", 100.0 * worst);
    }
    Ok(0)
}
