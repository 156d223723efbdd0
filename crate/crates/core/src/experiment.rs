//! Reproducible two-player experiment suite.
//!
//! One run sweeps the coupling regimes in the config and, for each regime
//! and player, computes both faces of the same equilibrium:
//!
//! - the *tilted* perspective: a reference ensemble reweighted by
//!   `exp(-S_i)`, and
//! - the *controlled* perspective: closed-loop rollouts under the
//!   sampling-based feedback law;
//!
//! then writes marginal densities over time, terminal densities, the
//! between-player expectation distance curve, a tilted-vs-controlled
//! consistency report, and a validation report against the finite-difference
//! (and, for the uncoupled regime, Riccati) oracles. Every artifact is a CSV
//! with a fixed schema, and the run ends with a checksummed manifest, so a
//! rerun with the same config and seed is byte-identical.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::nash_closed_loop;
use crate::desirability::estimate_z;
use crate::error::{Error, Result};
use crate::game::{
    CenterPath, DriftModel, GameSpec, InteractionMatrix, NominalControl, RunningCost,
    TerminalCost,
};
use crate::measure::{tilt_weights, weighted_density, EnsembleMarginal, WeightedEnsemble};
use crate::oracle::{riccati_lq_reference, solve_linear_pde_fd, Grid1D, ZField};
use crate::sde::rollout_reference;
use crate::seeding;

const SALT_REFERENCE: u64 = 1;
const SALT_CLOSED_LOOP: u64 = 2;
const SALT_FIELD: u64 = 3;
const SALT_REGIME: u64 = 4;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Monte Carlo budgets. `m_reference` drives the tilted ensembles and the
/// oracle validation queries, `m_policy` is the rollout count behind each
/// feedback-control query, `m_ensemble` the closed-loop path count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingBudget {
    #[serde(rename = "M_reference")]
    pub m_reference: usize,
    #[serde(rename = "M_policy")]
    pub m_policy: usize,
    #[serde(rename = "M_ensemble")]
    pub m_ensemble: usize,
    pub seed: u64,
}

/// KDE bandwidth: a fixed value or the `1.06 sigma ESS^{-1/5}` rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BandwidthDoc", into = "BandwidthDoc")]
pub enum BandwidthSpec {
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BandwidthDoc {
    Text(String),
    Value(f64),
}

impl TryFrom<BandwidthDoc> for BandwidthSpec {
    type Error = Error;

    fn try_from(doc: BandwidthDoc) -> Result<Self> {
        match doc {
            BandwidthDoc::Text(s) if s == "auto" => Ok(BandwidthSpec::Auto),
            BandwidthDoc::Text(s) => Err(Error::InvalidConfig(format!(
                "kde_bandwidth must be \"auto\" or a positive number, got \"{s}\""
            ))),
            BandwidthDoc::Value(v) if v > 0.0 => Ok(BandwidthSpec::Fixed(v)),
            BandwidthDoc::Value(v) => Err(Error::InvalidConfig(format!(
                "kde_bandwidth must be positive, got {v}"
            ))),
        }
    }
}

impl From<BandwidthSpec> for BandwidthDoc {
    fn from(b: BandwidthSpec) -> Self {
        match b {
            BandwidthSpec::Auto => BandwidthDoc::Text("auto".into()),
            BandwidthSpec::Fixed(v) => BandwidthDoc::Value(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub directory: PathBuf,
    pub kde_bandwidth: BandwidthSpec,
    /// States at which Monte Carlo desirability is validated against the
    /// finite-difference oracle.
    pub query_grid: Vec<Vec<f64>>,
}

/// Full experiment description: base game, coupling regimes, budgets,
/// output layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec: GameSpec,
    /// Coupling strengths, each in (-1, 1); the base spec's interaction
    /// matrix is replaced per regime.
    pub gammas: Vec<f64>,
    /// Use the non-reciprocal coupling `[[1, -gamma], [gamma, 1]]` instead
    /// of the symmetric `[[1, gamma], [gamma, 1]]`.
    pub asymmetric: bool,
    pub sampling: SamplingBudget,
    pub outputs: OutputSpec,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// Collect every semantic violation (the JSON layer already enforces
    /// structure); an empty list means the config is usable by the
    /// single-shot commands. The regime sweep has extra requirements, see
    /// [`ExperimentConfig::experiment_violations`].
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, g) in self.gammas.iter().enumerate() {
            if !(g.abs() < 1.0) {
                out.push(format!("gammas[{i}]: |gamma| must be < 1, got {g}"));
            }
        }
        for (field, value) in [
            ("M_reference", self.sampling.m_reference),
            ("M_policy", self.sampling.m_policy),
            ("M_ensemble", self.sampling.m_ensemble),
        ] {
            if value == 0 {
                out.push(format!("sampling.{field}: must be >= 1"));
            }
        }
        if self.outputs.directory.as_os_str().is_empty() {
            out.push("outputs.directory: must not be empty".into());
        }
        for (i, x) in self.outputs.query_grid.iter().enumerate() {
            if x.len() != self.spec.state_dim() {
                out.push(format!(
                    "outputs.query_grid[{i}]: dimension {} does not match the state dimension {}",
                    x.len(),
                    self.spec.state_dim()
                ));
            }
        }
        out
    }

    /// Violations that block the full regime-sweep experiment.
    pub fn experiment_violations(&self) -> Vec<String> {
        let mut out = self.violations();
        if self.gammas.is_empty() {
            out.push("gammas: at least one coupling regime is required".into());
        }
        if self.spec.players() != 2 {
            out.push(format!(
                "spec.players: the regime sweep is defined for 2 players, got {}",
                self.spec.players()
            ));
        }
        if self.spec.state_dim() != 1 {
            out.push(format!(
                "spec.initial_state: the experiment suite is 1-D, got dimension {}",
                self.spec.state_dim()
            ));
        }
        if self.spec.dynamics().diffusion.scalar_1d().is_none() {
            out.push("spec.dynamics.diffusion: scalar 1-D diffusion required".into());
        }
        out
    }

    fn interaction_for(&self, gamma: f64) -> Result<InteractionMatrix> {
        if self.asymmetric {
            InteractionMatrix::two_player_asymmetric(gamma)
        } else {
            InteractionMatrix::two_player(gamma)
        }
    }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
}

/// Inventory of one experiment run: artifact checksums plus the config hash
/// and seed that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
    pub config_hash: String,
    pub seed: u64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

struct ArtifactWriter {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl ArtifactWriter {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(ArtifactWriter {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        self.written.push(path);
        Ok(())
    }

    fn cleanup(&self) {
        for path in &self.written {
            let _ = fs::remove_file(path);
        }
    }

    fn manifest(&self, config_hash: String, seed: u64) -> Result<Manifest> {
        let mut files = Vec::with_capacity(self.written.len());
        for path in &self.written {
            let bytes = fs::read(path)?;
            let rel = path
                .strip_prefix(&self.dir)
                .unwrap_or(path)
                .to_string_lossy()
                .into_owned();
            files.push(ManifestEntry {
                path: rel,
                sha256: sha256_hex(&bytes),
            });
        }
        files.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(Manifest {
            files,
            config_hash,
            seed,
        })
    }
}

struct RegimeEnsembles {
    tilted: Vec<WeightedEnsemble>,
    controlled: Vec<crate::sde::TrajectoryBatch>,
}

fn bandwidth_for(
    config: &ExperimentConfig,
    ensemble: &WeightedEnsemble,
    t: f64,
    floor: f64,
) -> Result<f64> {
    match config.outputs.kde_bandwidth {
        BandwidthSpec::Fixed(h) => Ok(h),
        // Floored at one grid spacing: the t = 0 marginal is a point mass,
        // where the spread-based rule degenerates, and a kernel narrower
        // than the grid would slip through the trapezoid mass check anyway.
        BandwidthSpec::Auto => {
            Ok(crate::measure::silverman_bandwidth(ensemble, t)?.max(floor))
        }
    }
}

/// Density evaluation grid: well centers and start state padded by four
/// diffusion lengths, 241 points.
fn density_grid(spec: &GameSpec) -> Vec<Vec<f64>> {
    let sigma = spec.dynamics().diffusion.scalar_1d().unwrap_or(1.0);
    let pad = 4.0 * sigma.abs() * spec.horizon().sqrt();
    let mut lo = spec.initial_state()[0];
    let mut hi = lo;
    for cost in spec.costs() {
        if let RunningCost::QuadraticWell { center, .. } = &cost.running {
            for t in [0.0, spec.horizon()] {
                let c = center.coord_at(0, t, spec.horizon());
                lo = lo.min(c);
                hi = hi.max(c);
            }
        }
        if let TerminalCost::Quadratic { center, .. } = &cost.terminal {
            let c = center.coord_at(0, spec.horizon(), spec.horizon());
            lo = lo.min(c);
            hi = hi.max(c);
        }
    }
    let (lo, hi) = (lo - pad, hi + pad);
    (0..241)
        .map(|i| vec![lo + (hi - lo) * i as f64 / 240.0])
        .collect()
}

/// Indices of (up to) eleven evenly spaced time slices including both ends.
fn time_slices(steps: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=10)
        .map(|j| ((j * steps) as f64 / 10.0).round() as usize)
        .collect();
    out.dedup();
    out
}

/// Whether the uncoupled single-player closed form applies to this regime.
fn riccati_applicable(spec: &GameSpec, gamma: f64) -> bool {
    gamma == 0.0
        && spec.state_dim() == 1
        && matches!(spec.dynamics().drift, DriftModel::Zero)
        && (0..spec.players()).all(|p| matches!(spec.nominal_control(p), NominalControl::Zero))
}

fn tracking_parameters(spec: &GameSpec, player: usize) -> Option<(f64, f64, CenterPath)> {
    let (q, center) = match &spec.cost(player).running {
        RunningCost::QuadraticWell { q, center } => (*q, center.clone()),
        RunningCost::Zero => (0.0, CenterPath::Constant { c: vec![0.0] }),
    };
    let q_t = match &spec.cost(player).terminal {
        TerminalCost::Quadratic { q_t, .. } => *q_t,
        TerminalCost::Zero => 0.0,
    };
    Some((q, q_t, center)).filter(|_| q > 0.0 || q_t > 0.0)
}

/// Run the full suite. Returns the manifest (also written to
/// `manifest.json`); on failure every partial artifact is removed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Manifest> {
    let violations = config.experiment_violations();
    if !violations.is_empty() {
        return Err(Error::InvalidConfig(violations.join("; ")));
    }
    let mut writer = ArtifactWriter::new(&config.outputs.directory)?;
    match run_inner(config, &mut writer) {
        Ok(()) => {
            let config_hash = sha256_hex(config.to_json().as_bytes());
            let manifest = writer.manifest(config_hash, config.sampling.seed)?;
            let manifest_json =
                serde_json::to_string_pretty(&manifest).expect("manifest serialization");
            fs::write(config.outputs.directory.join("manifest.json"), manifest_json)?;
            Ok(manifest)
        }
        Err(err) => {
            writer.cleanup();
            Err(err)
        }
    }
}

fn sample_regime(config: &ExperimentConfig, spec: &GameSpec, regime_idx: usize) -> Result<RegimeEnsembles> {
    let seed = config.sampling.seed;
    let regime_seed = seeding::derive2(seed, SALT_REGIME, regime_idx as u64);
    let mut tilted = Vec::with_capacity(2);
    for player in 0..2 {
        let batch = Arc::new(rollout_reference(
            spec,
            player,
            0.0,
            spec.initial_state(),
            config.sampling.m_reference,
            seeding::derive2(regime_seed, SALT_REFERENCE, player as u64),
        )?);
        tilted.push(tilt_weights(batch, spec, player)?);
    }
    let controlled = nash_closed_loop(
        spec,
        config.sampling.m_policy,
        config.sampling.m_ensemble,
        seeding::derive(regime_seed, SALT_CLOSED_LOOP),
    )?;
    Ok(RegimeEnsembles { tilted, controlled })
}

fn run_inner(config: &ExperimentConfig, writer: &mut ArtifactWriter) -> Result<()> {
    let base = &config.spec;
    let grid_states = density_grid(base);
    let grid_spacing = grid_states[1][0] - grid_states[0][0];

    let mut densities = String::from("gamma,player,t,x,density\n");
    let mut terminal_densities = String::from("gamma,player,t,x,density\n");
    let mut distances = String::from("gamma,t,distance\n");
    let mut consistency = String::from("gamma,player,t,mean_tilted,mean_controlled,se_combined\n");
    let mut validation = String::from("gamma,player,x,z_mc,se_mc,z_fd,rel_diff\n");
    let mut riccati_rows = String::from("player,t,mean_riccati,mean_tilted,se_tilted\n");
    let mut wrote_riccati = false;

    for (regime_idx, &gamma) in config.gammas.iter().enumerate() {
        let spec = base.with_interaction(config.interaction_for(gamma)?)?;
        let ensembles = sample_regime(config, &spec, regime_idx)?;
        let steps = ensembles.tilted[0].batch.steps();

        // (c)/(d) marginal densities over time and at the horizon.
        for (player, ensemble) in ensembles.tilted.iter().enumerate() {
            for &k in &time_slices(steps) {
                let t = ensemble.batch.time_at(k);
                let h = bandwidth_for(config, ensemble, t, grid_spacing)?;
                for (x, d) in weighted_density(ensemble, t, &grid_states, h)? {
                    let row = format!("{gamma},{player},{t},{},{d}\n", x[0]);
                    if k == steps {
                        terminal_densities.push_str(&row);
                    }
                    densities.push_str(&row);
                }
            }
        }

        // (e) expectation distance between the tilted marginals.
        let curve = crate::measure::expectation_distance(&[
            EnsembleMarginal::Tilted(&ensembles.tilted[0]),
            EnsembleMarginal::Tilted(&ensembles.tilted[1]),
        ])?;
        for (t, d) in &curve {
            distances.push_str(&format!("{gamma},{t},{d}\n"));
        }

        // (f) tilted vs controlled consistency at every shared grid time.
        for player in 0..2 {
            let tilt = &ensembles.tilted[player];
            let ctrl = EnsembleMarginal::Controlled(&ensembles.controlled[player]);
            if ensembles.controlled[player].steps() != steps {
                return Err(Error::GridMismatch);
            }
            for k in 0..=steps {
                let (mt, st) = tilt.mean_state_at(k);
                let (mc, sc) = ctrl.mean_state_at(k);
                let se = (st[0] * st[0] + sc[0] * sc[0]).sqrt();
                consistency.push_str(&format!(
                    "{gamma},{player},{},{},{},{se}\n",
                    tilt.batch.time_at(k),
                    mt[0],
                    mc[0]
                ));
            }
        }

        // (g) oracle validation: Monte Carlo vs finite differences at the
        // query grid, plus the closed form when the regime is uncoupled.
        let fd_grid = Grid1D::covering(&spec, 801, 4 * steps.max(250))?;
        for player in 0..2 {
            let field = solve_linear_pde_fd(&spec, player, &fd_grid)?;
            let regime_seed = seeding::derive2(config.sampling.seed, SALT_REGIME, regime_idx as u64);
            for (idx, x) in config.outputs.query_grid.iter().enumerate() {
                let batch = rollout_reference(
                    &spec,
                    player,
                    0.0,
                    x,
                    config.sampling.m_reference,
                    seeding::derive2(regime_seed, SALT_FIELD, (player * 1000 + idx) as u64),
                )?;
                let est = estimate_z(&batch, &spec, player)?;
                let z_fd = field.value_at(0.0, x[0]);
                let rel = (est.value - z_fd).abs() / z_fd.abs().max(f64::MIN_POSITIVE);
                validation.push_str(&format!(
                    "{gamma},{player},{},{},{},{z_fd},{rel}\n",
                    x[0], est.value, est.std_error
                ));
            }

            if riccati_applicable(&spec, gamma) && !wrote_riccati {
                if let Some((q, q_t, center)) = tracking_parameters(&spec, player) {
                    let sigma = spec.dynamics().diffusion.scalar_1d().unwrap();
                    let sol = riccati_lq_reference(
                        q,
                        q_t,
                        sigma,
                        spec.horizon(),
                        &center,
                        spec.dt() / 10.0,
                    );
                    let mean = sol.mean_trajectory(spec.initial_state()[0], spec.dt());
                    let tilt = &ensembles.tilted[player];
                    for (k, (t, m_ric)) in mean.iter().enumerate() {
                        let (mt, st) = tilt.mean_state_at(k);
                        riccati_rows.push_str(&format!(
                            "{player},{t},{m_ric},{},{}\n",
                            mt[0], st[0]
                        ));
                    }
                    if player == 1 {
                        wrote_riccati = true;
                    }
                }
            }
        }
    }

    writer.write("densities.csv", &densities)?;
    writer.write("terminal_densities.csv", &terminal_densities)?;
    writer.write("distances.csv", &distances)?;
    writer.write("consistency.csv", &consistency)?;
    writer.write("validation.csv", &validation)?;
    if riccati_rows.lines().count() > 1 {
        writer.write("riccati_check.csv", &riccati_rows)?;
    }
    Ok(())
}

/// A ZField CSV export helper for the CLI `oracle` subcommand.
pub fn write_zfield_csv(field: &ZField, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    field.write_csv(&mut buf)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{
        CostModel, DiffusionModel, DynamicsModel, GameSpec, InteractionMatrix,
    };

    fn small_config(dir: &Path) -> ExperimentConfig {
        let well = |c: f64| CostModel {
            running: RunningCost::QuadraticWell {
                q: 2.0,
                center: CenterPath::LinearInTime { c: vec![c] },
            },
            terminal: TerminalCost::Quadratic {
                q_t: 1.0,
                center: CenterPath::LinearInTime { c: vec![c] },
            },
        };
        let spec = GameSpec::new(
            DynamicsModel::new(
                DriftModel::Zero,
                DiffusionModel::Scalar { sigma: 0.5 },
                1,
            )
            .unwrap(),
            vec![well(-1.0), well(1.0)],
            vec![NominalControl::Zero, NominalControl::Zero],
            InteractionMatrix::two_player(0.6).unwrap(),
            1.0,
            0.05,
            vec![0.0],
        )
        .unwrap();
        ExperimentConfig {
            spec,
            gammas: vec![0.0, 0.6],
            asymmetric: false,
            sampling: SamplingBudget {
                m_reference: 2000,
                m_policy: 250,
                m_ensemble: 30,
                seed: 42,
            },
            outputs: OutputSpec {
                directory: dir.to_path_buf(),
                kde_bandwidth: BandwidthSpec::Auto,
                query_grid: vec![vec![-0.5], vec![0.0], vec![0.5]],
            },
        }
    }

    #[test]
    fn config_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config(dir.path());
        let text = config.to_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(config, back);
        assert!(text.contains("\"M_reference\""));
        assert!(text.contains("\"kde_bandwidth\": \"auto\""));
    }

    #[test]
    fn config_violations_are_collected() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = small_config(dir.path());
        config.gammas = vec![1.5, -0.3];
        config.sampling.m_policy = 0;
        let violations = config.violations();
        assert_eq!(violations.len(), 2, "{violations:?}");
        assert!(violations[0].contains("gammas[0]"));
        assert!(violations[1].contains("M_policy"));
    }

    #[test]
    fn bandwidth_doc_forms() {
        let fixed: BandwidthSpec = serde_json::from_str("0.25").unwrap();
        assert_eq!(fixed, BandwidthSpec::Fixed(0.25));
        let auto: BandwidthSpec = serde_json::from_str("\"auto\"").unwrap();
        assert_eq!(auto, BandwidthSpec::Auto);
        assert!(serde_json::from_str::<BandwidthSpec>("\"fast\"").is_err());
        assert!(serde_json::from_str::<BandwidthSpec>("-0.5").is_err());
    }

    #[test]
    fn run_produces_complete_manifest_and_reruns_identically() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let mut config = small_config(dir1.path());
        let manifest1 = run_experiment(&config).unwrap();
        config.outputs.directory = dir2.path().to_path_buf();
        let manifest2 = run_experiment(&config).unwrap();

        let names: Vec<&str> = manifest1.files.iter().map(|f| f.path.as_str()).collect();
        for expected in [
            "consistency.csv",
            "densities.csv",
            "distances.csv",
            "riccati_check.csv",
            "terminal_densities.csv",
            "validation.csv",
        ] {
            assert!(names.contains(&expected), "missing {expected}: {names:?}");
        }
        // Manifest is complete and correct: every file exists and hashes match.
        for entry in &manifest1.files {
            let bytes = std::fs::read(dir1.path().join(&entry.path)).unwrap();
            assert_eq!(sha256_hex(&bytes), entry.sha256);
        }
        // Byte-identical rerun (directory differs, content must not).
        assert_eq!(manifest1.files.len(), manifest2.files.len());
        for (a, b) in manifest1.files.iter().zip(&manifest2.files) {
            assert_eq!(a.path, b.path);
            assert_eq!(a.sha256, b.sha256, "artifact {} differs across reruns", a.path);
        }
    }

    #[test]
    fn densities_integrate_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = small_config(dir.path());
        config.gammas = vec![0.6];
        run_experiment(&config).unwrap();
        let text = std::fs::read_to_string(dir.path().join("terminal_densities.csv")).unwrap();
        let mut by_player: std::collections::BTreeMap<usize, Vec<(f64, f64)>> = Default::default();
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            let player: usize = cols[1].parse().unwrap();
            let x: f64 = cols[3].parse().unwrap();
            let d: f64 = cols[4].parse().unwrap();
            by_player.entry(player).or_default().push((x, d));
        }
        for (player, points) in by_player {
            let dx = points[1].0 - points[0].0;
            let mass: f64 = points.iter().map(|(_, d)| d * dx).sum();
            assert!((mass - 1.0).abs() <= 0.01, "player {player} mass = {mass}");
        }
    }

    #[test]
    fn failed_runs_leave_no_partial_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = small_config(dir.path());
        // Degenerate budget: the tilt cannot reach the default ESS floor.
        config.sampling.m_reference = 3;
        assert!(run_experiment(&config).is_err());
        let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert!(leftovers.is_empty(), "{leftovers:?}");
    }
}
