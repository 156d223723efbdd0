//! Independent verification solvers.
//!
//! Three routes that never touch the Monte Carlo sampler:
//!
//! - [`solve_linear_pde_fd`] — a one-dimensional Crank-Nicolson solver for
//!   the decoupled linear desirability PDE
//!   `-dZ/dt = (f + g ubar) Z_x + (sigma^2/2) Z_xx - (sum_j beta_ij C_j) Z`,
//!   integrated backward from `Z_T = exp(-sum_j beta_ij Psi_j)`;
//! - [`hjb_residual`] — a finite-difference residual check that the value
//!   functions reconstructed through the log transform satisfy the coupled
//!   nonlinear HJB system, nonlinear term evaluated in its Kronecker form;
//! - [`riccati_lq_reference`] — the closed-form quadratic value function for
//!   the uncoupled single-player tracking problem, as a backward Riccati
//!   system integrated by fixed-step RK4.
//!
//! Oracles are deliberately one-dimensional: the spatial grids exist to
//! check the grid-free sampler, not to compete with it.

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::game::{CenterPath, GameSpec};

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

/// Uniform space-time grid for the 1-D finite-difference solver.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    /// Spatial points (>= 3).
    pub nx: usize,
    /// Backward time steps.
    pub nt: usize,
    /// Horizon covered by the time grid.
    pub horizon: f64,
    /// Derived spacing `(x_max - x_min) / (nx - 1)`.
    pub dx: f64,
    /// Derived step `horizon / nt`.
    pub dtau: f64,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, nx: usize, nt: usize, horizon: f64) -> Result<Self> {
        if !(x_min < x_max) {
            return Err(Error::InvalidSpec("grid requires x_min < x_max".into()));
        }
        if nx < 3 {
            return Err(Error::InvalidSpec("grid requires nx >= 3".into()));
        }
        if nt == 0 {
            return Err(Error::InvalidSpec("grid requires nt >= 1".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::InvalidSpec("grid horizon must be positive".into()));
        }
        Ok(Grid1D {
            x_min,
            x_max,
            nx,
            nt,
            horizon,
            dx: (x_max - x_min) / (nx - 1) as f64,
            dtau: horizon / nt as f64,
        })
    }

    /// A grid wide enough for the given spec: all well centers and the
    /// initial state padded by `6 sigma sqrt(T)` on each side, so boundary
    /// influence at interior query points is negligible.
    pub fn covering(spec: &GameSpec, nx: usize, nt: usize) -> Result<Self> {
        let sigma = spec
            .dynamics()
            .diffusion
            .scalar_1d()
            .ok_or_else(|| Error::InvalidSpec("covering grid requires 1-D diffusion".into()))?;
        let pad = 6.0 * sigma.abs() * spec.horizon().sqrt();
        let mut lo = spec.initial_state()[0];
        let mut hi = lo;
        for cost in spec.costs() {
            for t in [0.0, spec.horizon()] {
                if let crate::game::RunningCost::QuadraticWell { center, .. } = &cost.running {
                    let c = center.coord_at(0, t, spec.horizon());
                    lo = lo.min(c);
                    hi = hi.max(c);
                }
                if let crate::game::TerminalCost::Quadratic { center, .. } = &cost.terminal {
                    let c = center.coord_at(0, t, spec.horizon());
                    lo = lo.min(c);
                    hi = hi.max(c);
                }
            }
        }
        Grid1D::new(lo - pad, hi + pad, nx, nt, spec.horizon())
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dtau
    }

    fn same_as(&self, other: &Grid1D) -> bool {
        self.nx == other.nx
            && self.nt == other.nt
            && (self.x_min - other.x_min).abs() < 1e-12
            && (self.x_max - other.x_max).abs() < 1e-12
            && (self.horizon - other.horizon).abs() < 1e-12
    }
}

// ---------------------------------------------------------------------------
// Desirability field
// ---------------------------------------------------------------------------

/// Finite-difference solution `Z_i(t_k, x_j)`, strictly positive everywhere,
/// with the terminal row equal to `exp(-sum_j beta_ij Psi_j(x))` exactly.
#[derive(Debug, Clone)]
pub struct ZField {
    /// `(nt + 1) x nx` values; row `k` is time `t_k = k dtau`, the last row
    /// is the terminal condition.
    pub values: Array2<f64>,
    pub grid: Grid1D,
    pub player: usize,
}

impl ZField {
    /// Nearest spatial index of `x` (clamped to the grid).
    pub fn x_index(&self, x: f64) -> usize {
        let j = ((x - self.grid.x_min) / self.grid.dx).round();
        j.clamp(0.0, (self.grid.nx - 1) as f64) as usize
    }

    /// Nearest time row of `t` (clamped).
    pub fn t_index(&self, t: f64) -> usize {
        let k = (t / self.grid.dtau).round();
        k.clamp(0.0, self.grid.nt as f64) as usize
    }

    /// Bilinear interpolation of `Z(t, x)`.
    pub fn value_at(&self, t: f64, x: f64) -> f64 {
        let tf = (t / self.grid.dtau).clamp(0.0, self.grid.nt as f64);
        let xf = ((x - self.grid.x_min) / self.grid.dx).clamp(0.0, (self.grid.nx - 1) as f64);
        let k0 = tf.floor() as usize;
        let j0 = xf.floor() as usize;
        let k1 = (k0 + 1).min(self.grid.nt);
        let j1 = (j0 + 1).min(self.grid.nx - 1);
        let wt = tf - k0 as f64;
        let wx = xf - j0 as f64;
        let a = self.values[[k0, j0]] * (1.0 - wx) + self.values[[k0, j1]] * wx;
        let b = self.values[[k1, j0]] * (1.0 - wx) + self.values[[k1, j1]] * wx;
        a * (1.0 - wt) + b * wt
    }

    /// Central-difference `d(log Z)/dx` at the grid node nearest `(t, x)`.
    pub fn dlog_dx_at(&self, t: f64, x: f64) -> Result<f64> {
        let k = self.t_index(t);
        let j = self.x_index(x);
        if j == 0 || j + 1 >= self.grid.nx {
            return Err(Error::InvalidSpec(
                "gradient query at the spatial boundary".into(),
            ));
        }
        let right = self.values[[k, j + 1]].ln();
        let left = self.values[[k, j - 1]].ln();
        Ok((right - left) / (2.0 * self.grid.dx))
    }

    /// Dump as CSV with columns `t, x, z`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,x,z")?;
        for k in 0..=self.grid.nt {
            for j in 0..self.grid.nx {
                writeln!(out, "{},{},{}", self.grid.t(k), self.grid.x(j), self.values[[k, j]])?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Finite-difference solver
// ---------------------------------------------------------------------------

/// Time-stepping scheme for the backward solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Second order, unconditionally stable; the default.
    CrankNicolson,
    /// First order, kept for cross-checking; subject to the diffusion CFL
    /// bound `dtau <= 0.9 dx^2 / sigma^2`.
    ExplicitEuler,
}

/// Boundary-adequacy probe configuration: the solve is repeated on a grid
/// trimmed to the central `keep_fraction` of nodes (same spacing, so the
/// interior scheme is identical and the difference isolates the boundary)
/// and the two solutions are compared at `t = 0` on the central
/// `query_fraction` of the full domain. A relative difference above `tol`
/// means the Neumann boundaries are close enough to contaminate queries.
#[derive(Debug, Clone)]
pub struct BoundaryProbe {
    pub keep_fraction: f64,
    pub tol: f64,
    pub query_fraction: f64,
}

impl Default for BoundaryProbe {
    fn default() -> Self {
        BoundaryProbe {
            keep_fraction: 0.85,
            tol: 1e-4,
            query_fraction: 0.35,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FdOptions {
    pub scheme: Scheme,
    pub probe: Option<BoundaryProbe>,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            scheme: Scheme::CrankNicolson,
            probe: Some(BoundaryProbe::default()),
        }
    }
}

struct Coefficients1D {
    sigma: f64,
    /// Effective drift `f(x) + sigma * ubar` per node.
    mu: Vec<f64>,
}

fn coefficients_1d(spec: &GameSpec, player: usize, grid: &Grid1D) -> Result<Coefficients1D> {
    if spec.state_dim() != 1 || spec.input_dim() != 1 {
        return Err(Error::InvalidSpec(
            "finite-difference oracle requires a 1-D state and input".into(),
        ));
    }
    let sigma = spec
        .dynamics()
        .diffusion
        .scalar_1d()
        .ok_or_else(|| Error::InvalidSpec("oracle requires constant scalar diffusion".into()))?;
    let mut ubar = [0.0];
    spec.nominal_control(player).eval_into(&mut ubar);
    let mut mu = Vec::with_capacity(grid.nx);
    let mut f = [0.0];
    for j in 0..grid.nx {
        spec.dynamics().drift.eval_into(&[grid.x(j)], &mut f);
        mu.push(f[0] + sigma * ubar[0]);
    }
    Ok(Coefficients1D { sigma, mu })
}

/// Apply the spatial operator `L(t)` with homogeneous Neumann boundaries:
/// `(L z)_j = mu_j z_x + (sigma^2 / 2) z_xx - c_j z`.
fn apply_operator(co: &Coefficients1D, grid: &Grid1D, c: &[f64], z: &[f64], out: &mut [f64]) {
    let nx = grid.nx;
    let dx = grid.dx;
    let half_s2 = 0.5 * co.sigma * co.sigma;
    out[0] = 2.0 * half_s2 * (z[1] - z[0]) / (dx * dx) - c[0] * z[0];
    for j in 1..nx - 1 {
        let zx = (z[j + 1] - z[j - 1]) / (2.0 * dx);
        let zxx = (z[j + 1] - 2.0 * z[j] + z[j - 1]) / (dx * dx);
        out[j] = co.mu[j] * zx + half_s2 * zxx - c[j] * z[j];
    }
    out[nx - 1] = 2.0 * half_s2 * (z[nx - 2] - z[nx - 1]) / (dx * dx) - c[nx - 1] * z[nx - 1];
}

/// Thomas tridiagonal solve, overwriting `rhs` with the solution.
fn thomas_solve(lower: &[f64], diag: &mut [f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    for i in 1..n {
        let w = lower[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
    }
}

fn solve_on_grid(
    spec: &GameSpec,
    player: usize,
    grid: &Grid1D,
    scheme: Scheme,
) -> Result<Array2<f64>> {
    let co = coefficients_1d(spec, player, grid)?;
    let nx = grid.nx;
    let dtau = grid.dtau;
    let dx = grid.dx;

    if scheme == Scheme::ExplicitEuler {
        let bound = 0.9 * dx * dx / (co.sigma * co.sigma).max(f64::MIN_POSITIVE);
        if dtau > bound {
            return Err(Error::ExplicitStepUnstable { dtau, bound });
        }
    }

    let mut values = Array2::<f64>::zeros((grid.nt + 1, nx));
    // Terminal condition, exact.
    for j in 0..nx {
        let z = (-spec.mixed_terminal_cost(player, &[grid.x(j)])).exp();
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::InstabilityDetected { row: grid.nt });
        }
        values[[grid.nt, j]] = z;
    }

    let mixed = |k: usize, c: &mut [f64]| {
        let t = grid.t(k);
        for (j, slot) in c.iter_mut().enumerate() {
            *slot = spec.mixed_running_cost(player, t, &[grid.x(j)]);
        }
    };

    let half_s2 = 0.5 * co.sigma * co.sigma;
    let mut c_new = vec![0.0; nx];
    let mut c_old = vec![0.0; nx];
    let mut rhs = vec![0.0; nx];
    let mut lz = vec![0.0; nx];
    let mut lower = vec![0.0; nx];
    let mut diag = vec![0.0; nx];
    let mut upper = vec![0.0; nx];
    mixed(grid.nt, &mut c_old);

    for k in (0..grid.nt).rev() {
        mixed(k, &mut c_new);
        let prev = values.row(k + 1).to_vec();
        match scheme {
            Scheme::ExplicitEuler => {
                apply_operator(&co, grid, &c_old, &prev, &mut lz);
                for j in 0..nx {
                    rhs[j] = prev[j] + dtau * lz[j];
                }
            }
            Scheme::CrankNicolson => {
                // rhs = (I + dtau/2 L(t_{k+1})) z^{k+1}
                apply_operator(&co, grid, &c_old, &prev, &mut lz);
                for j in 0..nx {
                    rhs[j] = prev[j] + 0.5 * dtau * lz[j];
                }
                // A = I - dtau/2 L(t_k), tridiagonal with Neumann rows.
                let h = 0.5 * dtau;
                diag[0] = 1.0 + h * (2.0 * half_s2 / (dx * dx) + c_new[0]);
                upper[0] = -h * 2.0 * half_s2 / (dx * dx);
                for j in 1..nx - 1 {
                    let adv = co.mu[j] / (2.0 * dx);
                    let dif = half_s2 / (dx * dx);
                    lower[j] = -h * (dif - adv);
                    diag[j] = 1.0 + h * (2.0 * dif + c_new[j]);
                    upper[j] = -h * (dif + adv);
                }
                lower[nx - 1] = -h * 2.0 * half_s2 / (dx * dx);
                diag[nx - 1] = 1.0 + h * (2.0 * half_s2 / (dx * dx) + c_new[nx - 1]);
                thomas_solve(&lower, &mut diag, &upper, &mut rhs);
            }
        }
        for j in 0..nx {
            if !(rhs[j] > 0.0) || !rhs[j].is_finite() {
                return Err(Error::InstabilityDetected { row: k });
            }
            values[[k, j]] = rhs[j];
        }
        std::mem::swap(&mut c_old, &mut c_new);
    }
    Ok(values)
}

/// Solve the linear desirability PDE for one player on the grid, backward
/// from the exact terminal condition, with homogeneous Neumann boundaries
/// and (by default) a boundary-adequacy probe.
pub fn solve_linear_pde_fd(spec: &GameSpec, player: usize, grid: &Grid1D) -> Result<ZField> {
    solve_linear_pde_fd_with(spec, player, grid, &FdOptions::default())
}

/// [`solve_linear_pde_fd`] with explicit scheme/probe options.
pub fn solve_linear_pde_fd_with(
    spec: &GameSpec,
    player: usize,
    grid: &Grid1D,
    options: &FdOptions,
) -> Result<ZField> {
    if player >= spec.players() {
        return Err(Error::InvalidSpec(format!(
            "player index {player} out of range (N = {})",
            spec.players()
        )));
    }
    let values = solve_on_grid(spec, player, grid, options.scheme)?;

    if let Some(probe) = &options.probe {
        let trim = (((1.0 - probe.keep_fraction) * (grid.nx - 1) as f64) / 2.0).round() as usize;
        if trim >= 1 && grid.nx - 2 * trim >= 3 {
            let sub = Grid1D::new(
                grid.x(trim),
                grid.x(grid.nx - 1 - trim),
                grid.nx - 2 * trim,
                grid.nt,
                grid.horizon,
            )?;
            let sub_values = solve_on_grid(spec, player, &sub, options.scheme)?;
            // Compare at t = 0 on the central query span of the full domain.
            let span = ((grid.nx - 1) as f64 * probe.query_fraction / 2.0).round() as usize;
            let mid = (grid.nx - 1) / 2;
            let lo = mid.saturating_sub(span).max(trim);
            let hi = (mid + span).min(grid.nx - 1 - trim);
            let mut worst = 0.0f64;
            for j in lo..=hi {
                let full = values[[0, j]];
                let trimmed = sub_values[[0, j - trim]];
                worst = worst.max((full - trimmed).abs() / full.abs().max(f64::MIN_POSITIVE));
            }
            if worst > probe.tol {
                return Err(Error::DomainTooNarrow {
                    probe: worst,
                    tol: probe.tol,
                });
            }
        }
    }

    Ok(ZField {
        values,
        grid: grid.clone(),
        player,
    })
}

// ---------------------------------------------------------------------------
// Coupled-HJB residual
// ---------------------------------------------------------------------------

/// Max and mean absolute HJB residual over interior grid points.
#[derive(Debug, Clone, Copy)]
pub struct ResidualNorms {
    pub max_abs: f64,
    pub mean_abs: f64,
}

/// Verify that value functions reconstructed from the desirability fields
/// (`J_i = -sum_j alpha_ij log Z_j`) satisfy the coupled nonlinear HJB
/// system, by finite-differencing `dJ/dt` in time and evaluating the
/// right-hand side — including the nonlinear coupling term in its Kronecker
/// form `(1/2) gradJ^T (beta^T (x) g) diag_j(alpha_ij I_m) (beta (x) g^T)
/// gradJ` — with central differences in space.
///
/// Interior points exclude one time row at each end and a 15% margin at each
/// spatial boundary (where the artificial Neumann condition dominates).
pub fn hjb_residual(spec: &GameSpec, fields: &[ZField]) -> Result<Vec<ResidualNorms>> {
    let n_players = spec.players();
    if fields.len() != n_players {
        return Err(Error::GridMismatch);
    }
    let grid = &fields[0].grid;
    if !fields.iter().all(|f| f.grid.same_as(grid)) {
        return Err(Error::GridMismatch);
    }
    let co = coefficients_1d(spec, 0, grid)?;
    let sigma = co.sigma;
    let alpha = spec.interaction().alpha();
    let beta = spec.interaction().beta();

    // log Z per player, then J_i = -sum_j alpha_ij log Z_j.
    let logs: Vec<Array2<f64>> = fields.iter().map(|f| f.values.mapv(f64::ln)).collect();
    let mut j_fields: Vec<Array2<f64>> = Vec::with_capacity(n_players);
    for i in 0..n_players {
        let mut ji = Array2::<f64>::zeros((grid.nt + 1, grid.nx));
        for (l, lz) in logs.iter().enumerate() {
            let a = alpha[(i, l)];
            if a != 0.0 {
                ji.scaled_add(-a, lz);
            }
        }
        j_fields.push(ji);
    }

    // Kronecker pieces, built once: g is 1x1 here but the construction is
    // written against the general form.
    let g = DMatrix::from_element(1, 1, sigma);
    let beta_t_kron_g = beta.transpose().kronecker(&g);
    let beta_kron_gt = beta.kronecker(&g.transpose());
    let m_dim = 1usize;
    let diag_blocks: Vec<DMatrix<f64>> = (0..n_players)
        .map(|i| {
            let mut d = DMatrix::<f64>::zeros(n_players * m_dim, n_players * m_dim);
            for j in 0..n_players {
                for dd in 0..m_dim {
                    d[(j * m_dim + dd, j * m_dim + dd)] = alpha[(i, j)];
                }
            }
            d
        })
        .collect();

    // Per-player effective nominal drift offset sigma * ubar_i.
    let mut drift_offsets = Vec::with_capacity(n_players);
    for i in 0..n_players {
        let mut ubar = [0.0];
        spec.nominal_control(i).eval_into(&mut ubar);
        drift_offsets.push(sigma * ubar[0]);
    }
    let mut f_buf = [0.0];

    let margin = (((grid.nx - 1) as f64) * 0.15).ceil() as usize;
    let margin = margin.max(1);
    if grid.nt < 2 || grid.nx < 2 * margin + 3 {
        return Err(Error::InvalidSpec(
            "grid too small for an interior residual estimate".into(),
        ));
    }

    let mut grad = DMatrix::<f64>::zeros(n_players, 1);
    let mut norms = vec![
        ResidualNorms {
            max_abs: 0.0,
            mean_abs: 0.0,
        };
        n_players
    ];
    let mut counts = vec![0usize; n_players];
    for k in 1..grid.nt {
        let t = grid.t(k);
        for j in margin..grid.nx - margin {
            let x = grid.x(j);
            // Stacked spatial gradient of all value functions at (k, j).
            for i in 0..n_players {
                grad[(i, 0)] =
                    (j_fields[i][[k, j + 1]] - j_fields[i][[k, j - 1]]) / (2.0 * grid.dx);
            }
            let y = &beta_kron_gt * &grad;
            spec.dynamics().drift.eval_into(&[x], &mut f_buf);
            for i in 0..n_players {
                let dj_dt =
                    (j_fields[i][[k + 1, j]] - j_fields[i][[k - 1, j]]) / (2.0 * grid.dtau);
                let jx = grad[(i, 0)];
                let jxx = (j_fields[i][[k, j + 1]] - 2.0 * j_fields[i][[k, j]]
                    + j_fields[i][[k, j - 1]])
                    / (grid.dx * grid.dx);
                let nonlinear = 0.5 * (grad.transpose() * &beta_t_kron_g * &diag_blocks[i] * &y)[(0, 0)];
                let rhs = spec.cost(i).running_at(t, &[x], spec.horizon())
                    + (f_buf[0] + drift_offsets[i]) * jx
                    + 0.5 * sigma * sigma * jxx
                    - nonlinear;
                let residual = (dj_dt + rhs).abs();
                norms[i].max_abs = norms[i].max_abs.max(residual);
                norms[i].mean_abs += residual;
                counts[i] += 1;
            }
        }
    }
    for (norm, count) in norms.iter_mut().zip(counts) {
        norm.mean_abs /= count.max(1) as f64;
    }
    Ok(norms)
}

// ---------------------------------------------------------------------------
// Riccati reference
// ---------------------------------------------------------------------------

/// Closed-form value function `J(t, x) = p(t) x^2 / 2 + r(t) x + c(t)` for
/// the uncoupled 1-D tracking problem `dx = sigma (u dt + dw)` with cost
/// `integral q/2 (x - m(t))^2 + u^2/2 dt + q_t/2 (x - m(T))^2`.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    /// Ascending sample times from 0 to the horizon.
    pub times: Vec<f64>,
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub c: Vec<f64>,
    pub sigma: f64,
}

impl RiccatiSolution {
    fn interp(&self, series: &[f64], t: f64) -> f64 {
        let last = self.times.len() - 1;
        let tf = (t - self.times[0]) / (self.times[last] - self.times[0]) * last as f64;
        let tf = tf.clamp(0.0, last as f64);
        let i0 = tf.floor() as usize;
        let i1 = (i0 + 1).min(last);
        let w = tf - i0 as f64;
        series[i0] * (1.0 - w) + series[i1] * w
    }

    pub fn p_at(&self, t: f64) -> f64 {
        self.interp(&self.p, t)
    }

    pub fn r_at(&self, t: f64) -> f64 {
        self.interp(&self.r, t)
    }

    pub fn c_at(&self, t: f64) -> f64 {
        self.interp(&self.c, t)
    }

    /// Value function `J(t, x)`.
    pub fn value(&self, t: f64, x: f64) -> f64 {
        0.5 * self.p_at(t) * x * x + self.r_at(t) * x + self.c_at(t)
    }

    /// Optimal feedback `u*(t, x) = -sigma (p(t) x + r(t))`.
    pub fn feedback(&self, t: f64, x: f64) -> f64 {
        -self.sigma * (self.p_at(t) * x + self.r_at(t))
    }

    /// Deterministic mean trajectory of the optimally controlled process:
    /// `dxbar/dt = -sigma^2 (p xbar + r)`, integrated by RK4 on the output
    /// grid.
    pub fn mean_trajectory(&self, x0: f64, dt_out: f64) -> Vec<(f64, f64)> {
        let horizon = *self.times.last().expect("non-empty");
        let steps = (horizon / dt_out).round() as usize;
        let mut out = Vec::with_capacity(steps + 1);
        let mut x = x0;
        out.push((0.0, x));
        let f = |t: f64, x: f64| -self.sigma * self.sigma * (self.p_at(t) * x + self.r_at(t));
        for k in 0..steps {
            let t = k as f64 * dt_out;
            let k1 = f(t, x);
            let k2 = f(t + 0.5 * dt_out, x + 0.5 * dt_out * k1);
            let k3 = f(t + 0.5 * dt_out, x + 0.5 * dt_out * k2);
            let k4 = f(t + dt_out, x + dt_out * k3);
            x += dt_out / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            out.push(((k + 1) as f64 * dt_out, x));
        }
        out
    }
}

/// Integrate the backward Riccati system
///
/// ```text
/// -pdot = q - sigma^2 p^2
/// -rdot = -q m(t) - sigma^2 p r
/// -cdot = q m(t)^2 / 2 + sigma^2 p / 2 - sigma^2 r^2 / 2
/// ```
///
/// from `p(T) = q_t`, `r(T) = -q_t m(T)`, `c(T) = q_t m(T)^2 / 2` by
/// fixed-step RK4 with step at most `max_step`.
pub fn riccati_lq_reference(
    q: f64,
    q_t: f64,
    sigma: f64,
    horizon: f64,
    center: &CenterPath,
    max_step: f64,
) -> RiccatiSolution {
    assert!(q >= 0.0 && q_t >= 0.0, "stiffnesses must be nonnegative");
    assert!(horizon > 0.0 && max_step > 0.0);
    let steps = (horizon / max_step).ceil() as usize;
    let h = horizon / steps as f64;
    let m = |t: f64| center.coord_at(0, t, horizon);

    // Integrate in s = T - t so the terminal condition is the start.
    let deriv = |s: f64, y: [f64; 3]| {
        let t = horizon - s;
        let mt = m(t);
        let [p, r, _] = y;
        [
            q - sigma * sigma * p * p,
            -q * mt - sigma * sigma * p * r,
            0.5 * q * mt * mt + 0.5 * sigma * sigma * p - 0.5 * sigma * sigma * r * r,
        ]
    };
    let m_t = m(horizon);
    let mut y = [q_t, -q_t * m_t, 0.5 * q_t * m_t * m_t];
    let mut p = vec![0.0; steps + 1];
    let mut r = vec![0.0; steps + 1];
    let mut c = vec![0.0; steps + 1];
    let mut times = vec![0.0; steps + 1];
    p[steps] = y[0];
    r[steps] = y[1];
    c[steps] = y[2];
    times[steps] = horizon;
    for i in 0..steps {
        let s = i as f64 * h;
        let k1 = deriv(s, y);
        let mid1 = add_scaled(y, k1, 0.5 * h);
        let k2 = deriv(s + 0.5 * h, mid1);
        let mid2 = add_scaled(y, k2, 0.5 * h);
        let k3 = deriv(s + 0.5 * h, mid2);
        let endp = add_scaled(y, k3, h);
        let k4 = deriv(s + h, endp);
        for d in 0..3 {
            y[d] += h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
        }
        let idx = steps - 1 - i;
        p[idx] = y[0];
        r[idx] = y[1];
        c[idx] = y[2];
        times[idx] = horizon - (i + 1) as f64 * h;
    }
    times[0] = 0.0;
    RiccatiSolution {
        times,
        p,
        r,
        c,
        sigma,
    }
}

fn add_scaled(y: [f64; 3], k: [f64; 3], h: f64) -> [f64; 3] {
    [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2]]
}
