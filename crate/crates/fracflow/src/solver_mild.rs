//! Picard iteration on the Duhamel representation
//! θ(t) = Z_t θ_0 + ∫_0^t Y_{t−s} F(θ(s)) ds, iterated on the whole
//! trajectory at once, and the fixed-point admissibility report.
//!
//! Per mode the kernels are Z(t) = E_α(−λt^α) and Y(τ) = τ^{α−1}E_{α,α}(−λτ^α).
//! The memory integral is evaluated by product integration against the
//! exact kernel: F is interpolated piecewise-linearly between nodes and the
//! moments I1(t) = ∫_0^t Y and J(t) = ∫_0^t τY(τ)dτ are closed-form
//! Mittag-Leffler values, so the rule is exact for piecewise-linear sources.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::fields::{encode_header, transport_term_with, DriftSpec, Grid, Mollifier, SpectralField};
use crate::fraccalc::{ml_eval, FracOrder, MLParams};

/// Where the linear dissipation enters the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LinearTreatment {
    /// Kernels built from λ = ε|ξ|² + |ξ|^γ; only the drift is iterated.
    #[default]
    Absorbed,
    /// Kernels built from λ = ε|ξ|²; −|ξ|^γθ is iterated with the drift.
    Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardConfig {
    pub t_end: f64,
    pub dt: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub dealias: bool,
    #[serde(default)]
    pub linear: LinearTreatment,
}

impl PicardConfig {
    pub fn new(t_end: f64, dt: f64, max_iter: usize, tol: f64) -> Result<Self> {
        let cfg = PicardConfig {
            t_end,
            dt,
            max_iter,
            tol,
            dealias: true,
            linear: LinearTreatment::Absorbed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_linear(mut self, linear: LinearTreatment) -> Self {
        self.linear = linear;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(param(format!("horizon must be positive, got {}", self.t_end)));
        }
        if !(self.dt > 0.0 && self.dt < self.t_end) {
            return Err(param(format!("time step must lie in (0, T), got {}", self.dt)));
        }
        if !(self.tol > 0.0) {
            return Err(param(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(param("max_iter must be at least 1"));
        }
        self.steps().map(|_| ())
    }

    /// Number of steps K with K·dt = T.
    pub fn steps(&self) -> Result<usize> {
        let k = (self.t_end / self.dt).round();
        if (k * self.dt - self.t_end).abs() > 1e-9 * self.t_end {
            return Err(param(format!(
                "horizon {} is not a multiple of dt {}",
                self.t_end, self.dt
            )));
        }
        Ok(k as usize)
    }
}

/// Kernel values and product-integration weights per distinct |ξ|².
#[derive(Debug, Clone)]
pub struct DuhamelTables {
    pub grid: Grid,
    pub alpha: f64,
    pub dt: f64,
    pub steps: usize,
    class_of: Vec<usize>,
    rates: Vec<f64>,
    // z[c][n] = Z(t_n)
    z: Vec<Vec<f64>>,
    // lag[c][m] multiplies F(t_{n−m}) for n − m ≥ 1
    lag: Vec<Vec<f64>>,
    // start[c][n] multiplies F(t_0) in the integral up to t_n
    start: Vec<Vec<f64>>,
}

/// (Z(t), I1(t), J(t)) for rate λ ≥ 0.
fn kernel_moments(alpha: f64, lambda: f64, t: f64) -> Result<(f64, f64, f64)> {
    if t == 0.0 {
        return Ok((1.0, 0.0, 0.0));
    }
    let ta = t.powf(alpha);
    let x = lambda * ta;
    let e = |beta: f64| ml_eval(MLParams::new(alpha, beta)?, -x);
    let z = e(1.0)?;
    if x < 1.0 {
        let i1 = ta * e(alpha + 1.0)?;
        let i2 = ta * t * e(alpha + 2.0)?;
        Ok((z, i1, t * i1 - i2))
    } else {
        let e2 = e(2.0)?;
        Ok((z, (1.0 - z) / lambda, t * (e2 - z) / lambda))
    }
}

/// ∫_0^t Y(τ) dτ, the per-mode operator norm of the memory integral on [0, t].
pub fn kernel_mass(alpha: f64, lambda: f64, t: f64) -> Result<f64> {
    kernel_moments(alpha, lambda, t).map(|(_, i1, _)| i1)
}

impl DuhamelTables {
    /// Tables for α ∈ (0, 1] and per-mode rate λ(|ξ|²) ≥ 0.
    pub fn new(grid: Grid, alpha: f64, dt: f64, steps: usize, rate: impl Fn(f64) -> f64 + Sync) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(param(format!("alpha must lie in (0,1], got {alpha}")));
        }
        if !(dt > 0.0 && dt.is_finite()) || steps == 0 {
            return Err(param("Duhamel tables need dt > 0 and at least one step"));
        }
        let mut keys: HashMap<i64, usize> = HashMap::new();
        let mut class_keys = Vec::new();
        let class_of: Vec<usize> = (0..grid.len())
            .map(|i| {
                let m = grid.wave_index(i);
                let key = m.iter().map(|v| v * v).sum::<i64>();
                *keys.entry(key).or_insert_with(|| {
                    class_keys.push(key);
                    class_keys.len() - 1
                })
            })
            .collect();
        let k0sq = grid.k0() * grid.k0();
        let rates: Vec<f64> = class_keys.iter().map(|&k| rate(k0sq * k as f64)).collect();
        if let Some(bad) = rates.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
            return Err(param(format!("kernel rate must be finite and >= 0, got {bad}")));
        }
        let tables: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = rates
            .par_iter()
            .map(|&lambda| build_class(alpha, lambda, dt, steps))
            .collect::<Result<_>>()?;
        let mut z = Vec::with_capacity(tables.len());
        let mut lag = Vec::with_capacity(tables.len());
        let mut start = Vec::with_capacity(tables.len());
        for (a, b, c) in tables {
            z.push(a);
            lag.push(b);
            start.push(c);
        }
        Ok(DuhamelTables {
            grid,
            alpha,
            dt,
            steps,
            class_of,
            rates,
            z,
            lag,
            start,
        })
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| n as f64 * self.dt).collect()
    }

    /// Rate λ at flat mode index `idx`.
    pub fn rate(&self, idx: usize) -> f64 {
        self.rates[self.class_of[idx]]
    }

    fn check_inputs(&self, theta0: &SpectralField, sources: &[SpectralField]) -> Result<()> {
        if theta0.grid != self.grid || sources.iter().any(|s| s.grid != self.grid) {
            return Err(param("Duhamel source and initial data must live on the table grid"));
        }
        Ok(())
    }

    /// Duhamel value at node n.
    fn mode_value(&self, i: usize, n: usize, theta0: Complex64, src: &[Complex64]) -> Complex64 {
        let c = self.class_of[i];
        let mut acc = theta0 * self.z[c][n];
        if n > 0 {
            acc += src[0] * self.start[c][n];
            let lag = &self.lag[c];
            for m in 0..n {
                acc += src[n - m] * lag[m];
            }
        }
        acc
    }

    /// States at every node 0..=steps; `sources` holds F at the same nodes.
    pub fn apply_all(&self, theta0: &SpectralField, sources: &[SpectralField]) -> Result<Vec<SpectralField>> {
        self.check_inputs(theta0, sources)?;
        if sources.len() != self.steps + 1 {
            return Err(param(format!(
                "expected {} source samples, got {}",
                self.steps + 1,
                sources.len()
            )));
        }
        let modes = self.grid.len();
        let columns: Vec<Vec<Complex64>> = (0..modes)
            .into_par_iter()
            .map(|i| {
                let src: Vec<Complex64> = sources.iter().map(|s| s.coeffs[i]).collect();
                (0..=self.steps)
                    .map(|n| self.mode_value(i, n, theta0.coeffs[i], &src))
                    .collect()
            })
            .collect();
        Ok((0..=self.steps)
            .map(|n| SpectralField {
                grid: self.grid,
                coeffs: columns.iter().map(|col| col[n]).collect(),
            })
            .collect())
    }
}

fn build_class(alpha: f64, lambda: f64, dt: f64, steps: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut z = Vec::with_capacity(steps + 1);
    let mut i1 = Vec::with_capacity(steps + 1);
    let mut jm = Vec::with_capacity(steps + 1);
    for n in 0..=steps {
        let (a, b, c) = kernel_moments(alpha, lambda, n as f64 * dt)?;
        z.push(a);
        i1.push(b);
        jm.push(c);
    }
    // interval m covers lags τ ∈ [m dt, (m+1) dt]
    let a: Vec<f64> = (0..steps).map(|m| i1[m + 1] - i1[m]).collect();
    let b: Vec<f64> = (0..steps)
        .map(|m| ((jm[m + 1] - jm[m] - m as f64 * dt * a[m]) / dt).clamp(0.0, a[m]))
        .collect();
    let lag: Vec<f64> = (0..steps)
        .map(|m| a[m] - b[m] + if m > 0 { b[m - 1] } else { 0.0 })
        .collect();
    let mut start = vec![0.0; steps + 1];
    for n in 1..=steps {
        start[n] = b[n - 1];
    }
    Ok((z, lag, start))
}

/// Duhamel value at time t, which must be a node of the tables covered by `sources`.
pub fn duhamel_apply(
    tables: &DuhamelTables,
    theta0: &SpectralField,
    sources: &[SpectralField],
    t: f64,
) -> Result<SpectralField> {
    tables.check_inputs(theta0, sources)?;
    let n = (t / tables.dt).round();
    if !(t >= 0.0) || (n * tables.dt - t).abs() > 1e-9 * tables.dt.max(t) {
        return Err(param(format!("time {t} is not a node of the sampled range")));
    }
    let n = n as usize;
    if n > tables.steps || n >= sources.len() {
        return Err(param(format!("time {t} lies outside the sampled range")));
    }
    let coeffs = (0..tables.grid.len())
        .map(|i| {
            let src: Vec<Complex64> = sources[..=n].iter().map(|s| s.coeffs[i]).collect();
            tables.mode_value(i, n, theta0.coeffs[i], &src)
        })
        .collect();
    Ok(SpectralField {
        grid: tables.grid,
        coeffs,
    })
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub states: Vec<SpectralField>,
    /// sup_n ‖θ^{m+1}(t_n) − θ^m(t_n)‖_{L²} per sweep.
    pub iter_residuals: Vec<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl Trajectory {
    /// Successive residual ratios r_m = res_{m+1}/res_m.
    pub fn ratios(&self) -> Vec<f64> {
        self.iter_residuals.windows(2).map(|w| w[1] / w[0]).collect()
    }

    /// sup over common nodes of the L² distance; both runs must share the time grid.
    pub fn sup_gap(&self, other: &Trajectory) -> Result<f64> {
        if self.grid != other.grid || self.times.len() != other.times.len() {
            return Err(param("trajectories do not share a space-time grid"));
        }
        Ok(self
            .states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| a.sub(b).l2_norm())
            .fold(0.0, f64::max))
    }

    /// Header (dim, N, L), u64 snapshot count, then per snapshot f64 t and
    /// physical samples, little-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        encode_header(&mut buf, &self.grid);
        buf.extend_from_slice(&(self.states.len() as u64).to_le_bytes());
        for (t, s) in self.times.iter().zip(&self.states) {
            buf.extend_from_slice(&t.to_le_bytes());
            for x in s.to_physical() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf
    }

    pub fn write_container(&self, path: &Path) -> Result<()> {
        crate::persist::atomic_write(path, &self.encode())
    }
}

/// Decodes `Trajectory::encode` output into (grid, times, physical snapshots).
pub fn decode_trajectory(bytes: &[u8]) -> Result<(Grid, Vec<f64>, Vec<Vec<f64>>)> {
    let bad = |m: &str| Error::Config(format!("trajectory container: {m}"));
    if bytes.len() < 32 {
        return Err(bad("shorter than its header"));
    }
    let word = |i: usize| -> [u8; 8] { bytes[8 * i..8 * i + 8].try_into().unwrap() };
    let grid = Grid::new(
        u64::from_le_bytes(word(0)) as usize,
        u64::from_le_bytes(word(1)) as usize,
        f64::from_le_bytes(word(2)),
    )
    .map_err(|e| bad(&e.to_string()))?;
    let count = u64::from_le_bytes(word(3)) as usize;
    let per = 1 + grid.len();
    if bytes.len() != 32 + 8 * per * count {
        return Err(bad("length does not match header"));
    }
    let mut times = Vec::with_capacity(count);
    let mut snaps = Vec::with_capacity(count);
    for s in 0..count {
        let base = 4 + s * per;
        times.push(f64::from_le_bytes(word(base)));
        snaps.push(
            (0..grid.len())
                .map(|i| f64::from_le_bytes(word(base + 1 + i)))
                .collect(),
        );
    }
    Ok((grid, times, snaps))
}

/// Sweeps θ ← Z θ_0 + ∫ Y F(θ) until the sup-in-time residual drops below tol.
fn run_picard(
    theta0: &SpectralField,
    tables: &DuhamelTables,
    cfg: &PicardConfig,
    source: impl Fn(&SpectralField) -> Result<SpectralField> + Sync,
    divergence_reason: impl Fn() -> String,
) -> Result<Trajectory> {
    let zero: Vec<SpectralField> = vec![SpectralField::zeros(tables.grid); tables.steps + 1];
    let mut states = tables.apply_all(theta0, &zero)?;
    let mut residuals = Vec::new();
    let mut rises = 0;
    let mut converged = false;
    for sweep in 1..=cfg.max_iter {
        let sources: Vec<SpectralField> = states.par_iter().map(&source).collect::<Result<_>>()?;
        let next = tables.apply_all(theta0, &sources)?;
        let res = next
            .iter()
            .zip(&states)
            .map(|(a, b)| a.sub(b).l2_norm())
            .fold(0.0, f64::max);
        if !res.is_finite() {
            return Err(Error::Divergence {
                sweeps: sweep,
                reason: format!("non-finite residual; {}", divergence_reason()),
            });
        }
        if residuals.last().is_some_and(|&prev: &f64| res > prev) {
            rises += 1;
        } else {
            rises = 0;
        }
        residuals.push(res);
        states = next;
        if rises >= 3 {
            return Err(Error::Divergence {
                sweeps: sweep,
                reason: format!("residual grew over 3 consecutive sweeps; {}", divergence_reason()),
            });
        }
        if res < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(Trajectory {
        grid: tables.grid,
        times: tables.times(),
        states,
        iter_residuals: residuals,
        converged,
        warnings: Vec::new(),
    })
}

fn nonlinear_source(
    theta: &SpectralField,
    drift: &DriftSpec,
    moll: &Mollifier,
    gamma: Option<f64>,
    dealias: bool,
) -> Result<SpectralField> {
    let mut f = transport_term_with(drift, moll, theta, theta, dealias)?.scale(-1.0);
    if let Some(g) = gamma {
        let grid = theta.grid;
        for (i, c) in f.coeffs.iter_mut().enumerate() {
            let k2 = grid.k2(i);
            if k2 > 0.0 {
                *c -= theta.coeffs[i] * k2.powf(0.5 * g);
            }
        }
    }
    Ok(f)
}

/// Hyperviscous mild solve.
pub fn picard_solve(
    theta0: &SpectralField,
    order: &FracOrder,
    drift: &DriftSpec,
    moll: &Mollifier,
    cfg: &PicardConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    drift.check_dim(theta0.grid.dim)?;
    let steps = cfg.steps()?;
    let eps = order.epsilon;
    let tables = match cfg.linear {
        LinearTreatment::Absorbed => {
            DuhamelTables::new(theta0.grid, order.alpha, cfg.dt, steps, |k2| order.symbol(k2))?
        }
        LinearTreatment::Source => DuhamelTables::new(theta0.grid, order.alpha, cfg.dt, steps, |k2| eps * k2)?,
    };
    let report = grid_fixed_point_report(theta0, order, drift, moll, cfg, false)?;
    let gamma = (cfg.linear == LinearTreatment::Source).then_some(order.gamma);
    let mut traj = run_picard(
        theta0,
        &tables,
        cfg,
        |th| nonlinear_source(th, drift, moll, gamma, cfg.dealias),
        || report.violations(),
    )?;
    if !report.all_hold() {
        traj.warnings.push(format!(
            "fixed-point conditions fail at T = {}: {}",
            cfg.t_end,
            report.violations()
        ));
    }
    Ok(traj)
}

/// Mild solve without hyperviscosity or mollification: kernels built from |ξ|^γ.
pub fn mild_solve_nonreg(
    theta0: &SpectralField,
    order: &FracOrder,
    drift: &DriftSpec,
    cfg: &PicardConfig,
) -> Result<Trajectory> {
    let bare = FracOrder {
        epsilon: 0.0,
        moll_eps: 0.0,
        ..*order
    };
    let moll = Mollifier::new(0.0)?;
    let mut traj = picard_solve(theta0, &bare, drift, &moll, cfg)?;
    if !(order.gamma > 1.0) {
        traj.warnings
            .push(format!("gamma = {} lies outside (1, 2)", order.gamma));
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub horizon: f64,
    pub delta: f64,
    pub c_l: f64,
    pub c_b: f64,
    pub c_a: f64,
    /// Calibration constant when the constants come from the closed formulas.
    pub c_cal: Option<f64>,
    /// Left-hand sides of 3C_L < 1, 9C_Bδ < 1 and C_L + 6C_Bδ < 1.
    pub lhs: [f64; 3],
    pub conditions: [bool; 3],
    /// Contraction factor C_L + 6C_Bδ.
    pub contraction_bound: f64,
    /// Largest horizon passing all three conditions; None when unbounded.
    pub t_admissible: Option<f64>,
    /// Conditions whose left side lies within 1% of 1.
    pub near_boundary: Vec<String>,
}

const CONDITION_NAMES: [&str; 3] = ["3C_L<1", "9C_B*delta<1", "C_L+6C_B*delta<1"];

fn condition_lhs(delta: f64, c_l: f64, c_b: f64) -> [f64; 3] {
    [3.0 * c_l, 9.0 * c_b * delta, c_l + 6.0 * c_b * delta]
}

impl FixedPointReport {
    fn assemble(
        horizon: f64,
        delta: f64,
        c_l: f64,
        c_b: f64,
        c_a: f64,
        c_cal: Option<f64>,
        t_admissible: Option<f64>,
    ) -> Self {
        let lhs = condition_lhs(delta, c_l, c_b);
        let conditions = lhs.map(|v| v < 1.0);
        let near_boundary = lhs
            .iter()
            .zip(CONDITION_NAMES)
            .filter(|(v, _)| (**v - 1.0).abs() <= 0.01)
            .map(|(_, n)| n.to_string())
            .collect();
        FixedPointReport {
            horizon,
            delta,
            c_l,
            c_b,
            c_a,
            c_cal,
            lhs,
            conditions,
            contraction_bound: lhs[2],
            t_admissible,
            near_boundary,
        }
    }

    pub fn all_hold(&self) -> bool {
        self.conditions.iter().all(|&c| c)
    }

    /// Stored booleans agree with the stored constants.
    pub fn consistent(&self) -> bool {
        condition_lhs(self.delta, self.c_l, self.c_b).map(|v| v < 1.0) == self.conditions
    }

    pub fn violations(&self) -> String {
        let failed: Vec<String> = self
            .lhs
            .iter()
            .zip(CONDITION_NAMES)
            .filter(|(v, _)| **v >= 1.0)
            .map(|(v, n)| format!("{n} fails with left side {v:.6}"))
            .collect();
        if failed.is_empty() {
            "all admissibility conditions hold".into()
        } else {
            failed.join(", ")
        }
    }
}

/// Largest T with `pass(T)`, assuming pass is monotone (true below a threshold).
fn admissible_horizon(pass: impl Fn(f64) -> Result<bool>, guess: f64) -> Result<Option<f64>> {
    let mut hi = guess.max(1e-300);
    let mut lo;
    if pass(hi)? {
        lo = hi;
        loop {
            hi *= 2.0;
            if !hi.is_finite() || hi > 1e300 {
                return Ok(None);
            }
            if !pass(hi)? {
                break;
            }
            lo = hi;
        }
    } else {
        lo = hi;
        loop {
            lo *= 0.5;
            if lo < 1e-300 {
                return Ok(Some(0.0));
            }
            if pass(lo)? {
                break;
            }
            hi = lo;
        }
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        if pass(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(lo))
}

/// Report from the closed-form constants δ = C‖θ_0‖,
/// C_L = C ε^{(1−γ/2)−1/α} T^{α(1−γ/2)} and C_B = C C_A ε^{1/2−1/α} T^{α/2}.
pub fn fixed_point_report(
    order: &FracOrder,
    norm_theta0: f64,
    horizon: f64,
    c_cal: f64,
    c_a: f64,
) -> Result<FixedPointReport> {
    if !(order.epsilon > 0.0) {
        return Err(param("the closed-form constants need epsilon > 0"));
    }
    if !(c_cal > 0.0 && c_cal.is_finite()) {
        return Err(param(format!("calibration constant must be positive, got {c_cal}")));
    }
    if !(horizon > 0.0 && norm_theta0 >= 0.0 && c_a >= 0.0) {
        return Err(param("horizon must be positive; norm and drift bound non-negative"));
    }
    let (a, g, e) = (order.alpha, order.gamma, order.epsilon);
    let half = 1.0 - 0.5 * g;
    let consts = |t: f64| {
        let c_l = c_cal * e.powf(half - 1.0 / a) * t.powf(a * half);
        let c_b = c_cal * c_a * e.powf(0.5 - 1.0 / a) * t.powf(0.5 * a);
        (c_l, c_b)
    };
    let delta = c_cal * norm_theta0;
    let t_adm = admissible_horizon(
        |t| {
            let (l, b) = consts(t);
            Ok(condition_lhs(delta, l, b).iter().all(|v| *v < 1.0))
        },
        horizon,
    )?;
    let (c_l, c_b) = consts(horizon);
    Ok(FixedPointReport::assemble(
        horizon,
        delta,
        c_l,
        c_b,
        c_a,
        Some(c_cal),
        t_adm,
    ))
}

/// (C_L, C_B) measured on the grid as exact per-mode operator norms of the
/// discrete linear and bilinear maps in L^∞_t L².
pub fn measured_constants(
    grid: &Grid,
    order: &FracOrder,
    drift: &DriftSpec,
    moll: &Mollifier,
    linear: LinearTreatment,
    dealias: bool,
    horizon: f64,
) -> Result<(f64, f64)> {
    let mut by_key: HashMap<i64, (f64, bool)> = HashMap::new();
    let mut s2 = 0.0;
    for i in 0..grid.len() {
        let k2 = grid.k2(i);
        if k2 == 0.0 {
            continue;
        }
        let m = grid.wave_index(i);
        let key = m.iter().map(|v| v * v).sum::<i64>();
        let in_band = !grid.is_nyquist(i) && (!dealias || grid.is_resolved(i));
        let entry = by_key.entry(key).or_insert((k2, false));
        entry.1 |= in_band;
        if in_band {
            s2 += moll.profile_hat(k2).powi(2);
        }
    }
    let rate = |k2: f64| match linear {
        LinearTreatment::Absorbed => order.symbol(k2),
        LinearTreatment::Source => order.epsilon * k2,
    };
    let per_class: Vec<(f64, f64)> = by_key
        .values()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&&(k2, in_band)| {
            let mass = kernel_mass(order.alpha, rate(k2), horizon)?;
            let lin = match linear {
                LinearTreatment::Absorbed => 0.0,
                LinearTreatment::Source => k2.powf(0.5 * order.gamma) * mass,
            };
            let bil = if in_band { k2.sqrt() * mass } else { 0.0 };
            Ok((lin, bil))
        })
        .collect::<Result<_>>()?;
    let c_l = per_class.iter().map(|p| p.0).fold(0.0, f64::max);
    let sup_b = per_class.iter().map(|p| p.1).fold(0.0, f64::max);
    let c_b = drift.bound() * sup_b * s2.sqrt() / grid.volume().sqrt();
    Ok((c_l, c_b))
}

/// Report with grid-measured constants and δ = ‖θ_0‖_{L²} (|Z| ≤ 1 per mode).
pub fn grid_fixed_point_report(
    theta0: &SpectralField,
    order: &FracOrder,
    drift: &DriftSpec,
    moll: &Mollifier,
    cfg: &PicardConfig,
    solve_horizon: bool,
) -> Result<FixedPointReport> {
    let grid = theta0.grid;
    let delta = theta0.l2_norm();
    let measure = |t: f64| measured_constants(&grid, order, drift, moll, cfg.linear, cfg.dealias, t);
    let t_adm = if solve_horizon {
        admissible_horizon(
            |t| {
                let (l, b) = measure(t)?;
                Ok(condition_lhs(delta, l, b).iter().all(|v| *v < 1.0))
            },
            cfg.t_end,
        )?
    } else {
        None
    };
    let (c_l, c_b) = measure(cfg.t_end)?;
    Ok(FixedPointReport::assemble(
        cfg.t_end,
        delta,
        c_l,
        c_b,
        drift.bound(),
        None,
        t_adm,
    ))
}

/// C_cal making the closed-form C_L equal to the grid-measured linear norm.
pub fn calibrate_c_cal(grid: &Grid, order: &FracOrder, horizon: f64) -> Result<f64> {
    if !(order.epsilon > 0.0) {
        return Err(param("calibration needs epsilon > 0"));
    }
    let moll = Mollifier::new(order.moll_eps)?;
    let (c_l, _) = measured_constants(
        grid,
        order,
        &DriftSpec::None,
        &moll,
        LinearTreatment::Source,
        true,
        horizon,
    )?;
    let (a, g, e) = (order.alpha, order.gamma, order.epsilon);
    let half = 1.0 - 0.5 * g;
    Ok(c_l / (e.powf(half - 1.0 / a) * horizon.powf(a * half)))
}

/// Existence horizon T_0 = (1/(4 C_0 C_A ‖θ_0‖))^{1/σ} of the non-regularized problem.
pub fn nonreg_horizon(c0: f64, c_a: f64, sigma: f64, norm_theta0: f64) -> Result<f64> {
    if !(c0 > 0.0 && c_a > 0.0 && sigma > 0.0 && norm_theta0 > 0.0) {
        return Err(param("T_0 needs positive C_0, C_A, sigma and norm"));
    }
    Ok((1.0 / (4.0 * c0 * c_a * norm_theta0)).powf(1.0 / sigma))
}

/// Time exponent σ and prefactor C_0 of sup_ξ |ξ| ∫_0^T Ỹ(τ, ξ) dτ ≈ C_0 T^σ,
/// fitted over T = 2^{−8..0}; finite only for γ > 1.
pub fn fit_nonreg_sigma(alpha: f64, gamma: f64) -> Result<(f64, f64)> {
    if !(gamma > 1.0 && gamma < 2.0) {
        return Err(param(format!(
            "the nonlinear time exponent is finite only for gamma in (1,2), got {gamma}"
        )));
    }
    let profile = |t: f64, lk: f64| -> Result<f64> {
        let k = lk.exp();
        Ok(k * kernel_mass(alpha, k.powf(gamma), t)?)
    };
    let sup_at = |t: f64| -> Result<f64> {
        let grid: Vec<f64> = (0..=240).map(|i| -8.0 + 0.1 * i as f64).collect();
        let vals: Vec<f64> = grid.iter().map(|&lk| profile(t, lk)).collect::<Result<_>>()?;
        let best = (0..vals.len()).max_by(|&i, &j| vals[i].total_cmp(&vals[j])).unwrap();
        if best == 0 || best == vals.len() - 1 {
            return Err(param("supremum over wavenumbers not attained inside the search range"));
        }
        // golden-section refinement of the maximum in ln k
        let (mut lo, mut hi) = (grid[best - 1], grid[best + 1]);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let a = hi - r * (hi - lo);
            let b = lo + r * (hi - lo);
            if profile(t, a)? > profile(t, b)? {
                hi = b;
            } else {
                lo = a;
            }
        }
        profile(t, 0.5 * (lo + hi))
    };
    let xs: Vec<f64> = (-8..=0).map(|e| (e as f64) * 2f64.ln()).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&lt| sup_at(lt.exp()).map(f64::ln))
        .collect::<Result<_>>()?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok((slope, (my - slope * mx).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::random_bandlimited;

    fn one_mode(grid: Grid, m: [i64; 3], amp: f64) -> SpectralField {
        let mut f = SpectralField::zeros(grid);
        f.coeffs[grid.flat_index(m)] = Complex64::new(amp, 0.0);
        let mirror = grid.mirror(grid.flat_index(m));
        f.coeffs[mirror] = Complex64::new(amp, 0.0);
        f
    }

    #[test]
    fn zero_source_propagates_kernel() {
        let g = Grid::new(1, 16, 2.0 * std::f64::consts::PI).unwrap();
        let tab = DuhamelTables::new(g, 0.6, 0.05, 20, |k2| k2).unwrap();
        let th = one_mode(g, [3, 0, 0], 0.5);
        let src = vec![SpectralField::zeros(g); 21];
        let out = duhamel_apply(&tab, &th, &src, 1.0).unwrap();
        let z = ml_eval(MLParams::new(0.6, 1.0).unwrap(), -9.0).unwrap();
        assert!((out.coeffs[g.flat_index([3, 0, 0])].re - 0.5 * z).abs() < 1e-14);
        assert!(duhamel_apply(&tab, &th, &src, 1.01).is_err());
        assert!(duhamel_apply(&tab, &th, &src, 1.025).is_err());
    }

    #[test]
    fn integer_order_variation_of_constants() {
        let g = Grid::new(1, 8, 2.0 * std::f64::consts::PI).unwrap();
        let lambda = 4.0;
        let tab = DuhamelTables::new(g, 1.0, 0.1, 30, |k2| k2).unwrap();
        let idx = g.flat_index([2, 0, 0]);
        let mut f = SpectralField::zeros(g);
        f.coeffs[idx] = Complex64::new(0.7, 0.0);
        let src = vec![f; 31];
        let th = SpectralField::zeros(g);
        for n in [1usize, 7, 30] {
            let t = n as f64 * 0.1;
            let v = duhamel_apply(&tab, &th, &src, t).unwrap().coeffs[idx].re;
            let exact = (1.0 - (-lambda * t).exp()) * 0.7 / lambda;
            assert!((v - exact).abs() < 1e-8, "t={t}: {v} vs {exact}");
        }
    }

    #[test]
    fn absorbed_linear_solve_matches_relaxation() {
        let g = Grid::new(1, 32, 2.0 * std::f64::consts::PI).unwrap();
        let order = FracOrder::new(0.7, 1.3, 0.2, 0.0).unwrap();
        let cfg = PicardConfig::new(1.0, 1.0 / 64.0, 5, 1e-13).unwrap();
        let th = one_mode(g, [4, 0, 0], 1.0);
        let traj = picard_solve(&th, &order, &DriftSpec::None, &Mollifier::new(0.0).unwrap(), &cfg).unwrap();
        assert_eq!(traj.iter_residuals, vec![0.0]);
        let lam = order.symbol(16.0);
        let idx = g.flat_index([4, 0, 0]);
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let e = ml_eval(MLParams::new(0.7, 1.0).unwrap(), -lam * t.powf(0.7)).unwrap();
            assert!((s.coeffs[idx].re - e).abs() < 1e-13);
        }
    }

    #[test]
    fn source_linear_solve_converges_to_relaxation() {
        // F inherits the t^α start of θ, so the rule converges like dt^{2α}
        let g = Grid::new(1, 16, 2.0 * std::f64::consts::PI).unwrap();
        let idx = g.flat_index([2, 0, 0]);
        for (alpha, min_order) in [(0.6, 1.0), (0.9, 1.6)] {
            let order = FracOrder::new(alpha, 1.5, 0.5, 0.0).unwrap();
            let lam = order.symbol(4.0);
            let mut errs = Vec::new();
            for dt in [1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0] {
                let cfg = PicardConfig::new(1.0, dt, 200, 1e-14)
                    .unwrap()
                    .with_linear(LinearTreatment::Source);
                let th = one_mode(g, [2, 0, 0], 1.0);
                let traj = picard_solve(&th, &order, &DriftSpec::None, &Mollifier::new(0.0).unwrap(), &cfg).unwrap();
                assert!(traj.converged);
                let ml = MLParams::new(alpha, 1.0).unwrap();
                let err = traj
                    .times
                    .iter()
                    .zip(&traj.states)
                    .map(|(t, s)| (s.coeffs[idx].re - ml_eval(ml, -lam * t.powf(alpha)).unwrap()).abs())
                    .fold(0.0, f64::max);
                errs.push(err);
            }
            let rate = (errs[1] / errs[2]).log2();
            assert!(rate >= min_order, "alpha={alpha}: {errs:?}");
        }
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let g = Grid::new(2, 8, 2.0 * std::f64::consts::PI).unwrap();
        let order = FracOrder::new(0.8, 1.5, 0.1, 0.1).unwrap();
        let cfg = PicardConfig::new(0.5, 0.125, 10, 1e-12).unwrap();
        let traj = picard_solve(
            &SpectralField::zeros(g),
            &order,
            &DriftSpec::Sqg,
            &Mollifier::new(0.1).unwrap(),
            &cfg,
        )
        .unwrap();
        assert_eq!(traj.iter_residuals, vec![0.0]);
        assert!(traj.states.iter().all(|s| s.l2_norm() == 0.0));
    }

    #[test]
    fn sqg_run_stays_real_and_contracts() {
        let g = Grid::new(2, 16, 2.0 * std::f64::consts::PI).unwrap();
        let order = FracOrder::new(0.8, 1.5, 0.1, 0.1).unwrap();
        let th = random_bandlimited(g, 7, Some(4), 0.1).unwrap();
        let moll = Mollifier::new(0.1).unwrap();
        let cfg = PicardConfig::new(0.25, 1.0 / 32.0, 40, 1e-12).unwrap();
        let traj = picard_solve(&th, &order, &DriftSpec::Sqg, &moll, &cfg).unwrap();
        assert!(traj.converged);
        assert!(traj.states.iter().all(|s| s.hermitian_defect() < 1e-14));
        let rep = grid_fixed_point_report(&th, &order, &DriftSpec::Sqg, &moll, &cfg, false).unwrap();
        assert!(rep.all_hold());
        for r in traj.ratios() {
            assert!(r <= rep.contraction_bound, "{r} vs {}", rep.contraction_bound);
        }
    }

    #[test]
    fn closed_form_report_inverts() {
        let order = FracOrder::new(0.8, 1.0, 1.0, 0.0).unwrap();
        let rep = fixed_point_report(&order, 0.1, 0.01, 1.0, 1.0).unwrap();
        assert!((rep.c_l - 0.01f64.powf(0.4)).abs() < 1e-15);
        assert!(rep.consistent());
        let boundary = 3f64.powf(-2.5);
        let t_adm = rep.t_admissible.unwrap();
        // 9C_Bδ binds later than 3C_L here
        assert!((t_adm - boundary).abs() < 1e-12 * boundary, "{t_adm}");
        let edge = fixed_point_report(&order, 0.1, 0.0642, 1.0, 1.0).unwrap();
        assert!(!edge.conditions[0]);
        assert_eq!(edge.near_boundary, vec!["3C_L<1".to_string()]);
        let tiny = fixed_point_report(&order, 5.0, 1e-12, 1.0, 1.0).unwrap();
        assert!(tiny.all_hold());
    }

    #[test]
    fn nonreg_horizon_inversion() {
        let t0 = nonreg_horizon(1.0, 1.0, 0.3, 2.0).unwrap();
        assert!((t0 - 0.125f64.powf(1.0 / 0.3)).abs() < 1e-18);
    }

    #[test]
    fn fitted_sigma_matches_scaling() {
        for (a, g) in [(0.6, 1.5), (0.8, 1.2)] {
            let (s, c0) = fit_nonreg_sigma(a, g).unwrap();
            let expect = a * (g - 1.0) / g;
            assert!((s - expect).abs() < 1e-3 * expect, "{s} vs {expect}");
            assert!(c0 > 0.0);
        }
        assert!(fit_nonreg_sigma(0.6, 1.0).is_err());
    }
}
