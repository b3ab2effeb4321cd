//! L1 time marching: implicit diagonal diffusion, explicit dealiased drift.
//!
//! Per mode, with c0 = dt^{−α}/Γ(2−α) and increments Δ_i = θ^i − θ^{i−1},
//!   (c0 + λ) θ^{k+1} = c0 θ^k − c0 Σ_{i=1}^{k} b_{k+1−i} Δ_i − F(θ^k).
//! The first step carries the starting correction −½λθ_0, which removes the
//! O(dt) error the constant initial datum otherwise leaves at fixed times
//! when θ behaves like θ_0 + c t^α.
//! A restart mark at index T splits the memory sum into the frozen part
//! i ≤ T and the running part i > T; the split is an exact regrouping.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{param, Result};
use crate::fields::{transport_term_with, DriftSpec, Grid, Mollifier, SpectralField};
use crate::fraccalc::{caputo_l1, l1_weights, FracOrder, SampledPath};
use crate::solver_mild::Trajectory;

#[derive(Debug, Clone)]
pub struct L1State {
    pub grid: Grid,
    pub alpha: f64,
    pub dt: f64,
    pub dealias: bool,
    pub start_correction: bool,
    /// θ(t_0..t_k).
    pub history: Vec<SpectralField>,
    /// b_0..b_k for the next step.
    pub weights: Vec<f64>,
    pub restart_marks: Vec<usize>,
    /// Memory before this index is discarded (ablation only).
    pub truncated_before: Option<usize>,
    // increments[mode][i − 1] = Δ_i at that mode
    increments: Vec<Vec<Complex64>>,
}

impl L1State {
    pub fn new(theta0: SpectralField, alpha: f64, dt: f64, dealias: bool) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(param(format!("alpha must lie in (0,1], got {alpha}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(param(format!("time step must be positive, got {dt}")));
        }
        let grid = theta0.grid;
        Ok(L1State {
            grid,
            alpha,
            dt,
            dealias,
            start_correction: true,
            history: vec![theta0],
            weights: vec![1.0],
            restart_marks: Vec::new(),
            truncated_before: None,
            increments: vec![Vec::new(); grid.len()],
        })
    }

    /// Index of the newest snapshot.
    pub fn current(&self) -> usize {
        self.history.len() - 1
    }

    pub fn latest(&self) -> &SpectralField {
        self.history.last().expect("history is never empty")
    }

    fn frozen_upto(&self) -> usize {
        self.restart_marks.last().copied().unwrap_or(0)
    }

    /// Σ_{i=1}^{k} b_{k+1−i} Δ_i at one mode, grouped as frozen + running.
    fn memory(&self, mode: usize) -> Complex64 {
        let k = self.current();
        let inc = &self.increments[mode];
        let first = self.truncated_before.unwrap_or(0);
        let split = self.frozen_upto().max(first);
        let mut frozen = Complex64::new(0.0, 0.0);
        for i in (first + 1)..=split.min(k) {
            frozen += inc[i - 1] * self.weights[k + 1 - i];
        }
        let mut running = Complex64::new(0.0, 0.0);
        for i in (split + 1)..=k {
            running += inc[i - 1] * self.weights[k + 1 - i];
        }
        frozen + running
    }

    pub fn to_trajectory(&self) -> Trajectory {
        Trajectory {
            grid: self.grid,
            times: (0..self.history.len()).map(|k| k as f64 * self.dt).collect(),
            states: self.history.clone(),
            iter_residuals: Vec::new(),
            converged: true,
            warnings: Vec::new(),
        }
    }
}

/// One implicit-explicit L1 step; appends θ^{k+1}.
pub fn l1_step(state: &mut L1State, order: &FracOrder, drift: &DriftSpec, moll: &Mollifier) -> Result<()> {
    drift.check_dim(state.grid.dim)?;
    let grid = state.grid;
    let c0 = state.dt.powf(-state.alpha) / gamma(2.0 - state.alpha);
    let cur = state.latest().clone();
    let forcing = transport_term_with(drift, moll, &cur, &cur, state.dealias)?;
    let st = &*state;
    let correct = st.start_correction && st.current() == 0;
    let coeffs: Vec<Complex64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let lam = order.symbol(grid.k2(i));
            let mut rhs = cur.coeffs[i] * c0 - st.memory(i) * c0 - forcing.coeffs[i];
            if correct {
                rhs -= cur.coeffs[i] * (0.5 * lam);
            }
            rhs / (c0 + lam)
        })
        .collect();
    for (i, c) in coeffs.iter().enumerate() {
        state.increments[i].push(*c - cur.coeffs[i]);
    }
    state.history.push(SpectralField { grid, coeffs });
    let k = state.current();
    state.weights = l1_weights(state.alpha, k + 1);
    Ok(())
}

/// Marks a restart at `index`: later steps read increments up to `index`
/// as a frozen tail evaluated with the full-base-point weights.
pub fn restart_glue(state: &mut L1State, index: usize) -> Result<()> {
    if index > state.current() {
        return Err(param(format!(
            "restart index {index} beyond history length {}",
            state.history.len()
        )));
    }
    if state.restart_marks.last().is_some_and(|&m| m > index) {
        return Err(param("restart marks must be non-decreasing"));
    }
    state.restart_marks.push(index);
    Ok(())
}

/// Restart from θ(T) with the pre-T memory discarded; the ablation the
/// frozen-tail construction avoids.
pub fn restart_truncated(state: &mut L1State, index: usize) -> Result<()> {
    restart_glue(state, index)?;
    state.truncated_before = Some(index);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarchConfig {
    pub t_end: f64,
    pub dt: f64,
    #[serde(default = "default_true")]
    pub dealias: bool,
    /// Times at which the memory is split (glued with full history).
    #[serde(default)]
    pub restart_at: Vec<f64>,
    /// Ablation: restart here with the earlier memory dropped.
    #[serde(default)]
    pub truncate_at: Option<f64>,
    #[serde(default = "default_true")]
    pub start_correction: bool,
}

fn default_true() -> bool {
    true
}

impl MarchConfig {
    pub fn new(t_end: f64, dt: f64) -> Self {
        MarchConfig {
            t_end,
            dt,
            dealias: true,
            restart_at: Vec::new(),
            truncate_at: None,
            start_correction: true,
        }
    }

    pub fn steps(&self) -> Result<usize> {
        if !(self.t_end > 0.0 && self.dt > 0.0 && self.dt < self.t_end) {
            return Err(param(format!("need 0 < dt < T, got dt={} T={}", self.dt, self.t_end)));
        }
        let k = (self.t_end / self.dt).round();
        if (k * self.dt - self.t_end).abs() > 1e-9 * self.t_end {
            return Err(param(format!(
                "horizon {} is not a multiple of dt {}",
                self.t_end, self.dt
            )));
        }
        Ok(k as usize)
    }

    fn node_of(&self, t: f64, steps: usize) -> Result<usize> {
        let n = (t / self.dt).round();
        if !(t >= 0.0) || (n * self.dt - t).abs() > 1e-9 * self.dt.max(t) || n as usize > steps {
            return Err(param(format!("restart time {t} is not a node inside [0, T]")));
        }
        Ok(n as usize)
    }
}

/// Marches from θ_0 to T, applying restart marks as their nodes are reached.
pub fn march(
    theta0: &SpectralField,
    order: &FracOrder,
    drift: &DriftSpec,
    moll: &Mollifier,
    cfg: &MarchConfig,
) -> Result<L1State> {
    let steps = cfg.steps()?;
    let mut glue: Vec<usize> = cfg
        .restart_at
        .iter()
        .map(|&t| cfg.node_of(t, steps))
        .collect::<Result<_>>()?;
    glue.sort_unstable();
    let cut = cfg.truncate_at.map(|t| cfg.node_of(t, steps)).transpose()?;
    let mut state = L1State::new(theta0.clone(), order.alpha, cfg.dt, cfg.dealias)?;
    state.start_correction = cfg.start_correction;
    for k in 0..steps {
        for &g in glue.iter().filter(|&&g| g == k) {
            restart_glue(&mut state, g)?;
        }
        if cut == Some(k) {
            restart_truncated(&mut state, k)?;
        }
        l1_step(&mut state, order, drift, moll)?;
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlikhanovReport {
    /// min over nodes of f·D^α f − ½ D^α(f²).
    pub min_margin: f64,
    pub argmin: usize,
}

impl AlikhanovReport {
    pub fn passes(&self) -> bool {
        self.min_margin >= -1e-12
    }
}

/// Both sides of f·D^α f ≥ ½ D^α(f²) with the L1 derivative at every node.
pub fn alikhanov_check(path: &SampledPath, alpha: f64) -> Result<AlikhanovReport> {
    let d = caputo_l1(path, alpha)?;
    let sq = SampledPath::new(path.dt, path.values.iter().map(|v| v * v).collect())?;
    let dsq = caputo_l1(&sq, alpha)?;
    let mut best = AlikhanovReport {
        min_margin: 0.0,
        argmin: 0,
    };
    for k in 1..path.values.len() {
        let m = path.values[k] * d.values[k] - 0.5 * dsq.values[k];
        if m < best.min_margin {
            best = AlikhanovReport {
                min_margin: m,
                argmin: k,
            };
        }
    }
    Ok(best)
}
