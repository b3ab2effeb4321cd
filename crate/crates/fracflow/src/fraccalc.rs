//! Fractional calculus primitives on uniform time grids.
//!
//! Mittag-Leffler evaluation on the negative real axis, the L1 Caputo
//! discretization, a regularized Riemann-Liouville derivative, and the
//! fractional integral. Every memory integral is evaluated by product
//! integration: the integrand is interpolated piecewise-linearly between
//! nodes and the weakly singular factor is integrated exactly.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{param, Error, Result};
use crate::quad;

/// Time order, space order, hyperviscosity and mollifier width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FracOrder {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub moll_eps: f64,
}

impl FracOrder {
    pub fn new(alpha: f64, gamma: f64, epsilon: f64, moll_eps: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(param(format!("alpha must lie in (0,1), got {alpha}")));
        }
        if !(gamma > 0.0 && gamma < 2.0) {
            return Err(param(format!("gamma must lie in (0,2), got {gamma}")));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(param(format!("epsilon must be >= 0, got {epsilon}")));
        }
        if !(moll_eps >= 0.0 && moll_eps.is_finite()) {
            return Err(param(format!("mollifier width must be >= 0, got {moll_eps}")));
        }
        Ok(FracOrder {
            alpha,
            gamma,
            epsilon,
            moll_eps,
        })
    }

    /// Linear diffusion symbol ε|ξ|² + |ξ|^γ at squared wavenumber `k2`.
    pub fn symbol(&self, k2: f64) -> f64 {
        if k2 == 0.0 {
            0.0
        } else {
            self.epsilon * k2 + k2.powf(0.5 * self.gamma)
        }
    }
}

/// Real samples on the uniform grid t_k = k·dt, k = 0..K.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl SampledPath {
    pub fn new(dt: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(param(format!("dt must be positive, got {dt}")));
        }
        if values.is_empty() {
            return Err(Error::InsufficientData("a path needs at least one sample".into()));
        }
        Ok(SampledPath { dt, values })
    }

    pub fn from_fn(dt: f64, steps: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(dt, (0..=steps).map(|k| f(k as f64 * dt)).collect())
    }

    /// Number of steps K (one less than the number of samples).
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|k| self.time(k)).collect()
    }

    fn require_steps(&self) -> Result<()> {
        if self.steps() == 0 {
            Err(Error::InsufficientData("operation needs K >= 1 steps".into()))
        } else {
            Ok(())
        }
    }
}

/// Parameters of E_{α,β}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MLParams {
    pub alpha: f64,
    pub beta: f64,
}

impl MLParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
            return Err(param(format!(
                "Mittag-Leffler parameters must be positive, got alpha={alpha}, beta={beta}"
            )));
        }
        Ok(MLParams { alpha, beta })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlMethod {
    Exponential,
    Series,
    Quadrature,
    Asymptotic,
}

impl MlMethod {
    pub fn name(self) -> &'static str {
        match self {
            MlMethod::Exponential => "exponential",
            MlMethod::Series => "series",
            MlMethod::Quadrature => "quadrature",
            MlMethod::Asymptotic => "asymptotic",
        }
    }
}

/// Largest |z| handled by the power series.
pub const SERIES_RADIUS: f64 = 5.0;
/// Bound on |z|^{1/α}; the largest series term grows like exp(|z|^{1/α}).
const SERIES_GROWTH_LIMIT: f64 = 4.0;
/// x^{1/α} beyond which the algebraic tail is summed instead of the contour integral.
const ASYMPTOTIC_GROWTH: f64 = 25.0;

/// 1/Γ(x), zero at the poles and exact at small positive integers.
pub fn rgamma(x: f64) -> f64 {
    if x <= 0.0 && x == x.round() {
        0.0
    } else if x == x.round() && x <= 20.0 {
        1.0 / (1..x as u64).map(|k| k as f64).product::<f64>()
    } else {
        1.0 / gamma(x)
    }
}

/// sin(πx) with exact zeros at the integers.
fn sin_pi(x: f64) -> f64 {
    if x == x.round() {
        return 0.0;
    }
    let r = x - 2.0 * (x / 2.0).floor();
    (PI * r).sin()
}

pub fn ml_eval(p: MLParams, z: f64) -> Result<f64> {
    ml_eval_method(p, z).map(|(v, _)| v)
}

/// E_{α,β}(z) for z ≤ 0 together with the method that produced it.
pub fn ml_eval_method(p: MLParams, z: f64) -> Result<(f64, MlMethod)> {
    if !(z <= 0.0) || !z.is_finite() {
        return Err(param(format!(
            "Mittag-Leffler argument must be finite and <= 0, got {z}"
        )));
    }
    let (a, b) = (p.alpha, p.beta);
    let x = -z;
    if x == 0.0 {
        return Ok((rgamma(b), MlMethod::Series));
    }
    if a == 1.0 && b == 1.0 {
        return Ok((z.exp(), MlMethod::Exponential));
    }
    if a == 1.0 && b == b.round() && b <= 8.0 && x >= 1.0 {
        // E_{1,β+1}(z) = (E_{1,β}(z) − 1/Γ(β)) / z, stable once |z| ≥ 1
        let mut v = z.exp();
        for k in 1..b as u64 {
            v = (v - rgamma(k as f64)) / z;
        }
        return Ok((v, MlMethod::Exponential));
    }
    let growth = x.powf(1.0 / a);
    if x <= SERIES_RADIUS && growth <= SERIES_GROWTH_LIMIT {
        return Ok((ml_series(a, b, z), MlMethod::Series));
    }
    if a < 1.0 {
        if growth >= ASYMPTOTIC_GROWTH {
            if let Some(v) = ml_asymptotic(a, b, x) {
                return Ok((v, MlMethod::Asymptotic));
            }
        }
        return ml_quadrature(a, b, x).map(|v| (v, MlMethod::Quadrature));
    }
    if growth <= 30.0 {
        let v = ml_series(a, b, z);
        return Ok((v, MlMethod::Series));
    }
    Err(Error::Evaluation {
        what: format!("E_{{{a},{b}}}({z}) outside the supported region"),
        residual: f64::INFINITY,
    })
}

/// E_{α,β}(−x) for repeated evaluation at fixed (α, β): piecewise Chebyshev
/// in ln x across the band where neither the power series nor the algebraic
/// tail applies, direct evaluation elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct MlTable {
    params: MLParams,
    ln_lo: f64,
    panels: Vec<Vec<f64>>,
}

const ML_TABLE_PANEL: f64 = 0.25;
const ML_TABLE_NODES: usize = 16;

impl MlTable {
    pub fn new(params: MLParams) -> Result<Self> {
        let a = params.alpha;
        let (lo, hi) = (
            SERIES_RADIUS.min(SERIES_GROWTH_LIMIT.powf(a)),
            (2.0 * ASYMPTOTIC_GROWTH).powf(a),
        );
        if a >= 1.0 || hi <= lo {
            return Ok(MlTable {
                params,
                ln_lo: lo.ln(),
                panels: Vec::new(),
            });
        }
        let count = ((hi.ln() - lo.ln()) / ML_TABLE_PANEL).ceil() as usize;
        let n = ML_TABLE_NODES;
        let mut panels = Vec::with_capacity(count);
        for p in 0..count {
            let center = lo.ln() + (p as f64 + 0.5) * ML_TABLE_PANEL;
            let mut f = Vec::with_capacity(n);
            for j in 0..n {
                let x = (PI * (j as f64 + 0.5) / n as f64).cos();
                f.push(ml_eval(params, -(center + 0.5 * ML_TABLE_PANEL * x).exp())?);
            }
            panels.push(
                (0..n)
                    .map(|k| {
                        let s: f64 = f
                            .iter()
                            .enumerate()
                            .map(|(j, v)| v * (PI * k as f64 * (j as f64 + 0.5) / n as f64).cos())
                            .sum();
                        2.0 * s / n as f64
                    })
                    .collect(),
            );
        }
        Ok(MlTable {
            params,
            ln_lo: lo.ln(),
            panels,
        })
    }

    pub fn params(&self) -> MLParams {
        self.params
    }

    /// E_{α,β}(−x), x ≥ 0.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let y = x.ln();
        let span = self.panels.len() as f64 * ML_TABLE_PANEL;
        if !(y >= self.ln_lo && y < self.ln_lo + span) {
            return ml_eval(self.params, -x);
        }
        let p = ((y - self.ln_lo) / ML_TABLE_PANEL) as usize;
        let t = (y - self.ln_lo - (p as f64 + 0.5) * ML_TABLE_PANEL) / (0.5 * ML_TABLE_PANEL);
        let c = &self.panels[p];
        let (mut b1, mut b2) = (0.0, 0.0);
        for ck in c.iter().skip(1).rev() {
            let b0 = 2.0 * t * b1 - b2 + ck;
            b2 = b1;
            b1 = b0;
        }
        Ok(t * b1 - b2 + 0.5 * c[0])
    }
}

fn ml_series(a: f64, b: f64, z: f64) -> f64 {
    let x = z.abs();
    let lx = x.ln();
    let mut sum = 0.0;
    let mut peaked = false;
    let mut prev = f64::INFINITY;
    for k in 0..20_000usize {
        let arg = a * k as f64 + b;
        let mag = if arg < 170.0 {
            x.powi(k as i32) * rgamma(arg)
        } else {
            (k as f64 * lx - ln_gamma(arg)).exp()
        };
        let term = if k % 2 == 1 && z < 0.0 { -mag } else { mag };
        sum += term;
        if mag < prev {
            peaked = true;
        }
        prev = mag;
        if peaked && k > 2 && mag <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// Collapsed Hankel-contour representation, valid for 0 < α < 1, 0 < β < 1 + α.
fn ml_quadrature(a: f64, b: f64, x: f64) -> Result<f64> {
    if b >= 1.0 + a {
        // E_{α,β}(z) = (E_{α,β−α}(z) − 1/Γ(β−α)) / z
        let lower = ml_quadrature(a, b - a, x)?;
        return Ok((lower - rgamma(b - a)) / -x);
    }
    let c = 1.0 + a - b;
    let sb = sin_pi(b);
    let sba = sin_pi(b - a);
    let ca = (PI * a).cos();
    let integrand = |u: f64| -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        let r = u.powf(1.0 / c);
        let ra = r.powf(a);
        let num = ra * sb + x * sba;
        let den = ra * ra + 2.0 * x * ra * ca + x * x;
        (-r).exp() * num / den
    };
    // e^{−r} underflows past r ≈ 745, so the range is capped there
    let rp = x.powf(1.0 / a);
    let r_hi = (3.0 * rp + 80.0).min(800.0);
    let mut breaks: Vec<f64> = [0.0, 1.0, 8.0, 40.0, 120.0, rp, r_hi]
        .into_iter()
        .filter(|&r| r <= r_hi)
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let (mut sum, mut err) = (0.0, 0.0);
    for w in breaks.windows(2) {
        let (v, e) = quad::adaptive(integrand, w[0].powf(c), w[1].powf(c), 1e-17, 1e-15, 4000);
        sum += v;
        err += e;
    }
    let scale = 1.0 / (c * PI);
    let value = sum * scale;
    let err = err * scale;
    // relative tolerance with an absolute floor for values lost in cancellation
    if err > 1e-12 * value.abs() + 1e-16 {
        return Err(Error::Evaluation {
            what: format!("Mittag-Leffler quadrature E_{{{a},{b}}}(-{x})"),
            residual: err,
        });
    }
    Ok(value)
}

/// Σ c_j x^{−j} truncated where its envelope is smallest. For 0 < α < 1 on
/// the negative axis there are no exponential contributions, so the error is
/// of the size of that envelope; `None` when it stays above 1e−16 of the sum.
/// The envelope |1/Γ(−y)| ≤ Γ(1+y)/π bounds coefficients near poles of Γ,
/// where single terms vanish or nearly vanish.
fn ml_asymptotic(a: f64, b: f64, x: f64) -> Option<f64> {
    let lx = x.ln();
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    for j in 1..400 {
        let arg = b - a * j as f64;
        let ln_env = if arg > 0.0 {
            -ln_gamma(arg)
        } else {
            ln_gamma(1.0 - arg) - PI.ln()
        } - j as f64 * lx;
        let env = ln_env.exp();
        if env > prev {
            break;
        }
        sum += ml_tail_coeff(a, b, j) * (-(j as f64) * lx).exp();
        prev = env;
        if sum != 0.0 && env <= 1e-17 * sum.abs() {
            return Some(sum);
        }
    }
    (prev <= 1e-16 * sum.abs()).then_some(sum)
}

/// Coefficient c_j in E_{α,β}(−x) ≈ Σ_{j≥1} c_j x^{−j} as x → ∞.
pub fn ml_tail_coeff(alpha: f64, beta: f64, j: usize) -> f64 {
    let s = if j % 2 == 1 { 1.0 } else { -1.0 };
    s * rgamma(beta - alpha * j as f64)
}

/// L1 weights b_j = (j+1)^{1−α} − j^{1−α}, j = 0..count.
pub fn l1_weights(alpha: f64, count: usize) -> Vec<f64> {
    let e = 1.0 - alpha;
    (0..count)
        .map(|j| {
            if j == 0 {
                1.0
            } else {
                let jf = j as f64;
                jf.powf(e) * (e * (1.0 / jf).ln_1p()).exp_m1()
            }
        })
        .collect()
}

/// (m+1)^c − 2m^c + (m−1)^c without cancellation for large m.
fn second_difference_pow(m: f64, c: f64) -> f64 {
    if m < 8.0 {
        return (m + 1.0).powf(c) - 2.0 * m.powf(c) + (m - 1.0).powf(c);
    }
    let x = 1.0 / m;
    let x2 = x * x;
    // (1+x)^c + (1−x)^c − 2 = 2 Σ_{k≥1} C(c, 2k) x^{2k}
    let mut binom = c * (c - 1.0) / 2.0;
    let mut pw = x2;
    let mut sum = binom * pw;
    let mut i = 2.0;
    loop {
        binom *= (c - i) * (c - i - 1.0) / ((i + 1.0) * (i + 2.0));
        pw *= x2;
        let t = binom * pw;
        sum += t;
        if t.abs() <= 1e-18 * sum.abs() {
            break;
        }
        i += 2.0;
    }
    2.0 * m.powf(c) * sum
}

/// Product-integration weights w_j with Σ_j w_j g(t_j) = ∫_0^{t_n} (t_n − s)^{a−1} ĝ(s) ds
/// for the piecewise-linear interpolant ĝ of g; requires a > 0.
pub fn product_weights(a: f64, n: usize, dt: f64) -> Vec<f64> {
    let mut w = vec![0.0; n + 1];
    if n == 0 {
        return w;
    }
    let scale = dt.powf(a) / (a * (a + 1.0));
    w[0] = scale * start_factor(n as f64, a + 1.0);
    for (j, wj) in w.iter_mut().enumerate().take(n).skip(1) {
        *wj = scale * second_difference_pow((n - j) as f64, a + 1.0);
    }
    w[n] = scale;
    w
}

/// Weights of `product_weights` indexed by lag m = n − j for interior nodes:
/// entry m is the weight multiplying g(t_{n−m}) when 0 < n − m < n.
pub fn product_lag_weights(a: f64, max_lag: usize, dt: f64) -> Vec<f64> {
    let scale = dt.powf(a) / (a * (a + 1.0));
    (0..=max_lag)
        .map(|m| {
            if m == 0 {
                scale
            } else {
                scale * second_difference_pow(m as f64, a + 1.0)
            }
        })
        .collect()
}

/// Weight multiplying g(t_0) in `product_weights` for the integral up to t_n.
pub fn product_start_weight(a: f64, n: usize, dt: f64) -> f64 {
    dt.powf(a) / (a * (a + 1.0)) * start_factor(n as f64, a + 1.0)
}

/// Starting weights W_1..W_m added to `product_weights` at nodes 1..m so that
/// the rule also integrates s^β exactly for each β in `exponents`, the
/// non-smooth powers of a function behaving like Σ c_β s^β near s = 0.
pub fn start_corrections(a: f64, exponents: &[f64], n: usize, dt: f64) -> Vec<f64> {
    // 1 and s stay exact; with fewer than m + 2 nodes the last powers are dropped
    let powers: Vec<f64> = [0.0, 1.0].iter().chain(exponents).copied().collect();
    let m = powers.len().min(n);
    if m <= 2 {
        return Vec::new();
    }
    let base = product_weights(a, n, dt);
    let mut mat = vec![vec![0.0; m + 1]; m];
    for (row, &beta) in mat.iter_mut().zip(&powers) {
        // work in units of dt^β so rows are O(1)
        let exact = (n as f64).powf(a + beta)
            * dt.powf(a)
            * (ln_gamma(a) + ln_gamma(beta + 1.0) - ln_gamma(a + beta + 1.0)).exp();
        let rule: f64 = base.iter().enumerate().map(|(j, w)| w * (j as f64).powf(beta)).sum();
        for (j, cell) in row.iter_mut().take(m).enumerate() {
            *cell = ((j + 1) as f64).powf(beta);
        }
        row[m] = if beta == 0.0 || beta == 1.0 { 0.0 } else { exact - rule };
    }
    gauss_solve(mat)
}

/// Solves a small dense system given as augmented rows, with partial pivoting.
fn gauss_solve(mut rows: Vec<Vec<f64>>) -> Vec<f64> {
    let m = rows.len();
    for c in 0..m {
        let p = (c..m)
            .max_by(|&i, &j| rows[i][c].abs().total_cmp(&rows[j][c].abs()))
            .unwrap();
        rows.swap(c, p);
        for r in (c + 1)..m {
            let f = rows[r][c] / rows[c][c];
            for k in c..=m {
                rows[r][k] -= f * rows[c][k];
            }
        }
    }
    let mut x = vec![0.0; m];
    for c in (0..m).rev() {
        let s: f64 = ((c + 1)..m).map(|k| rows[c][k] * x[k]).sum();
        x[c] = (rows[c][m] - s) / rows[c][c];
    }
    x
}

/// (n−1)^c − n^{c−1}(n − c), evaluated by its binomial series for large n.
fn start_factor(n: f64, c: f64) -> f64 {
    if n < 8.0 {
        return (n - 1.0).powf(c) - n.powf(c - 1.0) * (n - c);
    }
    // n^c [(1−x)^c − 1 + c x], x = 1/n
    let x = 1.0 / n;
    let mut binom = c * (c - 1.0) / 2.0;
    let mut pw = x * x;
    let mut sum = binom * pw;
    let mut k = 2.0;
    loop {
        binom *= (c - k) / (k + 1.0);
        pw *= -x;
        let t = binom * pw;
        sum += t;
        if t.abs() <= 1e-18 * sum.abs() {
            break;
        }
        k += 1.0;
    }
    n.powf(c) * sum
}

/// Caputo derivative by the L1 scheme; the value at t_0 is 0.
pub fn caputo_l1(path: &SampledPath, alpha: f64) -> Result<SampledPath> {
    check_alpha(alpha)?;
    path.require_steps()?;
    let f = &path.values;
    let k_max = path.steps();
    let b = l1_weights(alpha, k_max);
    let c0 = path.dt.powf(-alpha) / gamma(2.0 - alpha);
    let mut out = vec![0.0; k_max + 1];
    for k in 1..=k_max {
        let mut s = 0.0;
        for (j, bj) in b.iter().enumerate().take(k) {
            s += bj * (f[k - j] - f[k - j - 1]);
        }
        out[k] = c0 * s;
    }
    SampledPath::new(path.dt, out)
}

/// Regularized Riemann-Liouville derivative: backward difference of the
/// product-integrated ∫ f(s)(t−s)^{−α} ds, minus the same difference applied
/// to f(0)·t^{1−α}/(1−α), divided by Γ(1−α). The value at t_0 is 0.
pub fn rl_regularized(path: &SampledPath, alpha: f64) -> Result<SampledPath> {
    check_alpha(alpha)?;
    path.require_steps()?;
    let dt = path.dt;
    let a = 1.0 - alpha;
    let f = &path.values;
    let k_max = path.steps();
    let lag = product_lag_weights(a, k_max, dt);
    let mut memory = vec![0.0; k_max + 1];
    for (n, mem) in memory.iter_mut().enumerate().skip(1) {
        let mut s = product_start_weight(a, n, dt) * f[0];
        for j in 1..=n {
            s += lag[n - j] * f[j];
        }
        *mem = s;
    }
    let g = gamma(1.0 - alpha);
    let mut out = vec![0.0; k_max + 1];
    for k in 1..=k_max {
        let tk = path.time(k);
        let tkm = path.time(k - 1);
        let base = f[0] * (tk.powf(a) - tkm.powf(a)) / a;
        out[k] = ((memory[k] - memory[k - 1]) - base) / (dt * g);
    }
    SampledPath::new(dt, out)
}

/// Exponent of the fractional-integral kernel (t − s)^e.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelExponent {
    /// e = α − 1, the exponent for which I_α inverts the Caputo derivative.
    #[default]
    Standard,
    /// e = −α.
    AsWritten,
}

impl KernelExponent {
    /// The `a` of `product_weights` (kernel exponent plus one).
    pub fn weight_order(self, alpha: f64) -> f64 {
        match self {
            KernelExponent::Standard => alpha,
            KernelExponent::AsWritten => 1.0 - alpha,
        }
    }
}

/// (1/Γ(α)) ∫_0^t f(s)(t−s)^e ds at every node, exact for piecewise-linear f.
pub fn frac_integral(path: &SampledPath, alpha: f64, exponent: KernelExponent) -> Result<SampledPath> {
    check_alpha(alpha)?;
    path.require_steps()?;
    let dt = path.dt;
    let a = exponent.weight_order(alpha);
    let f = &path.values;
    let k_max = path.steps();
    let lag = product_lag_weights(a, k_max, dt);
    let g = gamma(alpha);
    let mut out = vec![0.0; k_max + 1];
    for (n, o) in out.iter_mut().enumerate().skip(1) {
        let mut s = product_start_weight(a, n, dt) * f[0];
        for j in 1..=n {
            s += lag[n - j] * f[j];
        }
        *o = s / g;
    }
    SampledPath::new(dt, out)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(param(format!("alpha must lie in (0,1), got {alpha}")))
    }
}

#[cfg(test)]
mod start_correction_tests {
    use super::*;

    #[test]
    fn corrected_rule_integrates_fractional_powers() {
        let (a, dt) = (0.6, 0.01);
        let exps = [0.6, 1.2, 1.8];
        for n in [1usize, 2, 3, 10, 100] {
            let w = product_weights(a, n, dt);
            let c = start_corrections(a, &exps, n, dt);
            for &b in [0.0, 1.0].iter().chain(&exps[..exps.len().min(n.saturating_sub(2))]) {
                let f = |j: usize| (j as f64 * dt).powf(b);
                let mut q: f64 = w.iter().enumerate().map(|(j, x)| x * f(j)).sum();
                q += c.iter().enumerate().map(|(j, x)| x * f(j + 1)).sum::<f64>();
                let t: f64 = n as f64 * dt;
                let exact = t.powf(a + b) * gamma(a) * gamma(b + 1.0) / gamma(a + b + 1.0);
                assert!((q - exact).abs() < 1e-12 * exact, "n={n} b={b}");
            }
        }
    }
}
