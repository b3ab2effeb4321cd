//! Periodic spectral fields on a 1-, 2- or 3-dimensional torus.
//!
//! Coefficients are stored in FFT order (row-major, last axis fastest) and
//! normalized so that `c(ξ)` is the amplitude of e^{iξ·x}. With this scaling
//! the L² norm is `sqrt(L^dim Σ |c|²)`.
//!
//! Odd multipliers (drift symbols, derivatives) vanish on Nyquist modes so
//! real fields stay real.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub n: usize,
    pub box_length: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, box_length: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(param(format!("grid dimension must be 1, 2 or 3, got {dim}")));
        }
        if n < 2 || !n.is_power_of_two() {
            return Err(param(format!("points per axis must be a power of two >= 2, got {n}")));
        }
        if !(box_length > 0.0 && box_length.is_finite()) {
            return Err(param(format!("box length must be positive, got {box_length}")));
        }
        Ok(Grid { dim, n, box_length })
    }

    /// Total number of modes, N^dim.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Fundamental wavenumber 2π/L.
    pub fn k0(&self) -> f64 {
        2.0 * PI / self.box_length
    }

    /// Integer wave indices (in [−N/2, N/2)) of flat index `idx`; unused axes are 0.
    pub fn wave_index(&self, idx: usize) -> [i64; 3] {
        let mut out = [0i64; 3];
        let mut rem = idx;
        for d in (0..self.dim).rev() {
            let i = rem % self.n;
            rem /= self.n;
            out[d] = if i < self.n / 2 {
                i as i64
            } else {
                i as i64 - self.n as i64
            };
        }
        out
    }

    pub fn flat_index(&self, m: [i64; 3]) -> usize {
        let mut idx = 0usize;
        for &md in m.iter().take(self.dim) {
            let i = md.rem_euclid(self.n as i64) as usize;
            idx = idx * self.n + i;
        }
        idx
    }

    pub fn wavevector(&self, idx: usize) -> [f64; 3] {
        let m = self.wave_index(idx);
        let k0 = self.k0();
        [m[0] as f64 * k0, m[1] as f64 * k0, m[2] as f64 * k0]
    }

    pub fn k2(&self, idx: usize) -> f64 {
        let k = self.wavevector(idx);
        k[0] * k[0] + k[1] * k[1] + k[2] * k[2]
    }

    /// Flat index of −ξ.
    pub fn mirror(&self, idx: usize) -> usize {
        let m = self.wave_index(idx);
        self.flat_index([-m[0], -m[1], -m[2]])
    }

    pub fn is_nyquist(&self, idx: usize) -> bool {
        let half = (self.n / 2) as i64;
        self.wave_index(idx).iter().take(self.dim).any(|&m| m == -half)
    }

    /// Two-thirds rule: keep modes with every |m_d| ≤ N/3.
    pub fn is_resolved(&self, idx: usize) -> bool {
        let cut = (self.n / 3) as i64;
        self.wave_index(idx).iter().take(self.dim).all(|&m| m.abs() <= cut)
    }

    /// Physical cell volume (L/N)^dim.
    pub fn cell_volume(&self) -> f64 {
        (self.box_length / self.n as f64).powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.box_length.powi(self.dim as i32)
    }

    /// Physical coordinates of sample `idx`.
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let h = self.box_length / self.n as f64;
        let mut out = [0.0; 3];
        let mut rem = idx;
        for d in (0..self.dim).rev() {
            out[d] = (rem % self.n) as f64 * h;
            rem /= self.n;
        }
        out
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_nd(grid: &Grid, data: &mut [Complex64], inverse: bool) {
    let n = grid.n;
    let plan = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    });
    let total = grid.len();
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    for axis in 0..grid.dim {
        let stride = n.pow((grid.dim - 1 - axis) as u32);
        for start in 0..total {
            if (start / stride) % n != 0 {
                continue;
            }
            for (i, v) in line.iter_mut().enumerate() {
                *v = data[start + i * stride];
            }
            plan.process_with_scratch(&mut line, &mut scratch);
            for (i, v) in line.iter().enumerate() {
                data[start + i * stride] = *v;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub grid: Grid,
    pub coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: Grid) -> Self {
        SpectralField {
            grid,
            coeffs: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_coeffs(grid: Grid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(param(format!(
                "expected {} coefficients, got {}",
                grid.len(),
                coeffs.len()
            )));
        }
        Ok(SpectralField { grid, coeffs })
    }

    /// Forward transform of real samples laid out row-major.
    pub fn from_physical(grid: Grid, samples: &[f64]) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(param(format!("expected {} samples, got {}", grid.len(), samples.len())));
        }
        let mut data: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        fft_nd(&grid, &mut data, false);
        let scale = 1.0 / grid.len() as f64;
        for c in &mut data {
            *c *= scale;
        }
        Ok(SpectralField { grid, coeffs: data })
    }

    /// Real part of the inverse transform.
    pub fn to_physical(&self) -> Vec<f64> {
        let mut data = self.coeffs.clone();
        fft_nd(&self.grid, &mut data, true);
        data.into_iter().map(|c| c.re).collect()
    }

    pub fn map_modes(&self, f: impl Fn(usize, Complex64) -> Complex64) -> Self {
        let coeffs = self.coeffs.iter().enumerate().map(|(i, &c)| f(i, c)).collect();
        SpectralField {
            grid: self.grid,
            coeffs,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map_modes(|_, c| c * s)
    }

    pub fn add(&self, other: &SpectralField) -> Self {
        self.map_modes(|i, c| c + other.coeffs[i])
    }

    pub fn sub(&self, other: &SpectralField) -> Self {
        self.map_modes(|i, c| c - other.coeffs[i])
    }

    /// Σ |c|² (no volume factor).
    pub fn energy_sum(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// L² norm through Plancherel.
    pub fn l2_norm(&self) -> f64 {
        (self.grid.volume() * self.energy_sum()).sqrt()
    }

    /// Largest violation of c(−ξ) = conj c(ξ).
    pub fn hermitian_defect(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| (self.coeffs[self.grid.mirror(i)] - self.coeffs[i].conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Zero every mode outside the two-thirds band.
    pub fn dealiased(&self) -> Self {
        self.map_modes(|i, c| {
            if self.grid.is_resolved(i) {
                c
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }
}

/// Multiplier |ξ|^s; the zero mode maps to zero.
pub fn frac_laplacian(field: &SpectralField, s: f64) -> Result<SpectralField> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(param(format!("fractional Laplacian power must be positive, got {s}")));
    }
    let g = field.grid;
    Ok(field.map_modes(|i, c| {
        let k2 = g.k2(i);
        if k2 == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            c * k2.powf(0.5 * s)
        }
    }))
}

/// −Δ applied spectrally (multiplier |ξ|²).
pub fn neg_laplacian(field: &SpectralField) -> SpectralField {
    let g = field.grid;
    field.map_modes(|i, c| c * g.k2(i))
}

/// Drift symbol table keyed by primitive integer directions.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomSymbol {
    dim: usize,
    table: HashMap<[i64; 3], [Complex64; 3]>,
    bound: f64,
}

/// One row of a custom symbol table as it appears in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolEntry {
    pub k: Vec<i64>,
    /// Components as [re, im] pairs.
    pub m: Vec<[f64; 2]>,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn primitive(m: [i64; 3]) -> ([i64; 3], i64) {
    let g = gcd(gcd(m[0], m[1]), m[2]);
    if g == 0 {
        return (m, 0);
    }
    ([m[0] / g, m[1] / g, m[2] / g], g)
}

impl CustomSymbol {
    /// Validates divergence-freeness, boundedness and Hermitian pairing.
    /// Homogeneity of degree zero holds by construction: every mode reads
    /// the entry of its primitive direction.
    pub fn new(dim: usize, entries: &[SymbolEntry]) -> Result<Self> {
        let mut table: HashMap<[i64; 3], [Complex64; 3]> = HashMap::new();
        for e in entries {
            if e.k.len() != dim || e.m.len() != dim {
                return Err(param(format!("symbol entry {:?} does not have {dim} components", e.k)));
            }
            let mut key = [0i64; 3];
            key[..dim].copy_from_slice(&e.k);
            let (prim, g) = primitive(key);
            if g == 0 {
                return Err(param("symbol must vanish at the zero mode; remove the k = 0 entry"));
            }
            if g != 1 {
                return Err(param(format!(
                    "symbol key {:?} is not a primitive direction; degree-zero homogeneity fixes it from {:?}",
                    e.k,
                    &prim[..dim]
                )));
            }
            let mut val = [Complex64::new(0.0, 0.0); 3];
            for (d, pair) in e.m.iter().enumerate() {
                if !pair[0].is_finite() || !pair[1].is_finite() {
                    return Err(param(format!("symbol at {:?} is not finite", e.k)));
                }
                val[d] = Complex64::new(pair[0], pair[1]);
            }
            let norm: f64 = val.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            let kn = (key.iter().map(|&x| (x * x) as f64).sum::<f64>()).sqrt();
            let div: Complex64 = (0..dim).map(|d| val[d] * key[d] as f64).sum();
            if div.norm() > 1e-14 * kn * norm.max(1e-300) {
                return Err(param(format!(
                    "symbol at {:?} is not divergence free (ξ·m = {div})",
                    e.k
                )));
            }
            if table.insert(key, val).is_some() {
                return Err(param(format!("duplicate symbol entry {:?}", e.k)));
            }
        }
        let keys: Vec<[i64; 3]> = table.keys().copied().collect();
        for key in keys {
            let mirror = [-key[0], -key[1], -key[2]];
            let val = table[&key];
            let conj = [val[0].conj(), val[1].conj(), val[2].conj()];
            match table.get(&mirror) {
                Some(other) => {
                    let gap: f64 = (0..3).map(|d| (other[d] - conj[d]).norm()).fold(0.0, f64::max);
                    if gap > 1e-14 {
                        return Err(param(format!("symbol at {:?} breaks m(−ξ) = conj m(ξ)", &key[..dim])));
                    }
                }
                None => {
                    table.insert(mirror, conj);
                }
            }
        }
        let bound = table
            .values()
            .map(|v| v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        Ok(CustomSymbol { dim, table, bound })
    }

    fn eval(&self, m: [i64; 3]) -> [Complex64; 3] {
        let (prim, g) = primitive(m);
        if g == 0 {
            return [Complex64::new(0.0, 0.0); 3];
        }
        self.table.get(&prim).copied().unwrap_or([Complex64::new(0.0, 0.0); 3])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DriftSpec {
    None,
    /// A[θ] = (−R₂θ, R₁θ), two dimensions only.
    Sqg,
    Custom(CustomSymbol),
}

impl DriftSpec {
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self {
            DriftSpec::Sqg if dim != 2 => Err(param(format!("SQG drift needs a 2-D grid, got dimension {dim}"))),
            DriftSpec::Custom(c) if c.dim != dim => Err(param(format!(
                "custom drift symbol has dimension {}, grid has {dim}",
                c.dim
            ))),
            _ => Ok(()),
        }
    }

    /// sup |m(ξ)|.
    pub fn bound(&self) -> f64 {
        match self {
            DriftSpec::None => 0.0,
            DriftSpec::Sqg => 1.0,
            DriftSpec::Custom(c) => c.bound,
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, DriftSpec::None)
    }

    /// Symbol m(ξ) at flat index `idx`; zero at ξ = 0 and on Nyquist modes.
    pub fn symbol(&self, grid: &Grid, idx: usize) -> [Complex64; 3] {
        let zero = [Complex64::new(0.0, 0.0); 3];
        if grid.is_nyquist(idx) {
            return zero;
        }
        let m = grid.wave_index(idx);
        match self {
            DriftSpec::None => zero,
            DriftSpec::Sqg => {
                if m[0] == 0 && m[1] == 0 {
                    return zero;
                }
                let (x, y) = (m[0] as f64, m[1] as f64);
                let r = x.hypot(y);
                [
                    Complex64::new(0.0, y / r),
                    Complex64::new(0.0, -x / r),
                    Complex64::new(0.0, 0.0),
                ]
            }
            DriftSpec::Custom(c) => c.eval(m),
        }
    }
}

/// Components of A[θ].
pub fn drift_apply(spec: &DriftSpec, field: &SpectralField) -> Result<Vec<SpectralField>> {
    let g = field.grid;
    spec.check_dim(g.dim)?;
    let symbols: Vec<[Complex64; 3]> = (0..g.len()).map(|i| spec.symbol(&g, i)).collect();
    Ok((0..g.dim).map(|d| field.map_modes(|i, c| symbols[i][d] * c)).collect())
}

/// Gaussian transform-side bump exp(−(eps|ξ|)²); eps = 0 is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    pub eps: f64,
}

impl Mollifier {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(param(format!("mollifier width must be >= 0, got {eps}")));
        }
        Ok(Mollifier { eps })
    }

    pub fn profile_hat(&self, k2: f64) -> f64 {
        (-self.eps * self.eps * k2).exp()
    }
}

pub fn mollify(m: &Mollifier, field: &SpectralField) -> SpectralField {
    let g = field.grid;
    field.map_modes(|i, c| c * m.profile_hat(g.k2(i)))
}

/// div((φ_ε ∗ A[a]) b), formed in physical space and truncated to the
/// two-thirds band.
pub fn transport_term(
    spec: &DriftSpec,
    moll: &Mollifier,
    a: &SpectralField,
    b: &SpectralField,
) -> Result<SpectralField> {
    transport_term_with(spec, moll, a, b, true)
}

/// `transport_term` with the two-thirds truncation optional; Nyquist modes
/// are dropped either way.
pub fn transport_term_with(
    spec: &DriftSpec,
    moll: &Mollifier,
    a: &SpectralField,
    b: &SpectralField,
    dealias: bool,
) -> Result<SpectralField> {
    let g = a.grid;
    if b.grid != g {
        return Err(param("transport term needs both fields on the same grid"));
    }
    let mut out = SpectralField::zeros(g);
    if spec.is_none() {
        return Ok(out);
    }
    let vel = drift_apply(spec, a)?;
    let bp = b.to_physical();
    for (d, comp) in vel.iter().enumerate() {
        let u = mollify(moll, comp).to_physical();
        let flux: Vec<f64> = u.iter().zip(&bp).map(|(x, y)| x * y).collect();
        let fh = SpectralField::from_physical(g, &flux)?;
        for i in 0..g.len() {
            if (!dealias || g.is_resolved(i)) && !g.is_nyquist(i) {
                let kd = g.wavevector(i)[d];
                out.coeffs[i] += Complex64::new(0.0, kd) * fh.coeffs[i];
            }
        }
    }
    Ok(out)
}

/// Homogeneous Ẇ^{s,p} norm; s = 0 gives the L^p norm.
pub fn sobolev_norm(field: &SpectralField, s: f64, p: f64) -> Result<f64> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(param(format!("Lebesgue exponent must lie in (1, inf), got {p}")));
    }
    if !(s >= 0.0 && s.is_finite()) {
        return Err(param(format!("smoothness must be >= 0, got {s}")));
    }
    let g = field.grid;
    if p == 2.0 {
        let sum: f64 = field
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let w = if s == 0.0 { 1.0 } else { g.k2(i).powf(s) };
                w * c.norm_sqr()
            })
            .sum();
        return Ok((g.volume() * sum).sqrt());
    }
    let h = if s == 0.0 {
        field.clone()
    } else {
        frac_laplacian(field, s)?
    };
    Ok(lp_norm_physical(&g, &h.to_physical(), p))
}

/// Trapezoid (equivalently rectangle, by periodicity) L^p norm of samples.
pub fn lp_norm_physical(grid: &Grid, samples: &[f64], p: f64) -> f64 {
    let sum: f64 = samples.iter().map(|x| x.abs().powf(p)).sum();
    (grid.cell_volume() * sum).powf(1.0 / p)
}

/// Initial-data presets; `amplitude` is the L² norm of the result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "preset")]
pub enum Preset {
    GaussianBump {
        #[serde(default = "default_width")]
        width: f64,
    },
    RandomBandlimited {
        #[serde(default)]
        band: Option<usize>,
    },
}

fn default_width() -> f64 {
    0.1
}

/// Periodized Gaussian centred in the box; `width` is a fraction of L.
pub fn gaussian_bump(grid: Grid, width: f64, amplitude: f64) -> Result<SpectralField> {
    if !(width > 0.0) {
        return Err(param(format!("bump width must be positive, got {width}")));
    }
    let s = width * grid.box_length;
    let c = 0.5 * grid.box_length;
    let samples: Vec<f64> = (0..grid.len())
        .map(|i| {
            let x = grid.point(i);
            let r2: f64 = (0..grid.dim).map(|d| (x[d] - c) * (x[d] - c)).sum();
            (-r2 / (2.0 * s * s)).exp()
        })
        .collect();
    let f = SpectralField::from_physical(grid, &samples)?;
    normalize(f, amplitude)
}

/// Random real field with Fourier support in every |m_d| ≤ band (default N/8)
/// and zero mean.
pub fn random_bandlimited(grid: Grid, seed: u64, band: Option<usize>, amplitude: f64) -> Result<SpectralField> {
    let band = band.unwrap_or((grid.n / 8).max(1)) as i64;
    if band as usize >= grid.n / 2 {
        return Err(param(format!("band {band} must stay below N/2 = {}", grid.n / 2)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = SpectralField::zeros(grid);
    for i in 0..grid.len() {
        let m = grid.wave_index(i);
        if m.iter().take(grid.dim).all(|&x| x.abs() <= band) && m != [0, 0, 0] {
            let re: f64 = rng.gen_range(-1.0..1.0);
            let im: f64 = rng.gen_range(-1.0..1.0);
            f.coeffs[i] = Complex64::new(re, im);
        }
    }
    // symmetrize so the field is real
    let sym = f.map_modes(|i, c| 0.5 * (c + f.coeffs[grid.mirror(i)].conj()));
    normalize(sym, amplitude)
}

fn normalize(f: SpectralField, amplitude: f64) -> Result<SpectralField> {
    let n = f.l2_norm();
    if n == 0.0 {
        return Ok(f);
    }
    Ok(f.scale(amplitude / n))
}

/// Grid-shaped binary container: u64 dim, u64 N, f64 L, then N^dim samples,
/// all little-endian.
pub fn write_container(path: &Path, grid: &Grid, samples: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 8 * samples.len());
    encode_header(&mut buf, grid);
    for x in samples {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    crate::persist::atomic_write(path, &buf)
}

pub(crate) fn encode_header(buf: &mut Vec<u8>, grid: &Grid) {
    buf.extend_from_slice(&(grid.dim as u64).to_le_bytes());
    buf.extend_from_slice(&(grid.n as u64).to_le_bytes());
    buf.extend_from_slice(&grid.box_length.to_le_bytes());
}

pub fn read_container(path: &Path) -> Result<(Grid, Vec<f64>)> {
    let mut fh = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut bytes = Vec::new();
    fh.read_to_end(&mut bytes).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    decode_container(&bytes)
}

pub fn decode_container(bytes: &[u8]) -> Result<(Grid, Vec<f64>)> {
    if bytes.len() < 24 {
        return Err(Error::Config("container shorter than its header".into()));
    }
    let word = |i: usize| -> [u8; 8] { bytes[8 * i..8 * i + 8].try_into().unwrap() };
    let dim = u64::from_le_bytes(word(0)) as usize;
    let n = u64::from_le_bytes(word(1)) as usize;
    let l = f64::from_le_bytes(word(2));
    let grid = Grid::new(dim, n, l).map_err(|e| Error::Config(format!("container header: {e}")))?;
    let expected = 24 + 8 * grid.len();
    if bytes.len() != expected {
        return Err(Error::Config(format!(
            "container holds {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let samples = (0..grid.len()).map(|i| f64::from_le_bytes(word(3 + i))).collect();
    Ok((grid, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_mode(grid: Grid, m: [i64; 3], amp: f64) -> SpectralField {
        let mut f = SpectralField::zeros(grid);
        f.coeffs[grid.flat_index(m)] = Complex64::new(amp, 0.0);
        f
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(4, 8, 1.0).is_err());
        assert!(Grid::new(2, 12, 1.0).is_err());
        assert!(Grid::new(2, 8, 0.0).is_err());
        let g = Grid::new(3, 8, 2.0).unwrap();
        assert_eq!(g.len(), 512);
    }

    #[test]
    fn wave_index_round_trip() {
        let g = Grid::new(3, 8, 1.0).unwrap();
        for i in 0..g.len() {
            let m = g.wave_index(i);
            assert!(m.iter().all(|&x| (-4..4).contains(&x)));
            assert_eq!(g.flat_index(m), i);
        }
    }

    #[test]
    fn single_mode_fractional_laplacian() {
        let g = Grid::new(1, 16, 2.0 * PI).unwrap();
        let f = single_mode(g, [2, 0, 0], 1.0);
        let h = frac_laplacian(&f, 1.5).unwrap();
        let c = h.coeffs[g.flat_index([2, 0, 0])];
        assert!((c.re - 2f64.powf(1.5)).abs() < 1e-12);
        assert!(frac_laplacian(&f, 0.0).is_err());
    }

    #[test]
    fn physical_samples_of_single_mode() {
        let g = Grid::new(2, 8, 2.0 * PI).unwrap();
        let f = single_mode(g, [1, 2, 0], 1.0).add(&single_mode(g, [-1, -2, 0], 1.0));
        let x = f.to_physical();
        for (i, v) in x.iter().enumerate() {
            let p = g.point(i);
            assert!((v - 2.0 * (p[0] + 2.0 * p[1]).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn sqg_single_mode_symbol() {
        let g = Grid::new(2, 16, 2.0 * PI).unwrap();
        let f = single_mode(g, [1, 0, 0], 1.0);
        let a = drift_apply(&DriftSpec::Sqg, &f).unwrap();
        let idx = g.flat_index([1, 0, 0]);
        assert_eq!(a[0].coeffs[idx], Complex64::new(0.0, 0.0));
        assert!((a[1].coeffs[idx] - Complex64::new(0.0, -1.0)).norm() < 1e-15);
        let k = g.wavevector(idx);
        let div = a[0].coeffs[idx] * k[0] + a[1].coeffs[idx] * k[1];
        assert_eq!(div.norm(), 0.0);
    }

    #[test]
    fn sqg_rejects_wrong_dimension() {
        let g = Grid::new(1, 16, 1.0).unwrap();
        assert!(drift_apply(&DriftSpec::Sqg, &SpectralField::zeros(g)).is_err());
    }

    #[test]
    fn sobolev_single_mode() {
        let g = Grid::new(1, 32, 2.0 * PI).unwrap();
        let f = single_mode(g, [3, 0, 0], 1.0);
        let v = sobolev_norm(&f, 0.75, 2.0).unwrap() / g.volume().sqrt();
        assert!((v - 3f64.powf(0.75)).abs() < 1e-12);
        assert!(sobolev_norm(&f, 0.0, 1.0).is_err());
    }

    #[test]
    fn lp_norm_matches_spectral_at_p_two() {
        let g = Grid::new(2, 32, 3.0).unwrap();
        let f = random_bandlimited(g, 7, None, 1.3).unwrap();
        let spectral = sobolev_norm(&f, 0.0, 2.0).unwrap();
        let physical = lp_norm_physical(&g, &f.to_physical(), 2.0);
        assert!((spectral - physical).abs() < 1e-12);
        assert!((spectral - 1.3).abs() < 1e-12);
    }

    #[test]
    fn mollifier_basics() {
        let g = Grid::new(2, 16, 2.0 * PI).unwrap();
        let f = random_bandlimited(g, 3, None, 1.0).unwrap();
        assert_eq!(mollify(&Mollifier::new(0.0).unwrap(), &f), f);
        let c = single_mode(g, [0, 0, 0], 2.0);
        assert_eq!(mollify(&Mollifier::new(0.3).unwrap(), &c), c);
        assert!(Mollifier::new(-1.0).is_err());
    }

    #[test]
    fn custom_symbol_validation() {
        let good = vec![SymbolEntry {
            k: vec![1, 0],
            m: vec![[0.0, 0.0], [0.0, -1.0]],
        }];
        let c = CustomSymbol::new(2, &good).unwrap();
        let g = Grid::new(2, 16, 2.0 * PI).unwrap();
        let spec = DriftSpec::Custom(c);
        let m3 = spec.symbol(&g, g.flat_index([3, 0, 0]));
        assert_eq!(m3[1], Complex64::new(0.0, -1.0));
        let mm = spec.symbol(&g, g.flat_index([-2, 0, 0]));
        assert_eq!(mm[1], Complex64::new(0.0, 1.0));
        let not_div_free = vec![SymbolEntry {
            k: vec![1, 0],
            m: vec![[1.0, 0.0], [0.0, 0.0]],
        }];
        assert!(CustomSymbol::new(2, &not_div_free).is_err());
        let not_primitive = vec![SymbolEntry {
            k: vec![2, 0],
            m: vec![[0.0, 0.0], [1.0, 0.0]],
        }];
        assert!(CustomSymbol::new(2, &not_primitive).is_err());
        let bad_pair = vec![
            SymbolEntry {
                k: vec![0, 1],
                m: vec![[0.0, 1.0], [0.0, 0.0]],
            },
            SymbolEntry {
                k: vec![0, -1],
                m: vec![[0.0, 1.0], [0.0, 0.0]],
            },
        ];
        assert!(CustomSymbol::new(2, &bad_pair).is_err());
    }

    #[test]
    fn transport_of_sqg_conserves_l2() {
        let g = Grid::new(2, 32, 2.0 * PI).unwrap();
        let f = random_bandlimited(g, 11, Some(5), 1.0).unwrap();
        let t = transport_term(&DriftSpec::Sqg, &Mollifier::new(0.1).unwrap(), &f, &f).unwrap();
        let inner: f64 = f.coeffs.iter().zip(&t.coeffs).map(|(a, b)| (a.conj() * b).re).sum();
        assert!(inner.abs() < 1e-14, "{inner}");
        assert!(t.hermitian_defect() < 1e-14);
    }

    #[test]
    fn container_round_trip() {
        let g = Grid::new(2, 8, 1.5).unwrap();
        let samples: Vec<f64> = (0..g.len()).map(|i| (i as f64).sin()).collect();
        let mut buf = Vec::new();
        encode_header(&mut buf, &g);
        for x in &samples {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        let (g2, s2) = decode_container(&buf).unwrap();
        assert_eq!(g2, g);
        assert_eq!(s2, samples);
        assert!(decode_container(&buf[..30]).is_err());
    }
}
