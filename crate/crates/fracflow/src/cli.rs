//! Command-line front end: config ingestion, dispatch and artifact emission.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 failed check.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{cfl_number, epsilon_limit_study, regularity_monitor, EnergyLedger, RegularityReport};
use crate::error::Error;
use crate::fields::{
    gaussian_bump, random_bandlimited, read_container, CustomSymbol, DriftSpec, Grid, Mollifier, SpectralField,
    SymbolEntry,
};
use crate::fraccalc::{
    caputo_l1, frac_integral, ml_eval_method, rl_regularized, FracOrder, KernelExponent, MLParams, SampledPath,
};
use crate::kernels::{verify_bounds, Family, KernelMultiplier};
use crate::persist::atomic_write;
use crate::solver_march::{march, MarchConfig};
use crate::solver_mild::{
    calibrate_c_cal, decode_trajectory, fit_nonreg_sigma, fixed_point_report, grid_fixed_point_report, nonreg_horizon,
    picard_solve, FixedPointReport, LinearTreatment, PicardConfig, Trajectory,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "fracflow",
    version,
    about = "Time-fractional transport-diffusion solvers and verification tools"
)]
pub struct Cli {
    /// Worker threads for the solver and kernel pools.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory for emitted artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed for random initial data; overrides the config value.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a solver from a JSON configuration.
    Simulate(SimulateArgs),
    /// Verification suites.
    Verify {
        #[command(subcommand)]
        what: VerifyCommand,
    },
    /// L1 Caputo, regularized RL and inversion residual on a test path.
    CalculusCheck(CalculusArgs),
    /// Evaluate E_{α,β}(z) for z ≤ 0.
    Ml(MlArgs),
    /// Admissibility reports.
    Report {
        #[command(subcommand)]
        what: ReportCommand,
    },
    /// Hyperviscous runs against the ε = 0 solve.
    EpsilonStudy(EpsilonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverKind {
    Picard,
    L1,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "picard")]
    pub solver: SolverKind,
}

#[derive(Debug, Subcommand)]
pub enum VerifyCommand {
    /// Kernel L^p scaling exponents and divergence detection.
    Kernels(KernelArgs),
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[arg(long)]
    pub family: Family,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 3)]
    pub dim: usize,
    #[arg(long)]
    pub p: f64,
    /// Report path; defaults to <out>/kernel_report.csv.
    #[arg(long = "report")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TestPath {
    T,
    T2,
    Sin,
}

#[derive(Debug, Args)]
pub struct CalculusArgs {
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub dt: f64,
    #[arg(long = "t-end", default_value_t = 1.0)]
    pub t_end: f64,
    #[arg(long, value_enum, default_value = "sin")]
    pub path: TestPath,
    #[arg(long, value_enum, default_value = "standard")]
    pub exponent: ExponentArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExponentArg {
    Standard,
    AsWritten,
}

#[derive(Debug, Args)]
pub struct MlArgs {
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub beta: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub z: f64,
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    /// Closed-form fixed-point constants and admissible horizon.
    FixedPoint(FixedPointArgs),
}

#[derive(Debug, Args)]
pub struct FixedPointArgs {
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub gamma: f64,
    #[arg(long)]
    pub eps: f64,
    #[arg(long)]
    pub norm: f64,
    #[arg(long = "T")]
    pub horizon: f64,
    #[arg(long = "c-cal")]
    pub c_cal: Option<f64>,
    #[arg(long = "c-a", default_value_t = 1.0)]
    pub c_a: f64,
    /// Measure C_cal on a periodic grid with this many points per side.
    #[arg(long = "calibrate-n")]
    pub calibrate_n: Option<usize>,
    #[arg(long = "calibrate-dim", default_value_t = 2)]
    pub calibrate_dim: usize,
    /// Also report the non-regularized horizon T_0 with this time exponent.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long = "c0")]
    pub c0: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EpsilonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.1,0.05,0.025")]
    pub eps: Vec<f64>,
    /// Keep the configured mollifier width instead of tying it to ε.
    #[arg(long)]
    pub fixed_mollifier: bool,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(msg: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: msg.into(),
        }
    }
    fn check(msg: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CHECK,
            message: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Divergence { .. } | Error::Evaluation { .. } => EXIT_CHECK,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    #[default]
    None,
    Sqg,
    Custom,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    #[serde(default)]
    pub kind: DriftKind,
    #[serde(default)]
    pub symbols: Vec<SymbolEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    GaussianBump,
    RandomBandlimited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theta0Config {
    #[serde(default)]
    pub preset: Option<PresetName>,
    /// Grid container, relative to the config file.
    #[serde(default)]
    pub file: Option<PathBuf>,
    /// L² norm of the initial field; a file is rescaled only when given.
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub width: Option<f64>,
    #[serde(default)]
    pub band: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardSection {
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_true")]
    pub dealias: bool,
    #[serde(default)]
    pub linear: LinearTreatment,
}

impl Default for PicardSection {
    fn default() -> Self {
        PicardSection {
            max_iter: default_max_iter(),
            tol: default_tol(),
            dealias: true,
            linear: LinearTreatment::Absorbed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L1Section {
    #[serde(default)]
    pub restart_at: Vec<f64>,
    #[serde(default)]
    pub truncate_at: Option<f64>,
    #[serde(default = "default_true")]
    pub start_correction: bool,
    #[serde(default = "default_true")]
    pub dealias: bool,
}

impl Default for L1Section {
    fn default() -> Self {
        L1Section {
            restart_at: Vec::new(),
            truncate_at: None,
            start_correction: true,
            dealias: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Smoothness index of the Ẇ^{σ/2,p} monitor; defaults to γ/2.
    #[serde(default)]
    pub sigma: Option<f64>,
}

fn default_max_iter() -> usize {
    50
}
fn default_tol() -> f64 {
    1e-10
}
fn default_true() -> bool {
    true
}
fn default_box() -> f64 {
    2.0 * std::f64::consts::PI
}

/// Complete run description as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub moll_eps: f64,
    pub dim: usize,
    pub n: usize,
    #[serde(default = "default_box")]
    pub box_length: f64,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub drift: DriftConfig,
    pub theta0: Theta0Config,
    #[serde(default)]
    pub picard: PicardSection,
    #[serde(default)]
    pub l1: L1Section,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
}

/// Validated pieces of a run.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub order: FracOrder,
    pub grid: Grid,
    pub drift: DriftSpec,
    pub moll: Mollifier,
    pub theta0: SpectralField,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::config(format!("invalid config {}: {e}", path.display())))
    }

    /// Checks ranges and builds the run objects; `base` resolves relative files.
    pub fn setup(&self, base: &Path, seed_override: Option<u64>) -> CliResult<RunSetup> {
        let order = FracOrder::new(self.alpha, self.gamma, self.epsilon, self.moll_eps)?;
        if !(1..=3).contains(&self.dim) {
            return Err(Failure::config(format!(
                "simulation dimension must be 1, 2 or 3, got {}",
                self.dim
            )));
        }
        let grid = Grid::new(self.dim, self.n, self.box_length)?;
        let drift = match self.drift.kind {
            DriftKind::None => DriftSpec::None,
            DriftKind::Sqg => DriftSpec::Sqg,
            DriftKind::Custom => DriftSpec::Custom(CustomSymbol::new(self.dim, &self.drift.symbols)?),
        };
        drift.check_dim(self.dim)?;
        let moll = Mollifier::new(self.moll_eps)?;
        let theta0 = self.initial_field(grid, base, seed_override)?;
        Ok(RunSetup {
            order,
            grid,
            drift,
            moll,
            theta0,
        })
    }

    fn initial_field(&self, grid: Grid, base: &Path, seed_override: Option<u64>) -> CliResult<SpectralField> {
        let t = &self.theta0;
        match (t.preset, &t.file) {
            (Some(_), Some(_)) | (None, None) => Err(Failure::config("theta0 needs exactly one of `preset` or `file`")),
            (Some(p), None) => {
                let amp = t.amplitude.unwrap_or(1.0);
                Ok(match p {
                    PresetName::GaussianBump => gaussian_bump(grid, t.width.unwrap_or(0.1), amp)?,
                    PresetName::RandomBandlimited => {
                        let seed = seed_override.or(t.seed).unwrap_or(0);
                        random_bandlimited(grid, seed, t.band, amp)?
                    }
                })
            }
            (None, Some(f)) => {
                let path = if f.is_absolute() { f.clone() } else { base.join(f) };
                let (g, samples) = read_container(&path)?;
                if g != grid {
                    return Err(Failure::config(format!(
                        "initial-data grid {g:?} differs from the configured grid {grid:?}"
                    )));
                }
                let field = SpectralField::from_physical(grid, &samples)?;
                Ok(match t.amplitude {
                    Some(a) if field.l2_norm() > 0.0 => field.scale(a / field.l2_norm()),
                    _ => field,
                })
            }
        }
    }

    pub fn picard_config(&self) -> CliResult<PicardConfig> {
        let cfg = PicardConfig {
            t_end: self.t_end,
            dt: self.dt,
            max_iter: self.picard.max_iter,
            tol: self.picard.tol,
            dealias: self.picard.dealias,
            linear: self.picard.linear,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn march_config(&self) -> CliResult<MarchConfig> {
        let cfg = MarchConfig {
            t_end: self.t_end,
            dt: self.dt,
            dealias: self.l1.dealias,
            restart_at: self.l1.restart_at.clone(),
            truncate_at: self.l1.truncate_at,
            start_correction: self.l1.start_correction,
        };
        cfg.steps()?;
        Ok(cfg)
    }
}

struct Ctx {
    out: PathBuf,
    quiet: bool,
    seed: Option<u64>,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// Parses `argv` and runs the selected command; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.threads {
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let ctx = Ctx {
        out: cli.out.clone(),
        quiet: cli.quiet,
        seed: cli.seed,
    };
    match dispatch(&ctx, cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(ctx: &Ctx, cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Ml(a) => cmd_ml(a),
        Command::CalculusCheck(a) => cmd_calculus(ctx, a),
        Command::Verify {
            what: VerifyCommand::Kernels(a),
        } => cmd_kernels(ctx, a),
        Command::Report {
            what: ReportCommand::FixedPoint(a),
        } => cmd_fixed_point(ctx, a),
        Command::Simulate(a) => cmd_simulate(ctx, a),
        Command::EpsilonStudy(a) => cmd_epsilon(ctx, a),
    }
}

fn cmd_ml(a: MlArgs) -> CliResult<()> {
    let (v, method) = ml_eval_method(MLParams::new(a.alpha, a.beta)?, a.z)?;
    println!("{v:.10}");
    println!("value {v:.16e}");
    println!("method {}", method.name());
    Ok(())
}

fn cmd_calculus(ctx: &Ctx, a: CalculusArgs) -> CliResult<()> {
    if !(a.dt > 0.0 && a.t_end > a.dt) {
        return Err(Failure::config("calculus-check needs 0 < dt < t-end"));
    }
    let steps = (a.t_end / a.dt).round() as usize;
    let f: fn(f64) -> f64 = match a.path {
        TestPath::T => |t| t,
        TestPath::T2 => |t| t * t,
        TestPath::Sin => f64::sin,
    };
    let path = SampledPath::from_fn(a.dt, steps, f)?;
    let exponent = match a.exponent {
        ExponentArg::Standard => KernelExponent::Standard,
        ExponentArg::AsWritten => KernelExponent::AsWritten,
    };
    let cap = caputo_l1(&path, a.alpha)?;
    let rl = rl_regularized(&path, a.alpha)?;
    let inv = frac_integral(&cap, a.alpha, exponent)?;
    let mut csv = String::from("t,caputo_l1,rl_reg,inversion_residual\n");
    let mut worst: f64 = 0.0;
    for k in 0..=steps {
        let res = inv.values[k] - (path.values[k] - path.values[0]);
        worst = worst.max(res.abs());
        let _ = writeln!(
            csv,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            path.time(k),
            cap.values[k],
            rl.values[k],
            res
        );
    }
    let file = ctx.out.join("calculus_check.csv");
    emit_csv(&file, &csv, "t,caputo_l1,rl_reg,inversion_residual")?;
    println!("max inversion residual {worst:.16e}");
    ctx.note(format!("wrote {}", file.display()));
    Ok(())
}

fn cmd_kernels(ctx: &Ctx, a: KernelArgs) -> CliResult<()> {
    let k = KernelMultiplier::new(a.family, a.alpha, a.epsilon, a.gamma)?;
    ctx.note(format!(
        "verifying {} kernel bounds at dim {} p {}",
        a.family, a.dim, a.p
    ));
    let report = verify_bounds(&k, a.dim, a.p)?;
    let file = a.report.unwrap_or_else(|| ctx.out.join("kernel_report.csv"));
    let bytes = report.to_csv()?;
    let text = String::from_utf8(bytes).map_err(|e| Failure::config(e.to_string()))?;
    emit_csv(
        &file,
        &text,
        "bound_id,exponent_expected,exponent_fitted,rel_err,fitted_C,pass",
    )?;
    for r in &report.rows {
        println!(
            "{} expected {:.6} fitted {:.6} {}",
            r.bound_id,
            r.exponent_expected,
            r.exponent_fitted,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    if report.all_pass() {
        Ok(())
    } else {
        Err(Failure::check("kernel scaling check failed"))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FixedPointOutput {
    report: FixedPointReport,
    nonreg: Option<NonregHorizon>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NonregHorizon {
    sigma: f64,
    c0: f64,
    c_a: f64,
    norm: f64,
    t0: f64,
}

fn cmd_fixed_point(ctx: &Ctx, a: FixedPointArgs) -> CliResult<()> {
    let order = FracOrder::new(a.alpha, a.gamma, a.eps, 0.0)?;
    let c_cal = match (a.c_cal, a.calibrate_n) {
        (Some(c), _) => c,
        (None, Some(n)) => calibrate_c_cal(&Grid::new(a.calibrate_dim, n, default_box())?, &order, a.horizon)?,
        (None, None) => 1.0,
    };
    let report = fixed_point_report(&order, a.norm, a.horizon, c_cal, a.c_a)?;
    let nonreg = if a.sigma.is_some() || a.c0.is_some() {
        let fitted = if a.sigma.is_none() || a.c0.is_none() {
            Some(fit_nonreg_sigma(a.alpha, a.gamma)?)
        } else {
            None
        };
        let sigma = a.sigma.or(fitted.map(|f| f.0)).unwrap();
        let c0 = a.c0.or(fitted.map(|f| f.1)).unwrap();
        Some(NonregHorizon {
            sigma,
            c0,
            c_a: a.c_a,
            norm: a.norm,
            t0: nonreg_horizon(c0, a.c_a, sigma, a.norm)?,
        })
    } else {
        None
    };
    let out = FixedPointOutput { report, nonreg };
    let text = serde_json::to_string_pretty(&out).map_err(|e| Failure::config(e.to_string()))?;
    let file = ctx.out.join("fixed_point_report.json");
    emit_json::<FixedPointOutput>(&file, &text)?;
    println!("{text}");
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct RunSummary {
    solver: String,
    steps: usize,
    converged: bool,
    sweeps: usize,
    final_residual: Option<f64>,
    max_ratio: Option<f64>,
    max_cfl: f64,
    energy_min_residual_am1: f64,
    energy_inequality_holds: bool,
    warnings: Vec<String>,
}

fn cmd_simulate(ctx: &Ctx, a: SimulateArgs) -> CliResult<()> {
    let cfg = RunConfig::load(&a.config)?;
    let base = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let setup = cfg.setup(&base, ctx.seed)?;
    let out = &ctx.out;
    let (traj, summary_base) = match a.solver {
        SolverKind::Picard => {
            let pc = cfg.picard_config()?;
            let report = grid_fixed_point_report(&setup.theta0, &setup.order, &setup.drift, &setup.moll, &pc, true)?;
            let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::config(e.to_string()))?;
            emit_json::<FixedPointReport>(&out.join("fixed_point_report.json"), &text)?;
            if !report.all_hold() {
                ctx.note(format!("warning: {}", report.violations()));
            }
            ctx.note(format!("picard: {} steps, up to {} sweeps", pc.steps()?, pc.max_iter));
            let traj = picard_solve(&setup.theta0, &setup.order, &setup.drift, &setup.moll, &pc)?;
            let mut csv = String::from("sweep,residual,ratio\n");
            for (i, r) in traj.iter_residuals.iter().enumerate() {
                let ratio = if i > 0 {
                    format!("{:.16e}", r / traj.iter_residuals[i - 1])
                } else {
                    String::new()
                };
                let _ = writeln!(csv, "{},{r:.16e},{ratio}", i + 1);
            }
            emit_csv(&out.join("residuals.csv"), &csv, "sweep,residual,ratio")?;
            let ratios = traj.ratios();
            let summary = RunSummary {
                solver: "picard".into(),
                steps: pc.steps()?,
                converged: traj.converged,
                sweeps: traj.iter_residuals.len(),
                final_residual: traj.iter_residuals.last().copied(),
                max_ratio: ratios.iter().copied().reduce(f64::max),
                max_cfl: 0.0,
                energy_min_residual_am1: 0.0,
                energy_inequality_holds: true,
                warnings: traj.warnings.clone(),
            };
            (traj, summary)
        }
        SolverKind::L1 => {
            let mc = cfg.march_config()?;
            ctx.note(format!("l1 march: {} steps", mc.steps()?));
            let state = march(&setup.theta0, &setup.order, &setup.drift, &setup.moll, &mc)?;
            let traj = state.to_trajectory();
            let summary = RunSummary {
                solver: "l1".into(),
                steps: mc.steps()?,
                converged: true,
                sweeps: 0,
                final_residual: None,
                max_ratio: None,
                max_cfl: 0.0,
                energy_min_residual_am1: 0.0,
                energy_inequality_holds: true,
                warnings: Vec::new(),
            };
            (traj, summary)
        }
    };
    finish_run(ctx, &cfg, &setup, &traj, summary_base)
}

fn finish_run(
    ctx: &Ctx,
    cfg: &RunConfig,
    setup: &RunSetup,
    traj: &Trajectory,
    mut summary: RunSummary,
) -> CliResult<()> {
    let out = &ctx.out;
    let traj_path = out.join("trajectory.bin");
    traj.write_container(&traj_path)?;
    let bytes = std::fs::read(&traj_path)
        .map_err(|e| Failure::config(format!("cannot re-read {}: {e}", traj_path.display())))?;
    let (g, times, snaps) = decode_trajectory(&bytes)?;
    if g != setup.grid || times.len() != traj.states.len() || snaps.iter().any(|s| s.iter().any(|x| !x.is_finite())) {
        return Err(Failure::check("trajectory container failed validation"));
    }

    let ledger = EnergyLedger::from_states(&setup.order, cfg.dt, &traj.states)?;
    emit_csv(
        &out.join("energy.csv"),
        &ledger.to_csv(),
        "t,l2_sq,hgamma2_sq,D_exp_am1,D_exp_ma,residual_am1,residual_ma",
    )?;

    let sigma = cfg.diagnostics.sigma.unwrap_or(0.5 * cfg.gamma);
    let reg = regularity_monitor(traj, cfg.alpha, cfg.gamma, sigma)?;
    let text = serde_json::to_string_pretty(&reg).map_err(|e| Failure::config(e.to_string()))?;
    emit_json::<RegularityReport>(&out.join("regularity.json"), &text)?;

    summary.max_cfl = traj
        .states
        .iter()
        .map(|s| cfl_number(s, &setup.drift, &setup.moll, cfg.dt))
        .collect::<crate::Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    summary.energy_min_residual_am1 = ledger.min_residual_am1();
    summary.energy_inequality_holds = ledger.inequality_holds();
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Failure::config(e.to_string()))?;
    emit_json::<RunSummary>(&out.join("summary.json"), &text)?;
    ctx.note(format!("wrote run artifacts to {}", out.display()));

    let nonlinear = !setup.drift.is_none();
    if nonlinear && summary.converged && !summary.energy_inequality_holds {
        return Err(Failure::check(format!(
            "energy inequality violated: min residual {:.3e} against ‖θ0‖² = {:.3e}",
            summary.energy_min_residual_am1,
            ledger.l2_sq.first().copied().unwrap_or(0.0)
        )));
    }
    if !summary.converged {
        return Err(Failure::check(
            "picard iteration did not reach the tolerance within max_iter",
        ));
    }
    Ok(())
}

fn cmd_epsilon(ctx: &Ctx, a: EpsilonArgs) -> CliResult<()> {
    let cfg = RunConfig::load(&a.config)?;
    let base = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let setup = cfg.setup(&base, ctx.seed)?;
    let pc = cfg.picard_config()?;
    ctx.note(format!("epsilon study over {:?}", a.eps));
    let study = epsilon_limit_study(
        &setup.theta0,
        &setup.order,
        &setup.drift,
        &a.eps,
        !a.fixed_mollifier,
        &pc,
    )?;
    emit_csv(
        &ctx.out.join("epsilon_study.csv"),
        &study.to_csv(),
        "epsilon,gap_to_limit,gap_to_previous,order",
    )?;
    for r in &study.rows {
        println!("epsilon {:.6e} gap {:.6e}", r.epsilon, r.gap_to_limit);
    }
    if study.monotone {
        Ok(())
    } else {
        Err(Failure::check(
            "gaps to the epsilon = 0 solve are not monotone (under-resolution)",
        ))
    }
}

/// Writes atomically, then re-reads and checks header and numeric fields.
fn emit_csv(path: &Path, text: &str, header: &str) -> CliResult<()> {
    atomic_write(path, text.as_bytes())?;
    validate_csv(path, header)
}

pub fn validate_csv(path: &Path, header: &str) -> CliResult<()> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Failure::check(format!("{}: {e}", path.display())))?;
    let expected: Vec<&str> = header.split(',').collect();
    let got: Vec<String> = rdr
        .headers()
        .map_err(|e| Failure::check(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if got != expected {
        return Err(Failure::check(format!(
            "{}: header {got:?} differs from {expected:?}",
            path.display()
        )));
    }
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Failure::check(format!("{}: {e}", path.display())))?;
        for (field, name) in rec.iter().zip(&expected) {
            // columns named *_id carry labels
            let ok = name.ends_with("_id")
                || field.is_empty()
                || field.parse::<f64>().is_ok()
                || field == "true"
                || field == "false";
            if !ok {
                return Err(Failure::check(format!(
                    "{}: non-numeric field {field:?}",
                    path.display()
                )));
            }
        }
    }
    Ok(())
}

fn emit_json<T: DeserializeOwned>(path: &Path, text: &str) -> CliResult<()> {
    atomic_write(path, text.as_bytes())?;
    let back = std::fs::read_to_string(path).map_err(|e| Failure::check(format!("{}: {e}", path.display())))?;
    serde_json::from_str::<T>(&back)
        .map_err(|e| Failure::check(format!("{} failed its schema: {e}", path.display())))?;
    Ok(())
}
