//! The `mrw-spectra` command-line tool.
//!
//! Exit codes: 0 success, 2 usage, 3 partial convergence, 4 numerical failure.

pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::compare::{ks_distance, l1_histogram_distance};
use crate::density::{self, DensityCurve, PointDiagnostics, SquaredCdf};
use crate::error::{Error, Result};
use crate::mrm::{sample_returns, ModelParams};
use crate::seed::child_seed;
use crate::solver::{Acceleration, KernelRule, Solver, SolverConfig};
use crate::spectra::{self, BinSpec, SpectrumResult};
use crate::Complex64;

use config::{Settings, PLUMBING_KEYS, SIMULATE_KEYS, SOLVE_KEYS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Minimum fraction of converged spectral points for a successful solve.
pub const MIN_CONVERGED_FRACTION: f64 = 0.95;

#[derive(Debug, Parser)]
#[command(
    name = "mrw-spectra",
    version,
    about = "Spectra of multifractal random walk covariance matrices",
    args_override_self = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate return matrices and record the spectra of X X^t.
    Simulate(SimulateArgs),
    /// Solve the limiting equations and recover the eigenvalue density.
    Solve(SolveArgs),
    /// Compare simulated spectra with solved densities.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Intermittency coefficient.
    #[arg(long)]
    pub gamma2: Option<f64>,
    /// Integral scale as a fraction of the observation window.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Aspect ratio N/T.
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulate: number of matrices. Solve: measure realizations per expectation.
    #[arg(long)]
    pub ensemble: Option<usize>,
    /// Caps the worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// One of fig2a, fig2b, fig3, fig4.
    #[arg(long)]
    pub preset: Option<String>,
    /// File of `key = value` lines applied after the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of assets (rows).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Log-spaced histogram bins from 1e-2 to the largest eigenvalue.
    #[arg(long)]
    pub log_bins: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Accepted for symmetry with `simulate`; the limit does not depend on it.
    #[arg(long)]
    pub n: Option<usize>,
    /// Solver grid points on [0, 1].
    #[arg(long)]
    pub grid: Option<usize>,
    /// Fine grid for measure simulation, a multiple of --grid.
    #[arg(long)]
    pub sim_grid: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Distance of the spectral parameter below the real axis.
    #[arg(long)]
    pub eps_im: Option<f64>,
    /// Extrapolate in eps_im from eps and 2 eps.
    #[arg(long)]
    pub richardson: bool,
    /// Weight discretisation: average (sub-cell averaged tilt) or centre.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Use the raw ensemble instead of the moment-matched one.
    #[arg(long)]
    pub no_moment_match: bool,
    /// anderson, relax or none.
    #[arg(long)]
    pub accel: Option<String>,
    /// Relaxation factor in (0, 1] for --accel relax.
    #[arg(long)]
    pub relax: Option<f64>,
    /// Number of eigenvalue grid points.
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    /// Also write the solved profiles K to k/.
    #[arg(long)]
    pub dump_k: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    pub sim: Option<PathBuf>,
    /// Directories written by `solve`; repeatable.
    #[arg(long = "solve")]
    pub solve: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub lo: f64,
    #[arg(long, default_value_t = 10.0)]
    pub hi: f64,
    /// Histogram bins on the window for the L1 distance.
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Tail thresholds; repeatable.
    #[arg(long = "tail", default_values_t = vec![4.0, 8.0])]
    pub tail: Vec<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_) | Error::Parse(_) | Error::Incompatible(_) | Error::Empty(_) => EXIT_USAGE,
        _ => EXIT_NUMERICAL,
    }
}

pub fn execute(cli: Cli) -> Result<i32> {
    let threads = match &cli.command {
        Command::Simulate(a) => a.common.threads,
        Command::Solve(a) => a.common.threads,
        Command::Compare(_) => None,
    };
    match threads {
        Some(0) => Err(Error::InvalidParameter("threads must be positive".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?
            .install(|| dispatch(cli)),
        None => dispatch(cli),
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate(a) => {
            let mut flags = common_flags(&a.common);
            flags.set_opt("n", a.n);
            flags.set_opt("bins", a.bins);
            if a.log_bins {
                flags.set("log_bins", true);
            }
            for_each_run(&a.common, simulate_defaults(), flags, |s, dir| cmd_simulate(s, dir).map(|_| EXIT_OK))
        }
        Command::Solve(a) => {
            let mut flags = common_flags(&a.common);
            flags.set_opt("grid", a.grid);
            flags.set_opt("sim_grid", a.sim_grid);
            flags.set_opt("tol", a.tol);
            flags.set_opt("max_iter", a.max_iter);
            flags.set_opt("eps_im", a.eps_im);
            flags.set_opt("kernel", a.kernel.as_ref());
            if a.no_moment_match {
                flags.set("moment_match", false);
            }
            flags.set_opt("accel", a.accel.as_ref());
            flags.set_opt("relax", a.relax);
            flags.set_opt("points", a.points);
            flags.set_opt("lambda_min", a.lambda_min);
            flags.set_opt("lambda_max", a.lambda_max);
            if a.richardson {
                flags.set("richardson", true);
            }
            if a.dump_k {
                flags.set("dump_k", true);
            }
            for_each_run(&a.common, solve_defaults(), flags, |s, dir| {
                cmd_solve(s, dir).map(|r| r.exit_code())
            })
        }
        Command::Compare(a) => cmd_compare(&a).map(|_| EXIT_OK),
    }
}

fn common_flags(c: &CommonArgs) -> Settings {
    let mut s = Settings::default();
    s.set_opt("gamma2", c.gamma2);
    s.set_opt("tau", c.tau);
    s.set_opt("q", c.q);
    s.set_opt("seed", c.seed);
    s.set_opt("ensemble", c.ensemble);
    s.set_opt("threads", c.threads);
    s
}

pub fn simulate_defaults() -> Settings {
    Settings::from_pairs(&[
        ("gamma2", "0.25"),
        ("tau", "0.25"),
        ("q", "1"),
        ("ensemble", "8"),
        ("seed", "0"),
        ("bins", "100"),
        ("log_bins", "false"),
    ])
}

pub fn solve_defaults() -> Settings {
    Settings::from_pairs(&[
        ("gamma2", "0.25"),
        ("tau", "0.25"),
        ("q", "1"),
        ("grid", "256"),
        ("sim_grid", "4096"),
        ("ensemble", "2000"),
        ("tol", "0.000001"),
        ("max_iter", "500"),
        ("eps_im", "0.01"),
        ("richardson", "false"),
        ("kernel", "average"),
        ("moment_match", "true"),
        ("accel", "anderson"),
        ("relax", "0.5"),
        ("anderson_depth", "6"),
        ("points", "200"),
        ("lambda_min", "0.01"),
        ("lambda_max", "20"),
        ("dump_k", "false"),
        ("seed", "0"),
    ])
}

/// Layers defaults < preset < config file < flags and runs once, or once
/// per sub-run of a sweep preset (each in its own subdirectory).
fn for_each_run<F>(common: &CommonArgs, defaults: Settings, flags: Settings, run: F) -> Result<i32>
where
    F: Fn(&Settings, &Path) -> Result<i32>,
{
    let mut base = defaults;
    let preset = common.preset.as_deref().map(config::preset).transpose()?;
    if let Some(p) = &preset {
        base.merge(&p.base);
    }
    if let Some(path) = &common.config {
        base.merge(&Settings::read(path)?);
    }
    base.merge(&flags);
    let out_dir = common.out_dir.clone();
    let runs = preset.map(|p| p.runs).unwrap_or_default();
    if runs.is_empty() {
        base.set("out_dir", out_dir.display());
        return run(&base, &out_dir);
    }
    let mut worst = EXIT_OK;
    for (name, over) in runs {
        let mut s = base.clone();
        s.merge(&over);
        let dir = out_dir.join(&name);
        s.set("out_dir", dir.display());
        log::info!("sub-run {name}");
        worst = worst.max(run(&s, &dir)?);
    }
    Ok(worst)
}

fn header(s: &Settings, keys: &[&str]) -> String {
    let numeric: Vec<&str> = keys.iter().copied().filter(|k| !PLUMBING_KEYS.contains(k)).collect();
    format!("# mrw-spectra {}\n{}", env!("CARGO_PKG_VERSION"), s.render(&numeric, "# "))
}

fn write_manifest(dir: &Path, s: &Settings, keys: &[&str]) -> Result<()> {
    let text = format!("# effective parameters; rerun with --config {}\n{}", "manifest.txt", s.render(keys, ""));
    std::fs::write(dir.join("manifest.txt"), text)?;
    Ok(())
}

fn model_from(s: &Settings, n: usize) -> Result<ModelParams> {
    ModelParams::new(s.require("gamma2")?, s.require("tau")?, s.require("q")?, n)
}

/// Summary of a simulation run.
#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub spectra: Vec<SpectrumResult>,
}

pub fn cmd_simulate(s: &Settings, dir: &Path) -> Result<SimulateOutput> {
    let n: usize = s.require("n")?;
    let model = model_from(s, n)?;
    let count: usize = s.require("ensemble")?;
    let seed: u64 = s.require("seed")?;
    let bins: usize = s.require("bins")?;
    let log_bins: bool = s.require("log_bins")?;
    if count == 0 {
        return Err(Error::InvalidParameter("ensemble must be positive".into()));
    }

    let spectra = (0..count as u64)
        .into_par_iter()
        .map(|k| spectra::covariance_spectrum(&sample_returns(&model, child_seed(seed, k))?))
        .collect::<Result<Vec<_>>>()?;
    let pooled = spectra::pooled(&spectra);
    let top = pooled.iter().copied().fold(0.0, f64::max);
    let spec = if log_bins && top > 1e-2 {
        BinSpec::Log { bins, lo: 1e-2, hi: top }
    } else {
        BinSpec::Auto { bins }
    };
    let hist = spectra::esd_histogram(&pooled, spec)?;

    std::fs::create_dir_all(dir)?;
    let head = header(s, SIMULATE_KEYS);
    spectra::write_eigenvalues_csv(&dir.join("eigenvalues.csv"), &head, &spectra)?;
    spectra::write_histogram_csv(&dir.join("histogram.csv"), &head, &hist)?;
    write_manifest(dir, s, SIMULATE_KEYS)?;

    let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
    println!(
        "simulate: {count} matrices {n}x{}, {} eigenvalues, mean {mean:.6}, max {top:.6} -> {}",
        model.t_steps,
        pooled.len(),
        dir.display()
    );
    Ok(SimulateOutput { spectra })
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub gamma2: f64,
    pub tau: f64,
    pub q: f64,
    pub eps_im: f64,
    pub richardson: bool,
    pub points: usize,
    pub converged_fraction: f64,
    /// `2 * integral of upsilon` over the solved window.
    pub total_mass: f64,
    pub clamped_max: f64,
    pub tail_mass_beyond_4: Option<f64>,
    pub contraction_threshold: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub summary: SolveSummary,
    pub diagnostics: Vec<PointDiagnostics>,
    #[serde(skip)]
    pub upsilon: DensityCurve,
    #[serde(skip)]
    pub density: DensityCurve,
}

impl SolveReport {
    pub fn exit_code(&self) -> i32 {
        if self.summary.converged_fraction >= MIN_CONVERGED_FRACTION {
            EXIT_OK
        } else {
            EXIT_PARTIAL
        }
    }
}

pub fn solver_config(s: &Settings) -> Result<SolverConfig> {
    let mut cfg = SolverConfig::new(Complex64::new(0.0, -1.0))
        .with_grids(s.require("grid")?, s.require("sim_grid")?)?;
    cfg.ensemble_size = s.require("ensemble")?;
    cfg.tol = s.require("tol")?;
    cfg.max_iter = s.require("max_iter")?;
    cfg.master_seed = s.require("seed")?;
    cfg.kernel = match s.require::<String>("kernel")?.as_str() {
        "average" => KernelRule::CellAverage,
        "centre" => KernelRule::Centre,
        other => return Err(Error::InvalidParameter(format!("unknown kernel rule '{other}'"))),
    };
    cfg.moment_match = s.require("moment_match")?;
    cfg.acceleration = match s.require::<String>("accel")?.as_str() {
        "anderson" => Acceleration::Anderson { depth: s.require("anderson_depth")? },
        "relax" => Acceleration::Relaxation(s.require("relax")?),
        "none" => Acceleration::None,
        other => return Err(Error::InvalidParameter(format!("unknown acceleration '{other}'"))),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_solve(s: &Settings, dir: &Path) -> Result<SolveReport> {
    let cfg = solver_config(s)?;
    let model = model_from(s, 1)?;
    let eps_im: f64 = s.require("eps_im")?;
    let richardson: bool = s.require("richardson")?;
    let points: usize = s.require("points")?;
    let (lo, hi): (f64, f64) = (s.require("lambda_min")?, s.require("lambda_max")?);
    if !(lo > 0.0 && hi > lo) || points < 2 {
        return Err(Error::InvalidParameter(format!("bad eigenvalue grid [{lo}, {hi}] with {points} points")));
    }

    let solver = Solver::mrw(&cfg, &model)?;
    let xs: Vec<f64> = density::log_grid(lo, hi, points).into_iter().map(f64::sqrt).collect();
    let (upsilon, diagnostics) = density::upsilon_from_solver(&solver, &xs, eps_im, richardson)?;
    let density = density::push_forward_square(&upsilon)?;
    let converged = diagnostics.iter().filter(|d| d.k.converged).count();
    let cdf = SquaredCdf::from_upsilon(&upsilon).ok();
    let summary = SolveSummary {
        gamma2: model.gamma2,
        tau: model.tau,
        q: model.q,
        eps_im,
        richardson,
        points,
        converged_fraction: converged as f64 / points as f64,
        total_mass: cdf.as_ref().map_or(f64::NAN, SquaredCdf::total),
        clamped_max: upsilon.clamped_max,
        tail_mass_beyond_4: density::tail_mass_beyond(&upsilon, 4.0).ok(),
        contraction_threshold: solver.op.contraction_threshold(),
        warning: model.warning(),
    };
    let report = SolveReport { summary, diagnostics, upsilon, density };

    std::fs::create_dir_all(dir)?;
    let head = header(s, SOLVE_KEYS);
    density::write_density_csv(&dir.join("density.csv"), &head, "lambda", &report.density)?;
    density::write_density_csv(&dir.join("upsilon.csv"), &head, "x", &report.upsilon)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Numerical(e.to_string()))?;
    std::fs::write(dir.join("diagnostics.json"), json + "\n")?;
    if s.require::<bool>("dump_k")? {
        write_k_profiles(&dir.join("k"), &head, &report.diagnostics)?;
    }
    write_manifest(dir, s, SOLVE_KEYS)?;

    let sm = &report.summary;
    println!(
        "solve: gamma2 {} tau {} q {}: {converged}/{points} points converged, mass {:.4}, tail>4 {} -> {}",
        sm.gamma2,
        sm.tau,
        sm.q,
        sm.total_mass,
        sm.tail_mass_beyond_4.map_or("n/a".to_string(), |t| format!("{t:.5}")),
        dir.display()
    );
    if report.exit_code() != EXIT_OK {
        eprintln!(
            "warning: only {:.1}% of points converged (need {:.0}%)",
            100.0 * sm.converged_fraction,
            100.0 * MIN_CONVERGED_FRACTION
        );
    }
    Ok(report)
}

fn write_k_profiles(dir: &Path, head: &str, diags: &[PointDiagnostics]) -> Result<()> {
    use std::io::Write;
    std::fs::create_dir_all(dir)?;
    for (i, d) in diags.iter().enumerate() {
        let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("k_{i:04}.csv")))?);
        out.write_all(head.as_bytes())?;
        writeln!(out, "# z = {} {}", d.k.z.re, d.k.z.im)?;
        writeln!(out, "x,re_k,im_k")?;
        for (x, v) in d.k.grid.centers().iter().zip(&d.k.values) {
            writeln!(out, "{x},{},{}", v.re, v.im)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct TailEntry {
    pub threshold: f64,
    pub empirical: Option<f64>,
    pub theoretical: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareEntry {
    pub solve: String,
    pub ks: Option<f64>,
    pub l1: Option<f64>,
    pub tails: Vec<TailEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub window: [f64; 2],
    pub sim: Option<String>,
    pub eigenvalues: usize,
    pub entries: Vec<CompareEntry>,
}

pub fn cmd_compare(a: &CompareArgs) -> Result<CompareReport> {
    if a.solve.is_empty() {
        return Err(Error::InvalidParameter("compare needs at least one --solve directory".into()));
    }
    if !(a.lo >= 0.0 && a.hi > a.lo) {
        return Err(Error::Incompatible(format!("empty comparison window [{}, {}]", a.lo, a.hi)));
    }
    let sample = a
        .sim
        .as_ref()
        .map(|d| spectra::read_eigenvalues_csv(&d.join("eigenvalues.csv")).map(|v| v.concat()))
        .transpose()?;
    let hist = sample
        .as_ref()
        .map(|v| spectra::esd_histogram(v, BinSpec::Linear { bins: a.bins, lo: a.lo, hi: a.hi }))
        .transpose()?;

    let mut entries = Vec::new();
    for dir in &a.solve {
        let mut ups = density::read_density_csv(&dir.join("upsilon.csv"))?;
        if ups.missing_count() > 0 {
            log::warn!("{}: {} unconverged points bridged linearly in the CDF", dir.display(), ups.missing_count());
            ups = without_missing(ups);
        }
        let cdf = SquaredCdf::from_upsilon(&ups)?;
        let top = a.tail.iter().copied().fold(a.hi, f64::max);
        if top > cdf.max_lambda() * (1.0 + 1e-12) {
            return Err(Error::Incompatible(format!(
                "{} covers eigenvalues up to {}, window needs {top}",
                dir.display(),
                cdf.max_lambda()
            )));
        }
        let f = |l: f64| cdf.eval(l);
        let ks = sample.as_ref().map(|v| ks_distance(v, f, a.lo, a.hi)).transpose()?;
        let l1 = hist.as_ref().map(|h| l1_histogram_distance(h, f));
        let tails = a
            .tail
            .iter()
            .map(|&t| TailEntry {
                threshold: t,
                empirical: sample.as_ref().map(|v| v.iter().filter(|&&x| x > t).count() as f64 / v.len() as f64),
                theoretical: cdf.tail(t),
            })
            .collect();
        entries.push(CompareEntry { solve: dir.display().to_string(), ks, l1, tails });
    }
    let report = CompareReport {
        window: [a.lo, a.hi],
        sim: a.sim.as_ref().map(|d| d.display().to_string()),
        eigenvalues: sample.as_ref().map_or(0, Vec::len),
        entries,
    };

    print!("{}", render_compare(&report));
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Numerical(e.to_string()))?;
        std::fs::write(dir.join("compare.json"), json + "\n")?;
        std::fs::write(dir.join("compare.txt"), render_compare(&report))?;
    }
    Ok(report)
}

fn without_missing(c: DensityCurve) -> DensityCurve {
    let keep: Vec<usize> = (0..c.x_points.len()).filter(|&i| !c.missing[i]).collect();
    DensityCurve {
        x_points: keep.iter().map(|&i| c.x_points[i]).collect(),
        values: keep.iter().map(|&i| c.values[i]).collect(),
        missing: vec![false; keep.len()],
        ..c
    }
}

fn render_compare(r: &CompareReport) -> String {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.5}"));
    let mut out = format!("window [{}, {}]", r.window[0], r.window[1]);
    if let Some(sim) = &r.sim {
        out += &format!(", {} eigenvalues from {sim}", r.eigenvalues);
    }
    out.push('\n');
    for e in &r.entries {
        out += &format!("{}\n  ks {}  l1 {}\n", e.solve, opt(e.ks), opt(e.l1));
        for t in &e.tails {
            out += &format!(
                "  mass beyond {:>6}: empirical {}  theoretical {:.5}\n",
                t.threshold,
                opt(t.empirical),
                t.theoretical
            );
        }
    }
    out
}
