//! Fixed-point solver for the limiting resolvent profile `K_z` and the
//! Stieltjes transform `mu2_z`.
//!
//! The operator
//!
//! ```text
//! T g(x) = 1 / (z - q E[(z - \int w(t, x) g(t) M(dt))^{-1}])
//! ```
//!
//! is discretised on a uniform grid of cell centres. The expectation runs
//! over a fixed ensemble of measure realizations drawn once per solver, so
//! `T` is a deterministic map and Picard iterates of it have a genuine fixed
//! point. `w` is the power-law weight `(tau/|t - x|)_+^gamma2` for the
//! multifractal walk and `exp(4 k(t - x))` for the lognormal walk.
//!
//! By default `w` between two cells is the tilt of the simulated log field
//! averaged over their fine sub-cells, and the ensemble is rescaled so that
//! its mean mass in every cell is exact. With both, the discrete system
//! satisfies the size-biasing identity behind `\int K = q mu2 + (1 - q)/z`
//! up to Monte-Carlo error.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::field::{ln_plus_kernel, log_field_covariance, Grid};
use crate::mrm::{LognormalParams, ModelParams, MrmSample, MrmSampler};
use crate::seed::{stream_rng, Domain};

/// Realizations per work unit of the ensemble average. Fixed so that the
/// floating-point reduction order never depends on the thread count.
const CHUNK: usize = 64;

/// Strategy applied on top of the plain Picard map.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum Acceleration {
    /// Plain Picard iteration `g <- T g`.
    None,
    /// `g <- (1 - a) g + a T g` with `a` in `(0, 1]`.
    Relaxation(f64),
    /// Anderson mixing over the last `depth` iterates, falling back to a
    /// plain step whenever the mixed iterate leaves the admissible set.
    Anderson { depth: usize },
}

/// How the weight `w(t, x)` between two solver cells is discretised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum KernelRule {
    /// Weight at the cell centres, with lags below `eta_k` evaluated at `eta_k`.
    Centre,
    /// Exact tilt of the simulated field averaged over pairs of fine sub-cells.
    CellAverage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Spectral parameter; only used by [`solve_k`].
    pub z: Complex64,
    pub k_grid: Grid,
    /// Grid on which each measure realization is simulated before being
    /// summed onto `k_grid`.
    pub sim_grid: Grid,
    pub ensemble_size: usize,
    /// Lags shorter than this use the weight at `eta_k` ([`KernelRule::Centre`] only).
    pub eta_k: f64,
    pub kernel: KernelRule,
    /// Rescale the ensemble so that every cell has mean mass equal to its length.
    pub moment_match: bool,
    pub tol: f64,
    pub max_iter: usize,
    pub master_seed: u64,
    pub acceleration: Acceleration,
}

impl SolverConfig {
    pub const DEFAULT_K_GRID: usize = 256;
    pub const DEFAULT_SIM_GRID: usize = 4096;
    pub const DEFAULT_ENSEMBLE: usize = 2000;

    pub fn new(z: Complex64) -> Self {
        let k_grid = Grid::new(Self::DEFAULT_K_GRID).expect("static grid");
        Self {
            z,
            k_grid,
            sim_grid: Grid::new(Self::DEFAULT_SIM_GRID).expect("static grid"),
            ensemble_size: Self::DEFAULT_ENSEMBLE,
            eta_k: k_grid.spacing(),
            kernel: KernelRule::CellAverage,
            moment_match: true,
            tol: 1e-6,
            max_iter: 500,
            master_seed: 0,
            acceleration: Acceleration::Anderson { depth: 6 },
        }
    }

    /// Replaces both grids; `eta_k` follows the new solver grid spacing.
    pub fn with_grids(mut self, k_points: usize, sim_points: usize) -> Result<Self> {
        self.k_grid = Grid::new(k_points)?;
        self.sim_grid = Grid::new(sim_points)?;
        self.eta_k = self.k_grid.spacing();
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return invalid(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 {
            return invalid("max_iter must be positive");
        }
        if self.ensemble_size == 0 {
            return invalid("ensemble_size must be positive");
        }
        if !(self.eta_k > 0.0) {
            return invalid(format!("eta_k must be positive, got {}", self.eta_k));
        }
        let (fine, coarse) = (self.sim_grid.n_points(), self.k_grid.n_points());
        if fine < coarse || fine % coarse != 0 {
            return invalid(format!("simulation grid {fine} must be a multiple of the solver grid {coarse}"));
        }
        match self.acceleration {
            Acceleration::Relaxation(a) if !(a > 0.0 && a <= 1.0) => {
                invalid(format!("relaxation factor must lie in (0, 1], got {a}"))
            }
            Acceleration::Anderson { depth: 0 } => invalid("Anderson depth must be positive"),
            _ => Ok(()),
        }
    }
}

fn check_z(z: Complex64) -> Result<()> {
    if !(z.im != 0.0 && z.re.is_finite() && z.im.is_finite()) {
        return invalid(format!("spectral parameter must be finite with Im z != 0, got {z}"));
    }
    Ok(())
}

/// A fixed ensemble of measure realizations aggregated onto the solver grid.
///
/// Row `r` of `masses` holds realization `r`. When every realization is the
/// same (Lebesgue measure) the ensemble is stored as a single row.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub grid: Grid,
    pub masses: DMatrix<f64>,
    pub clipped_fraction: f64,
}

impl Ensemble {
    pub fn from_samples(grid: Grid, samples: &[MrmSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("ensemble needs at least one realization"));
        }
        let rows: Vec<MrmSample> = samples
            .iter()
            .map(|s| if s.grid == grid { Ok(s.clone()) } else { s.aggregate(grid) })
            .collect::<Result<_>>()?;
        let clipped_fraction = rows.iter().map(|s| s.diagnostics.clipped_fraction).fold(0.0, f64::max);
        let all_equal = rows.iter().all(|s| s.masses == rows[0].masses);
        let used = if all_equal { &rows[..1] } else { &rows[..] };
        let n = grid.n_points();
        let masses = DMatrix::from_fn(used.len(), n, |r, t| used[r].masses[t]);
        Ok(Self { grid, masses, clipped_fraction })
    }

    /// Lognormal multifractal measure realizations, stream `(seed, domain, r)`.
    pub fn mrm(model: &ModelParams, config: &SolverConfig, seed: u64, domain: Domain) -> Result<Self> {
        let sampler = MrmSampler::new(config.sim_grid, model.gamma2, model.tau)?;
        let count = if model.gamma2 == 0.0 { 1 } else { config.ensemble_size };
        let samples: Vec<MrmSample> = (0..count)
            .into_par_iter()
            .map(|r| {
                sampler
                    .sample(&mut stream_rng(seed, domain, r as u64))
                    .aggregate(config.k_grid)
            })
            .collect::<Result<_>>()?;
        Self::from_samples(config.k_grid, &samples)
    }

    /// Realizations of `exp(2 W(t)) dt` with `W` of mean `m = -k(0)` and covariance `k`.
    pub fn lognormal(lp: &LognormalParams, config: &SolverConfig, seed: u64, domain: Domain) -> Result<Self> {
        let grid = config.sim_grid;
        let sampler = lp.field_sampler(&grid)?;
        let h = grid.spacing();
        let m = lp.mean_shift;
        let clipped = sampler.diagnostics().clipped_fraction;
        let count = if lp.kernel.is_zero() { 1 } else { config.ensemble_size };
        let samples: Vec<MrmSample> = (0..count)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream_rng(seed, domain, r as u64);
                let masses = sampler
                    .sample(&mut rng)
                    .into_iter()
                    .map(|w| h * (2.0 * (m + w)).exp())
                    .collect();
                let diagnostics = crate::field::EmbeddingDiagnostics {
                    clipped_fraction: clipped,
                    ..sampler.diagnostics()
                };
                MrmSample { grid, masses, diagnostics }.aggregate(config.k_grid)
            })
            .collect::<Result<_>>()?;
        Self::from_samples(config.k_grid, &samples)
    }

    /// Rescales every cell so that its ensemble mean is exactly the cell length.
    ///
    /// The first-moment identity `E[M(dx)] = dx` is what the size-biased form
    /// of the operator relies on; matching it removes the leading Monte-Carlo
    /// error of a finite ensemble.
    pub fn moment_matched(mut self) -> Self {
        let h = self.grid.spacing();
        for mut col in self.masses.column_iter_mut() {
            let mean = col.mean();
            if mean > 0.0 {
                col *= h / mean;
            }
        }
        self
    }

    /// Number of stored (distinct) realizations.
    pub fn len(&self) -> usize {
        self.masses.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.nrows() == 0
    }
}

/// The discretised operator `T` for one model and one ensemble.
#[derive(Debug, Clone)]
pub struct FixedPointOperator {
    /// Symmetric `n x n` matrix of weights `w(t, x)`.
    pub weights: DMatrix<f64>,
    pub ensemble: Ensemble,
    pub q: f64,
}

impl FixedPointOperator {
    pub fn new(weights: DMatrix<f64>, ensemble: Ensemble, q: f64) -> Result<Self> {
        let n = ensemble.grid.n_points();
        if weights.shape() != (n, n) {
            return Err(Error::Incompatible(format!(
                "weight matrix {:?} does not match grid of {n} points",
                weights.shape()
            )));
        }
        if !(q > 0.0 && q <= 1.0) {
            return invalid(format!("q must lie in (0, 1], got {q}"));
        }
        if ensemble.is_empty() {
            return Err(Error::Empty("ensemble"));
        }
        Ok(Self { weights, ensemble, q })
    }

    /// Power-law weights `max(tau / max(|t - x|, eta_k), 1)^gamma2` between cell centres.
    pub fn power_law_weights(grid: Grid, gamma2: f64, tau: f64, eta_k: f64) -> DMatrix<f64> {
        let h = grid.spacing();
        let n = grid.n_points();
        let by_lag: Vec<f64> = (0..n).map(|k| ln_plus_kernel(k as f64 * h, gamma2, tau, eta_k)).collect();
        DMatrix::from_fn(n, n, |i, j| by_lag[i.abs_diff(j)])
    }

    /// Tilt `exp(Cov(omega(u), omega(s)))` of the multifractal measure simulated
    /// on `fine`, averaged over every pair of fine sub-cells of two `coarse` cells.
    ///
    /// This is the mean factor by which the simulated measure is reweighted
    /// when it is size-biased at a point of the other cell.
    pub fn cell_averaged_weights(coarse: Grid, fine: Grid, gamma2: f64, tau: f64) -> Result<DMatrix<f64>> {
        let hf = fine.spacing();
        averaged_by_lag(coarse, fine, |lag| log_field_covariance(lag, gamma2, tau, hf).exp())
    }

    /// Lognormal counterpart of [`Self::cell_averaged_weights`], averaging `exp(4 k)`.
    pub fn lognormal_cell_averaged_weights(coarse: Grid, fine: Grid, lp: &LognormalParams) -> Result<DMatrix<f64>> {
        averaged_by_lag(coarse, fine, |lag| (4.0 * lp.kernel.eval(lag)).exp())
    }

    /// Weights `exp(4 k(t - x))` of the lognormal walk.
    pub fn lognormal_weights(grid: Grid, lp: &LognormalParams) -> DMatrix<f64> {
        let h = grid.spacing();
        let n = grid.n_points();
        let by_lag: Vec<f64> = (0..n).map(|k| (4.0 * lp.kernel.eval(k as f64 * h)).exp()).collect();
        DMatrix::from_fn(n, n, |i, j| by_lag[i.abs_diff(j)])
    }

    pub fn grid(&self) -> Grid {
        self.ensemble.grid
    }

    /// `E[(z - \int w(t, x) g(t) M(dt))^{-1}]` for every grid point `x`.
    pub fn inner_expectation(&self, g: &[Complex64], z: Complex64) -> Vec<Complex64> {
        let n = self.grid().n_points();
        assert_eq!(g.len(), n, "grid function has wrong length");
        // columns [0, n) carry Re, [n, 2n) carry Im of w(t, x) g(t)
        let mut a = DMatrix::<f64>::zeros(n, 2 * n);
        for x in 0..n {
            for t in 0..n {
                let w = self.weights[(t, x)];
                a[(t, x)] = w * g[t].re;
                a[(t, n + x)] = w * g[t].im;
            }
        }
        let rows = self.ensemble.len();
        let chunks: Vec<(usize, usize)> = (0..rows)
            .step_by(CHUNK)
            .map(|s| (s, CHUNK.min(rows - s)))
            .collect();
        let partials: Vec<Vec<Complex64>> = chunks
            .par_iter()
            .map(|&(start, len)| {
                let s = self.ensemble.masses.rows(start, len) * &a;
                let mut acc = vec![Complex64::new(0.0, 0.0); n];
                for (x, slot) in acc.iter_mut().enumerate() {
                    for r in 0..len {
                        *slot += (z - Complex64::new(s[(r, x)], s[(r, n + x)])).inv();
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![Complex64::new(0.0, 0.0); n];
        for p in &partials {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        let inv = 1.0 / rows as f64;
        total.iter_mut().for_each(|v| *v *= inv);
        total
    }

    /// One application of `T`.
    pub fn apply(&self, g: &[Complex64], z: Complex64) -> Vec<Complex64> {
        self.inner_expectation(g, z)
            .into_iter()
            .map(|e| (z - self.q * e).inv())
            .collect()
    }

    /// `max_x E[\int w(t, x) M(dt)]`, the constant in the Lipschitz bound of `T`.
    pub fn weight_mass(&self) -> f64 {
        let mean_mass: DVector<f64> = self.ensemble.masses.row_mean().transpose();
        let per_x = &self.weights * mean_mass;
        per_x.iter().copied().fold(0.0, f64::max)
    }

    /// Lipschitz bound `q C / |Im z|^4` of `T` in the sup norm.
    pub fn contraction_bound(&self, z: Complex64) -> f64 {
        self.q * self.weight_mass() / z.im.powi(4)
    }

    /// `|Im z|` above which `T` is guaranteed to contract.
    pub fn contraction_threshold(&self) -> f64 {
        (self.q * self.weight_mass()).powf(0.25)
    }
}

/// One Picard step, `T g`.
pub fn picard_step(op: &FixedPointOperator, g: &[Complex64], z: Complex64) -> Vec<Complex64> {
    op.apply(g, z)
}

/// `g` lies in the set preserved by `T`: `|g| <= 1/|Im z|` and `Im z Im g <= 0`.
pub fn is_admissible(g: &[Complex64], z: Complex64) -> bool {
    let bound = 1.0 / z.im.abs();
    g.iter().all(|v| v.norm() <= bound * (1.0 + 1e-12) && z.im * v.im <= 0.0)
}

/// Converged (or last) profile `K_z` on the solver grid.
#[derive(Debug, Clone, serde::Serialize)]
pub struct KFunction {
    #[serde(serialize_with = "ser_complex")]
    pub z: Complex64,
    #[serde(skip)]
    pub grid: Grid,
    #[serde(skip)]
    pub values: Vec<Complex64>,
    #[serde(serialize_with = "ser_complex")]
    pub mu2: Complex64,
    pub iterations: usize,
    pub residual: f64,
    #[serde(skip)]
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub clipped_embedding_mass: f64,
}

fn ser_complex<S: serde::Serializer>(c: &Complex64, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeTuple;
    let mut t = s.serialize_tuple(2)?;
    t.serialize_element(&c.re)?;
    t.serialize_element(&c.im)?;
    t.end()
}

/// `mu2_z` from `\int K_z = q mu2_z + (1 - q)/z`, with the integral by the midpoint rule.
pub fn mu2_from_k(values: &[Complex64], z: Complex64, q: f64) -> Complex64 {
    let mean = values.iter().sum::<Complex64>() / values.len() as f64;
    (mean - (1.0 - q) / z) / q
}

/// Ensemble estimate of `E[(z - \int K_z dM)^{-1}]` with per-component standard errors.
#[derive(Debug, Clone, Copy)]
pub struct DirectEstimate {
    pub mean: Complex64,
    pub std_err_re: f64,
    pub std_err_im: f64,
}

pub fn mu2_direct(values: &[Complex64], ensemble: &Ensemble, z: Complex64) -> DirectEstimate {
    let rows = ensemble.len();
    let samples: Vec<Complex64> = (0..rows)
        .map(|r| {
            let s: Complex64 = ensemble
                .masses
                .row(r)
                .iter()
                .zip(values)
                .map(|(m, k)| k * *m)
                .sum();
            (z - s).inv()
        })
        .collect();
    let mean = samples.iter().sum::<Complex64>() / rows as f64;
    let (std_err_re, std_err_im) = if rows > 1 {
        let d = (rows - 1) as f64;
        let vr = samples.iter().map(|v| (v.re - mean.re).powi(2)).sum::<f64>() / d;
        let vi = samples.iter().map(|v| (v.im - mean.im).powi(2)).sum::<f64>() / d;
        ((vr / rows as f64).sqrt(), (vi / rows as f64).sqrt())
    } else {
        (0.0, 0.0)
    };
    DirectEstimate { mean, std_err_re, std_err_im }
}

/// Averages `f(|u - s|)` over all pairs of fine sub-cells `u`, `s` of two coarse cells.
fn averaged_by_lag(coarse: Grid, fine: Grid, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let (n, nf) = (coarse.n_points(), fine.n_points());
    if nf < n || nf % n != 0 {
        return invalid(format!("fine grid {nf} must be a multiple of {n}"));
    }
    let r = (nf / n) as i64;
    let hf = fine.spacing();
    let by_lag: Vec<f64> = (0..n as i64)
        .map(|d| {
            // fine lags d r + j occur r - |j| times among the r^2 pairs
            let total: f64 = (1 - r..r)
                .map(|j| (r - j.abs()) as f64 * f((d * r + j).abs() as f64 * hf))
                .sum();
            total / (r * r) as f64
        })
        .collect();
    Ok(DMatrix::from_fn(n, n, |i, j| by_lag[i.abs_diff(j)]))
}

/// Picard solver bound to one model, one ensemble and one set of knobs.
#[derive(Debug, Clone)]
pub struct Solver {
    pub op: FixedPointOperator,
    pub config: SolverConfig,
}

impl Solver {
    /// Solver for the multifractal random walk.
    pub fn mrw(config: &SolverConfig, model: &ModelParams) -> Result<Self> {
        config.validate()?;
        let ensemble = Ensemble::mrm(model, config, config.master_seed, Domain::SolverEnsemble)?;
        let ensemble = if config.moment_match { ensemble.moment_matched() } else { ensemble };
        let weights = match config.kernel {
            KernelRule::Centre => {
                FixedPointOperator::power_law_weights(config.k_grid, model.gamma2, model.tau, config.eta_k)
            }
            KernelRule::CellAverage => {
                FixedPointOperator::cell_averaged_weights(config.k_grid, config.sim_grid, model.gamma2, model.tau)?
            }
        };
        let op = FixedPointOperator::new(weights, ensemble, model.q)?;
        Ok(Self { op, config: config.clone() })
    }

    /// Solver for the lognormal random walk with log-volatility kernel `k`.
    pub fn lognormal(config: &SolverConfig, q: f64, lp: &LognormalParams) -> Result<Self> {
        config.validate()?;
        let ensemble = Ensemble::lognormal(lp, config, config.master_seed, Domain::SolverEnsemble)?;
        let ensemble = if config.moment_match { ensemble.moment_matched() } else { ensemble };
        let weights = match config.kernel {
            KernelRule::Centre => FixedPointOperator::lognormal_weights(config.k_grid, lp),
            KernelRule::CellAverage => {
                FixedPointOperator::lognormal_cell_averaged_weights(config.k_grid, config.sim_grid, lp)?
            }
        };
        let op = FixedPointOperator::new(weights, ensemble, q)?;
        Ok(Self { op, config: config.clone() })
    }

    pub fn q(&self) -> f64 {
        self.op.q
    }

    /// Solves from `K^0 = 1/z`, failing on non-convergence.
    pub fn solve(&self, z: Complex64) -> Result<KFunction> {
        let k = self.solve_report(z)?;
        if k.converged {
            Ok(k)
        } else {
            Err(Error::NonConvergence { residual: k.residual, iterations: k.iterations })
        }
    }

    /// Solves from `K^0 = 1/z`; non-convergence is reported in the result.
    pub fn solve_report(&self, z: Complex64) -> Result<KFunction> {
        let init = vec![z.inv(); self.op.grid().n_points()];
        self.solve_from(z, &init)
    }

    pub fn solve_from(&self, z: Complex64, init: &[Complex64]) -> Result<KFunction> {
        self.solve_observed(z, init, |_, _| {})
    }

    /// As [`Self::solve_from`], calling `observe(iteration, g)` on the initial
    /// profile (iteration 0) and on every subsequent iterate.
    pub fn solve_observed<F>(&self, z: Complex64, init: &[Complex64], mut observe: F) -> Result<KFunction>
    where
        F: FnMut(usize, &[Complex64]),
    {
        check_z(z)?;
        if init.len() != self.op.grid().n_points() {
            return Err(Error::Incompatible("initial profile has wrong length".into()));
        }
        if !is_admissible(init, z) {
            return invalid("initial profile violates the resolvent bounds");
        }
        let cfg = &self.config;
        let mut g = init.to_vec();
        let mut history = Vec::new();
        let mut anderson = match cfg.acceleration {
            Acceleration::Anderson { depth } => Some(Anderson::new(depth)),
            _ => None,
        };
        let mut last = g.clone();
        let mut residual = f64::INFINITY;
        observe(0, &g);
        for iteration in 1..=cfg.max_iter {
            let tg = self.op.apply(&g, z);
            let f: Vec<Complex64> = tg.iter().zip(&g).map(|(a, b)| a - b).collect();
            residual = f.iter().map(|v| v.norm()).fold(0.0, f64::max);
            history.push(residual);
            if !residual.is_finite() {
                return Err(Error::Numerical(format!("non-finite residual at z = {z}")));
            }
            if residual < cfg.tol {
                observe(iteration, &tg);
                return Ok(self.finish(z, tg, iteration, residual, history, true));
            }
            g = match (&mut anderson, cfg.acceleration) {
                (Some(acc), _) => {
                    let cand = acc.mix(&g, &tg, &f, residual);
                    if is_admissible(&cand, z) {
                        cand
                    } else {
                        acc.reset();
                        tg.clone()
                    }
                }
                (None, Acceleration::Relaxation(a)) => {
                    g.iter().zip(&tg).map(|(x, y)| x * (1.0 - a) + y * a).collect()
                }
                _ => tg.clone(),
            };
            observe(iteration, &g);
            last = tg;
        }
        let iterations = cfg.max_iter;
        Ok(self.finish(z, last, iterations, residual, history, false))
    }

    fn finish(
        &self,
        z: Complex64,
        values: Vec<Complex64>,
        iterations: usize,
        residual: f64,
        residual_history: Vec<f64>,
        converged: bool,
    ) -> KFunction {
        KFunction {
            z,
            grid: self.op.grid(),
            mu2: mu2_from_k(&values, z, self.op.q),
            values,
            iterations,
            residual,
            residual_history,
            converged,
            clipped_embedding_mass: self.op.ensemble.clipped_fraction,
        }
    }

    /// Direct estimate of `mu2_z` on an ensemble independent of the solver's own.
    pub fn fresh_mu2(&self, k: &KFunction, model: &ModelParams) -> Result<DirectEstimate> {
        let fresh = Ensemble::mrm(model, &self.config, self.config.master_seed, Domain::FreshEnsemble)?;
        Ok(mu2_direct(&k.values, &fresh, k.z))
    }
}

/// Builds a solver from `config` and solves at `config.z`.
pub fn solve_k(config: &SolverConfig, model: &ModelParams) -> Result<KFunction> {
    Solver::mrw(config, model)?.solve(config.z)
}

/// Lognormal-walk counterpart of [`solve_k`].
pub fn solve_k_lognormal(config: &SolverConfig, q: f64, lp: &LognormalParams) -> Result<KFunction> {
    Solver::lognormal(config, q, lp)?.solve(config.z)
}

/// Anderson (type II) mixing on the residual `f = T g - g`.
struct Anderson {
    depth: usize,
    d_f: VecDeque<Vec<Complex64>>,
    d_tg: VecDeque<Vec<Complex64>>,
    prev: Option<(Vec<Complex64>, Vec<Complex64>)>,
    best: f64,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Self { depth, d_f: VecDeque::new(), d_tg: VecDeque::new(), prev: None, best: f64::INFINITY }
    }

    fn reset(&mut self) {
        self.d_f.clear();
        self.d_tg.clear();
        self.prev = None;
    }

    fn mix(&mut self, _g: &[Complex64], tg: &[Complex64], f: &[Complex64], residual: f64) -> Vec<Complex64> {
        if residual > 1e3 * self.best {
            self.reset();
        }
        self.best = self.best.min(residual);
        if let Some((pf, ptg)) = self.prev.take() {
            self.d_f.push_back(f.iter().zip(&pf).map(|(a, b)| a - b).collect());
            self.d_tg.push_back(tg.iter().zip(&ptg).map(|(a, b)| a - b).collect());
            if self.d_f.len() > self.depth {
                self.d_f.pop_front();
                self.d_tg.pop_front();
            }
        }
        self.prev = Some((f.to_vec(), tg.to_vec()));
        let m = self.d_f.len();
        if m == 0 {
            return tg.to_vec();
        }
        let Some(gamma) = self.coefficients(f) else {
            self.reset();
            self.prev = Some((f.to_vec(), tg.to_vec()));
            return tg.to_vec();
        };
        let mut out = tg.to_vec();
        for (c, d) in gamma.iter().zip(&self.d_tg) {
            for (o, v) in out.iter_mut().zip(d) {
                *o -= c * v;
            }
        }
        out
    }

    /// Least-squares `argmin |f - dF gamma|` through regularised normal equations.
    fn coefficients(&self, f: &[Complex64]) -> Option<Vec<Complex64>> {
        let m = self.d_f.len();
        let mut h = DMatrix::<Complex64>::zeros(m, m);
        let mut rhs = DVector::<Complex64>::zeros(m);
        for i in 0..m {
            for j in 0..m {
                h[(i, j)] = self.d_f[i].iter().zip(&self.d_f[j]).map(|(a, b)| a.conj() * b).sum();
            }
            rhs[i] = self.d_f[i].iter().zip(f).map(|(a, b)| a.conj() * b).sum();
        }
        let trace: f64 = (0..m).map(|i| h[(i, i)].re).sum();
        if !(trace > 0.0) {
            return None;
        }
        for i in 0..m {
            h[(i, i)] += Complex64::new(1e-12 * trace, 0.0);
        }
        let sol = h.lu().solve(&rhs)?;
        sol.iter().all(|c| c.re.is_finite() && c.im.is_finite()).then(|| sol.iter().copied().collect())
    }
}

/// Random admissible grid function, used to probe the resolvent bounds.
pub fn random_admissible<R: Rng + ?Sized>(n: usize, z: Complex64, rng: &mut R) -> Vec<Complex64> {
    let bound = 1.0 / z.im.abs();
    let sign = -z.im.signum();
    (0..n)
        .map(|_| {
            let r = bound * rng.random::<f64>().sqrt();
            let phi = std::f64::consts::PI * rng.random::<f64>();
            let v = Complex64::from_polar(r, phi);
            Complex64::new(v.re, sign * v.im.abs())
        })
        .collect()
}
