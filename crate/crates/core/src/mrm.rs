//! Lognormal multifractal random measures and the return matrices built on them.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::field::{CirculantSampler, EmbeddingDiagnostics, Grid, LogFieldSampler};
use crate::seed::{stream_rng, Domain};

/// Intermittency above which the limiting equations are only conjectured.
pub const PROVEN_GAMMA2_LIMIT: f64 = 1.0 / 3.0;
/// The lognormal measure degenerates to zero at this intermittency.
pub const DEGENERATE_GAMMA2: f64 = 2.0;

/// Structure exponent of the lognormal measure, `(1 + g/2) p - (g/2) p^2`.
pub fn zeta(p: f64, gamma2: f64) -> f64 {
    (1.0 + gamma2 / 2.0) * p - gamma2 / 2.0 * p * p
}

/// Model parameters: intermittency, integral scale and matrix shape.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ModelParams {
    pub gamma2: f64,
    pub tau: f64,
    pub q: f64,
    pub n: usize,
    pub t_steps: usize,
}

impl ModelParams {
    /// Builds parameters with `t_steps = round(n / q)`.
    pub fn new(gamma2: f64, tau: f64, q: f64, n: usize) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return invalid(format!("q must lie in (0, 1], got {q}"));
        }
        let t_steps = (n as f64 / q).round() as usize;
        Self::with_shape(gamma2, tau, q, n, t_steps)
    }

    pub fn with_shape(gamma2: f64, tau: f64, q: f64, n: usize, t_steps: usize) -> Result<Self> {
        if !(0.0..DEGENERATE_GAMMA2).contains(&gamma2) {
            return invalid(format!("gamma2 must lie in [0, 2), got {gamma2}"));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return invalid(format!("tau must be finite and > 0, got {tau}"));
        }
        if !(q > 0.0 && q <= 1.0) {
            return invalid(format!("q must lie in (0, 1], got {q}"));
        }
        if n == 0 || t_steps == 0 {
            return invalid("matrix dimensions must be positive");
        }
        let params = Self { gamma2, tau, q, n, t_steps };
        if let Some(w) = params.warning() {
            log::warn!("{w}");
        }
        Ok(params)
    }

    /// Set when the intermittency is outside the proven regime.
    pub fn warning(&self) -> Option<String> {
        (self.gamma2 >= PROVEN_GAMMA2_LIMIT).then(|| {
            format!(
                "gamma2 = {} >= 1/3: limiting equations are conjectural in this regime",
                self.gamma2
            )
        })
    }
}

/// Masses of the measure on each cell of a uniform grid.
#[derive(Debug, Clone)]
pub struct MrmSample {
    pub grid: Grid,
    pub masses: Vec<f64>,
    pub diagnostics: EmbeddingDiagnostics,
}

impl MrmSample {
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Mass of `[0, lambda]`, rounding `lambda` down to whole cells.
    pub fn mass_up_to(&self, lambda: f64) -> f64 {
        let cells = ((lambda * self.grid.n_points() as f64) + 1e-9).floor() as usize;
        self.masses[..cells.min(self.masses.len())].iter().sum()
    }

    /// Sums fine cells onto a coarser grid whose size divides this one.
    pub fn aggregate(&self, coarse: Grid) -> Result<MrmSample> {
        let fine = self.grid.n_points();
        let n = coarse.n_points();
        if n > fine || !fine.is_multiple_of(n) {
            return Err(Error::Incompatible(format!(
                "cannot aggregate {fine} cells onto {n} cells"
            )));
        }
        let ratio = fine / n;
        let masses = self.masses.chunks(ratio).map(|c| c.iter().sum()).collect();
        Ok(MrmSample { grid: coarse, masses, diagnostics: self.diagnostics })
    }
}

/// Reusable sampler for lognormal measure cell masses on one grid.
///
/// Cell masses are `spacing * exp(omega(x_t) - var/2)` where `omega` is the
/// log field regularised at one grid spacing.
#[derive(Debug, Clone)]
pub struct MrmSampler {
    field: LogFieldSampler,
    half_var: f64,
}

impl MrmSampler {
    pub fn new(grid: Grid, gamma2: f64, tau: f64) -> Result<Self> {
        if !(0.0..DEGENERATE_GAMMA2).contains(&gamma2) {
            return invalid(format!("gamma2 must lie in [0, 2), got {gamma2}"));
        }
        let field = LogFieldSampler::new(grid, gamma2, tau, grid.spacing())?;
        let half_var = 0.5 * field.variance();
        Ok(Self { field, half_var })
    }

    pub fn grid(&self) -> Grid {
        self.field.grid()
    }

    pub fn diagnostics(&self) -> EmbeddingDiagnostics {
        self.field.diagnostics()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> MrmSample {
        let grid = self.field.grid();
        let h = grid.spacing();
        let masses = if self.half_var == 0.0 {
            vec![h; grid.n_points()]
        } else {
            let omega = self.field.sample(rng).values;
            omega.into_iter().map(|w| h * (w - self.half_var).exp()).collect()
        };
        MrmSample { grid, masses, diagnostics: self.field.diagnostics() }
    }
}

/// Samples one measure realization on `grid` from `seed`.
pub fn sample_mrm(grid: Grid, gamma2: f64, tau: f64, seed: u64) -> Result<MrmSample> {
    let sampler = MrmSampler::new(grid, gamma2, tau)?;
    Ok(sampler.sample(&mut stream_rng(seed, Domain::Mrm, 0)))
}

/// Draws `count` independent realizations; member `i` uses stream `(seed, i)`.
pub fn sample_mrm_ensemble(
    grid: Grid,
    gamma2: f64,
    tau: f64,
    count: usize,
    seed: u64,
    domain: Domain,
) -> Result<Vec<MrmSample>> {
    let sampler = MrmSampler::new(grid, gamma2, tau)?;
    Ok((0..count)
        .into_par_iter()
        .map(|i| sampler.sample(&mut stream_rng(seed, domain, i as u64)))
        .collect())
}

/// The `n x t_steps` matrix of increments.
#[derive(Debug, Clone)]
pub struct ReturnsMatrix {
    pub params: ModelParams,
    pub entries: DMatrix<f64>,
    /// Variance of each entry conditionally on the volatility.
    pub conditional_variances: DMatrix<f64>,
    pub diagnostics: EmbeddingDiagnostics,
}

impl ReturnsMatrix {
    /// Wraps an arbitrary matrix (used by tests and structural checks).
    pub fn from_entries(entries: DMatrix<f64>) -> Self {
        let (n, t) = entries.shape();
        let params = ModelParams { gamma2: 0.0, tau: 1.0, q: (n as f64 / t as f64).min(1.0), n, t_steps: t };
        let conditional_variances = DMatrix::from_element(n, t, 1.0 / t as f64);
        Self { params, entries, conditional_variances, diagnostics: EmbeddingDiagnostics::default() }
    }

    /// `(1/N) trace(X X^t)`.
    pub fn normalized_trace(&self) -> f64 {
        self.entries.norm_squared() / self.entries.nrows() as f64
    }
}

fn assemble(params: ModelParams, rows: Vec<(Vec<f64>, Vec<f64>)>, diagnostics: EmbeddingDiagnostics) -> ReturnsMatrix {
    let (n, t) = (params.n, params.t_steps);
    let mut entries = DMatrix::zeros(n, t);
    let mut variances = DMatrix::zeros(n, t);
    for (i, (row, var)) in rows.into_iter().enumerate() {
        for j in 0..t {
            entries[(i, j)] = row[j];
            variances[(i, j)] = var[j];
        }
    }
    ReturnsMatrix { params, entries, conditional_variances: variances, diagnostics }
}

/// Multifractal random walk increments: row `i` is `sqrt(M_i(I_j)) Z_ij` with
/// an independent measure per row.
pub fn sample_returns(params: &ModelParams, master_seed: u64) -> Result<ReturnsMatrix> {
    let grid = Grid::new(params.t_steps.max(2))?;
    let sampler = MrmSampler::new(grid, params.gamma2, params.tau)?;
    let t = params.t_steps;
    let rows: Vec<_> = (0..params.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(master_seed, Domain::Returns, i as u64);
            let mut masses = sampler.sample(&mut rng).masses;
            if t == 1 {
                // a single observation sees the whole unit interval
                masses = vec![masses.iter().sum()];
            }
            let row = masses
                .iter()
                .map(|&m| m.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            (row, masses)
        })
        .collect();
    Ok(assemble(*params, rows, sampler.diagnostics()))
}

/// Stationary covariance kernels for the log-volatility of the lognormal walk.
#[derive(Clone)]
pub enum CovarianceKernel {
    Zero,
    /// `variance * max(0, 1 - |x| / range)`.
    Triangular { variance: f64, range: f64 },
    /// `variance * exp(-|x| / range)`.
    Exponential { variance: f64, range: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for CovarianceKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Triangular { variance, range } => write!(f, "Triangular({variance}, {range})"),
            Self::Exponential { variance, range } => write!(f, "Exponential({variance}, {range})"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl CovarianceKernel {
    pub fn eval(&self, lag: f64) -> f64 {
        let lag = lag.abs();
        match self {
            Self::Zero => 0.0,
            Self::Triangular { variance, range } => variance * (1.0 - lag / range).max(0.0),
            Self::Exponential { variance, range } => variance * (-lag / range).exp(),
            Self::Custom(f) => f(lag),
        }
    }

    /// Lag beyond which the kernel is identically zero, if known.
    pub fn support(&self) -> Option<f64> {
        match self {
            Self::Zero => Some(0.0),
            Self::Triangular { range, .. } => Some(*range),
            Self::Exponential { .. } | Self::Custom(_) => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }
}

/// Parameters of the lognormal random walk variant: `W` stationary Gaussian
/// with mean `m = -k(0)` and covariance `k`.
#[derive(Debug, Clone)]
pub struct LognormalParams {
    pub mean_shift: f64,
    pub kernel: CovarianceKernel,
    pub beta: f64,
    /// Numerical estimate of the Hoelder constant near the origin.
    pub holder_constant: f64,
}

/// Largest tolerated ratio `|k(x) - k(0)| / |x|^beta` on the check grid.
const HOLDER_CAP: f64 = 1e6;
/// Circulant embeddings clipping more than this fraction are rejected.
pub const MAX_CLIPPED_FRACTION: f64 = 0.05;

impl LognormalParams {
    pub fn new(kernel: CovarianceKernel, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return invalid(format!("beta must be positive, got {beta}"));
        }
        let k0 = kernel.eval(0.0);
        if !k0.is_finite() || k0 < 0.0 {
            return invalid(format!("kernel variance k(0) = {k0} must be finite and >= 0"));
        }
        let mut c: f64 = 0.0;
        for i in 1..=4096 {
            let x = i as f64 / 4096.0;
            let d = (kernel.eval(x) - k0).abs();
            if !d.is_finite() {
                return invalid(format!("kernel is not finite at lag {x}"));
            }
            if kernel.eval(x).abs() > k0 * (1.0 + 1e-12) + 1e-300 {
                return invalid(format!("|k({x})| exceeds k(0); not a covariance"));
            }
            c = c.max(d / x.powf(beta));
        }
        if c > HOLDER_CAP {
            return invalid(format!(
                "kernel fails the Hoelder condition with beta = {beta} (ratio {c:.3e})"
            ));
        }
        Ok(Self { mean_shift: -k0, kernel, beta, holder_constant: c })
    }

    /// Sampler of `W` (without the mean) on `grid`.
    pub(crate) fn field_sampler(&self, grid: &Grid) -> Result<CirculantSampler> {
        let kernel = self.kernel.clone();
        let sampler = CirculantSampler::new(grid, self.kernel.support(), move |lag| kernel.eval(lag));
        let d = sampler.diagnostics();
        if d.clipped_fraction > MAX_CLIPPED_FRACTION {
            return Err(Error::IndefiniteEmbedding {
                clipped_fraction: d.clipped_fraction,
                threshold: MAX_CLIPPED_FRACTION,
            });
        }
        Ok(sampler)
    }
}

/// Lognormal walk increments `(1/sqrt(T)) exp(W_i(j/T)) Z_ij`.
pub fn sample_returns_lognormal(
    params: &ModelParams,
    lp: &LognormalParams,
    master_seed: u64,
) -> Result<ReturnsMatrix> {
    let t = params.t_steps;
    let grid = Grid::new(t.max(2))?;
    let sampler = lp.field_sampler(&grid)?;
    let inv_sqrt_t = 1.0 / (t as f64).sqrt();
    let m = lp.mean_shift;
    let rows: Vec<_> = (0..params.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(master_seed, Domain::Lognormal, i as u64);
            let w = sampler.sample(&mut rng);
            let mut row = Vec::with_capacity(t);
            let mut var = Vec::with_capacity(t);
            for wj in w.iter().take(t) {
                let scale = inv_sqrt_t * (m + wj).exp();
                row.push(scale * rng.sample::<f64, _>(StandardNormal));
                var.push(scale * scale);
            }
            (row, var)
        })
        .collect();
    Ok(assemble(*params, rows, sampler.diagnostics()))
}

/// Writes `(sample_id, cell, mass)` rows.
pub fn write_mrm_csv(path: &Path, samples: &[MrmSample]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "sample_id,cell,mass")?;
    for (s, sample) in samples.iter().enumerate() {
        for (c, m) in sample.masses.iter().enumerate() {
            writeln!(out, "{s},{c},{m}")?;
        }
    }
    Ok(())
}

/// Writes `(row, col, value)` rows of the returns matrix.
pub fn write_returns_csv(path: &Path, x: &ReturnsMatrix) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "row,col,value,conditional_variance")?;
    for i in 0..x.entries.nrows() {
        for j in 0..x.entries.ncols() {
            writeln!(out, "{i},{j},{},{}", x.entries[(i, j)], x.conditional_variances[(i, j)])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zeta_values() {
        assert_relative_eq!(zeta(1.0, 0.37), 1.0, epsilon = 1e-15);
        assert_relative_eq!(zeta(2.0, 0.25), 1.75, epsilon = 1e-15);
        assert_eq!(zeta(0.0, 0.25), 0.0);
    }

    #[test]
    fn params_shape_and_validation() {
        let p = ModelParams::new(0.25, 0.25, 0.5, 100).unwrap();
        assert_eq!(p.t_steps, 200);
        assert!(p.warning().is_none());
        assert!(ModelParams::new(0.5, 0.25, 1.0, 10).unwrap().warning().is_some());
        assert!(ModelParams::new(2.0, 0.25, 1.0, 10).is_err());
        assert!(ModelParams::new(0.1, 0.0, 1.0, 10).is_err());
        assert!(ModelParams::new(0.1, 0.25, 1.5, 10).is_err());
        assert!(ModelParams::new(0.1, 0.25, 0.0, 10).is_err());
    }

    #[test]
    fn lebesgue_when_no_intermittency() {
        let g = Grid::new(64).unwrap();
        let s = sample_mrm(g, 0.0, 1.0, 5).unwrap();
        assert!(s.masses.iter().all(|&m| m == g.spacing()));
    }

    #[test]
    fn aggregation_preserves_total() {
        let s = sample_mrm(Grid::new(256).unwrap(), 0.25, 0.5, 1).unwrap();
        let c = s.aggregate(Grid::new(32).unwrap()).unwrap();
        assert_relative_eq!(c.total_mass(), s.total_mass(), max_relative = 1e-12);
        assert!(s.aggregate(Grid::new(24).unwrap()).is_err());
    }

    #[test]
    fn returns_rows_depend_only_on_their_seed() {
        let p = ModelParams::new(0.25, 0.25, 1.0, 6).unwrap();
        let a = sample_returns(&p, 9).unwrap();
        let p8 = ModelParams::with_shape(0.25, 0.25, 1.0, 8, 6).unwrap();
        let b = sample_returns(&p8, 9).unwrap();
        for j in 0..6 {
            assert_eq!(a.entries[(3, j)], b.entries[(3, j)]);
        }
    }

    #[test]
    fn conditional_variances_are_masses() {
        let p = ModelParams::new(0.25, 0.25, 1.0, 4).unwrap();
        let x = sample_returns(&p, 2).unwrap();
        for i in 0..4 {
            let total: f64 = x.conditional_variances.row(i).iter().sum();
            assert!(total > 0.0);
        }
        assert!(x.conditional_variances.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn lognormal_params_normalization_and_holder() {
        let lp = LognormalParams::new(CovarianceKernel::Triangular { variance: 0.3, range: 0.2 }, 1.0).unwrap();
        assert_relative_eq!(lp.mean_shift, -0.3);
        assert_relative_eq!(lp.holder_constant, 1.5, max_relative = 1e-9);
        // a cusp of exponent 1/2 violates beta = 1 only mildly but fails beta = 2 on a fine grid
        let cusp = CovarianceKernel::Custom(Arc::new(|x: f64| (1.0 - x.sqrt()).max(0.0)));
        assert!(LognormalParams::new(cusp.clone(), 0.5).is_ok());
        assert!(LognormalParams::new(cusp, 3.0).is_err());
        assert!(LognormalParams::new(CovarianceKernel::Zero, 0.0).is_err());
    }

    #[test]
    fn lognormal_zero_kernel_is_gaussian_scale() {
        let p = ModelParams::new(0.0, 1.0, 1.0, 5).unwrap();
        let lp = LognormalParams::new(CovarianceKernel::Zero, 1.0).unwrap();
        let x = sample_returns_lognormal(&p, &lp, 1).unwrap();
        assert!(x.conditional_variances.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn wildly_indefinite_kernel_rejected() {
        // a "covariance" with an oscillating sign pattern that no embedding can fix
        let bad = CovarianceKernel::Custom(Arc::new(|x: f64| if x < 1e-12 { 1.0 } else { -0.9 }));
        let lp = LognormalParams { mean_shift: -1.0, kernel: bad, beta: 1.0, holder_constant: 0.0 };
        let p = ModelParams::new(0.0, 1.0, 1.0, 4).unwrap();
        assert!(matches!(
            sample_returns_lognormal(&p, &lp, 0),
            Err(Error::IndefiniteEmbedding { .. })
        ));
    }
}
