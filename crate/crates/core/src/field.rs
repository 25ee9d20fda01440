//! Log-correlated Gaussian fields on uniform grids of `[0, 1]`.
//!
//! Fields are synthesised by circulant embedding: the target covariance is
//! laid out on a circle of `m >= 2n` points, diagonalised with one FFT, and
//! samples are obtained by colouring complex white noise with the square
//! root of the (clipped) circulant spectrum.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result};
use crate::seed::{stream_rng, Domain};

/// Uniform partition of `[0, 1]` into `n_points` cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    n_points: usize,
}

impl Grid {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return invalid(format!("grid needs at least 2 points, got {n_points}"));
        }
        Ok(Self { n_points })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n_points as f64
    }

    /// Centre `(j + 1/2) * spacing` of cell `j` (zero based).
    pub fn center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.spacing()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.center(j)).collect()
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} cells", self.n_points)
    }
}

/// `max(ln x, 0)`.
pub fn ln_plus(x: f64) -> f64 {
    if x > 1.0 {
        x.ln()
    } else {
        0.0
    }
}

/// Power-law weight `max(tau / |lag|, 1)^gamma2`.
///
/// Lags shorter than `eta` are evaluated at `|lag| = eta`, which is the
/// truncated form of the singular weight at coincident points.
pub fn ln_plus_kernel(lag: f64, gamma2: f64, tau: f64, eta: f64) -> f64 {
    if gamma2 == 0.0 {
        return 1.0;
    }
    let lag = lag.abs().max(eta);
    (gamma2 * ln_plus(tau / lag)).exp()
}

/// Regularised covariance of the sampled log field, `gamma2 * ln_+(tau / (|lag| + eta))`.
pub fn log_field_covariance(lag: f64, gamma2: f64, tau: f64, eta: f64) -> f64 {
    gamma2 * ln_plus(tau / (lag.abs() + eta))
}

/// Covariance of the cone-regularised field `omega_eps` (unit intermittency).
///
/// Piecewise: `ln(tau/eps) + 1 - |lag|/eps` inside `eps`, `ln(tau/|lag|)` up to
/// the integral scale and zero beyond it.
pub fn rho_eps(lag: f64, eps: f64, tau: f64) -> Result<f64> {
    if !(eps > 0.0 && tau > 0.0) {
        return invalid(format!("rho_eps needs eps > 0 and tau > 0 (eps={eps}, tau={tau})"));
    }
    if eps > tau {
        return invalid(format!("rho_eps needs eps <= tau (eps={eps}, tau={tau})"));
    }
    let lag = lag.abs();
    Ok(if lag <= eps {
        (tau / eps).ln() + 1.0 - lag / eps
    } else if lag <= tau {
        (tau / lag).ln()
    } else {
        0.0
    })
}

/// How much of the circulant spectrum had to be discarded.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct EmbeddingDiagnostics {
    pub embedding_size: usize,
    /// Largest magnitude among the negative eigenvalues set to zero.
    pub max_clipped: f64,
    /// Clipped negative mass over the total absolute spectral mass.
    pub clipped_fraction: f64,
}

/// Reusable circulant-embedding sampler for one stationary covariance on one grid.
#[derive(Clone)]
pub struct CirculantSampler {
    n: usize,
    scale: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    diagnostics: EmbeddingDiagnostics,
    degenerate: bool,
}

impl fmt::Debug for CirculantSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CirculantSampler")
            .field("n", &self.n)
            .field("diagnostics", &self.diagnostics)
            .finish()
    }
}

impl CirculantSampler {
    /// `support`, when known, is the lag beyond which `cov` vanishes; the
    /// circle is made long enough that the embedded kernel never wraps onto
    /// itself.
    pub fn new(grid: &Grid, support: Option<f64>, cov: impl Fn(f64) -> f64) -> Self {
        let n = grid.n_points();
        let h = grid.spacing();
        let reach = support
            .map(|s| (s / h).ceil() as usize + 1)
            .unwrap_or(0)
            .max(n);
        let m = (2 * reach).next_power_of_two();

        let mut row: Vec<Complex64> = (0..m)
            .map(|k| {
                let k = k.min(m - k);
                Complex64::new(cov(k as f64 * h), 0.0)
            })
            .collect();
        let degenerate = row.iter().all(|c| c.re == 0.0);

        let fft = FftPlanner::new().plan_fft_forward(m);
        fft.process(&mut row);

        let mut neg_mass = 0.0;
        let mut abs_mass = 0.0;
        let mut max_clipped: f64 = 0.0;
        let inv_m = 1.0 / m as f64;
        let scale = row
            .iter()
            .map(|c| {
                let lam = c.re;
                abs_mass += lam.abs();
                if lam < 0.0 {
                    neg_mass -= lam;
                    max_clipped = max_clipped.max(-lam);
                    0.0
                } else {
                    (lam * inv_m).sqrt()
                }
            })
            .collect();
        let clipped_fraction = if abs_mass > 0.0 { neg_mass / abs_mass } else { 0.0 };

        Self {
            n,
            scale,
            fft,
            diagnostics: EmbeddingDiagnostics {
                embedding_size: m,
                max_clipped,
                clipped_fraction,
            },
            degenerate,
        }
    }

    pub fn diagnostics(&self) -> EmbeddingDiagnostics {
        self.diagnostics
    }

    /// Draws one centred sample of length `n`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        if self.degenerate {
            return vec![0.0; self.n];
        }
        let mut buf: Vec<Complex64> = self
            .scale
            .iter()
            .map(|&s| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                Complex64::new(s * a, s * b)
            })
            .collect();
        self.fft.process(&mut buf);
        buf.truncate(self.n);
        buf.into_iter().map(|c| c.re).collect()
    }
}

/// One realization of the regularised log-correlated field at cell centres.
#[derive(Debug, Clone)]
pub struct FieldSample {
    pub grid: Grid,
    pub eta: f64,
    pub gamma2: f64,
    pub tau: f64,
    pub values: Vec<f64>,
    pub diagnostics: EmbeddingDiagnostics,
}

/// Sampler for the field with covariance `gamma2 * ln_+(tau / (lag + eta))`.
#[derive(Debug, Clone)]
pub struct LogFieldSampler {
    grid: Grid,
    gamma2: f64,
    tau: f64,
    eta: f64,
    inner: CirculantSampler,
}

impl LogFieldSampler {
    pub fn new(grid: Grid, gamma2: f64, tau: f64, eta: f64) -> Result<Self> {
        if !(eta > 0.0) {
            return invalid(format!("eta must be positive, got {eta}"));
        }
        if !(gamma2 >= 0.0) || !gamma2.is_finite() {
            return invalid(format!("gamma2 must be finite and >= 0, got {gamma2}"));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return invalid(format!("tau must be finite and > 0, got {tau}"));
        }
        let inner = CirculantSampler::new(&grid, Some(tau), |lag| {
            log_field_covariance(lag, gamma2, tau, eta)
        });
        let d = inner.diagnostics();
        if d.max_clipped > 0.0 {
            log::debug!(
                "log-field embedding clipped {:.3e} (fraction {:.3e}) on {}",
                d.max_clipped,
                d.clipped_fraction,
                grid
            );
        }
        Ok(Self { grid, gamma2, tau, eta, inner })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Target variance at lag zero.
    pub fn variance(&self) -> f64 {
        log_field_covariance(0.0, self.gamma2, self.tau, self.eta)
    }

    pub fn diagnostics(&self) -> EmbeddingDiagnostics {
        self.inner.diagnostics()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldSample {
        FieldSample {
            grid: self.grid,
            eta: self.eta,
            gamma2: self.gamma2,
            tau: self.tau,
            values: self.inner.sample(rng),
            diagnostics: self.inner.diagnostics(),
        }
    }
}

/// Samples the log-correlated field on `grid` from `seed`.
pub fn sample_field(grid: Grid, gamma2: f64, tau: f64, eta: f64, seed: u64) -> Result<FieldSample> {
    let sampler = LogFieldSampler::new(grid, gamma2, tau, eta)?;
    let mut rng = stream_rng(seed, Domain::Field, 0);
    Ok(sampler.sample(&mut rng))
}
