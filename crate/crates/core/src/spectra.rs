//! Empirical covariance spectra and the Marchenko-Pastur reference law.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::mrm::ReturnsMatrix;

/// Relative threshold below which negative eigenvalues of `X X^t` count as zero.
pub const PSD_CLAMP: f64 = 1e-10;

/// Sorted spectrum of `R_N = X X^t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<f64>,
    pub n: usize,
    pub t_steps: usize,
}

impl SpectrumResult {
    pub fn mean(&self) -> f64 {
        self.eigenvalues.iter().sum::<f64>() / self.eigenvalues.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }
}

fn check_finite(x: &DMatrix<f64>) -> Result<()> {
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            if !x[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// Eigenvalues of `x x^t` in ascending order.
pub fn gram_spectrum(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_finite(x)?;
    let gram = x * x.transpose();
    let threshold = PSD_CLAMP * x.norm_squared();
    let mut eig: Vec<f64> = gram.symmetric_eigenvalues().iter().copied().collect();
    for v in eig.iter_mut() {
        if *v < 0.0 {
            if *v < -threshold {
                return Err(Error::Numerical(format!(
                    "eigenvalue {v:.3e} of a Gram matrix is below -{threshold:.3e}"
                )));
            }
            *v = 0.0;
        }
    }
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

pub fn covariance_spectrum(x: &ReturnsMatrix) -> Result<SpectrumResult> {
    let eigenvalues = gram_spectrum(&x.entries)?;
    Ok(SpectrumResult {
        eigenvalues,
        n: x.entries.nrows(),
        t_steps: x.entries.ncols(),
    })
}

/// Spectra of several matrices, computed in parallel, returned in input order.
pub fn covariance_spectra(xs: &[ReturnsMatrix]) -> Result<Vec<SpectrumResult>> {
    xs.par_iter().map(covariance_spectrum).collect()
}

/// Outcome of comparing the block matrix `B_N` with `X X^t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnCheck {
    pub passed: bool,
    pub max_deviation: f64,
    /// Zero eigenvalues of `B_N` beyond the `+-sqrt(lambda)` pairs.
    pub extra_zeros: usize,
}

/// Checks that `spec(B_N) = {+-sqrt(lambda_i)} U {0 x (T - N)}`.
pub fn bn_spectrum_check(x: &DMatrix<f64>, tol: f64) -> Result<BnCheck> {
    check_finite(x)?;
    let (n, t) = x.shape();
    let dim = n + t;
    let mut b = DMatrix::zeros(dim, dim);
    for i in 0..n {
        for j in 0..t {
            b[(t + i, j)] = x[(i, j)];
            b[(j, t + i)] = x[(i, j)];
        }
    }
    let mut block: Vec<f64> = b.symmetric_eigenvalues().iter().copied().collect();
    block.sort_by(f64::total_cmp);

    let small = if n <= t { x * x.transpose() } else { x.transpose() * x };
    let mut expected: Vec<f64> = Vec::with_capacity(dim);
    for lam in small.symmetric_eigenvalues().iter() {
        let s = lam.max(0.0).sqrt();
        expected.push(s);
        expected.push(-s);
    }
    let extra_zeros = dim - expected.len();
    expected.extend(std::iter::repeat_n(0.0, extra_zeros));
    expected.sort_by(f64::total_cmp);

    let max_deviation = block
        .iter()
        .zip(&expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(BnCheck { passed: max_deviation <= tol, max_deviation, extra_zeros })
}

/// Support `[(1 - sqrt q)^2, (1 + sqrt q)^2]` of the Marchenko-Pastur law.
pub fn mp_edges(q: f64) -> (f64, f64) {
    let s = q.sqrt();
    (1.0 + q - 2.0 * s, 1.0 + q + 2.0 * s)
}

pub fn mp_density(x: f64, q: f64) -> f64 {
    let (lo, hi) = mp_edges(q);
    if x <= lo || x >= hi || x <= 0.0 {
        return 0.0;
    }
    ((hi - x) * (x - lo)).sqrt() / (2.0 * std::f64::consts::PI * q * x)
}

/// Cumulative distribution of the Marchenko-Pastur law.
///
/// Uses `x = lo + (hi - lo)(1 - cos t)/2`, which turns the square-root edges
/// into a smooth integrand, and composite Simpson in `t`.
pub fn mp_cdf(x: f64, q: f64) -> f64 {
    let (lo, hi) = mp_edges(q);
    if x <= lo {
        return 0.0;
    }
    if x >= hi {
        return 1.0;
    }
    let half = 0.5 * (hi - lo);
    let theta = (1.0 - (x - lo) / half).clamp(-1.0, 1.0).acos();
    let f = |t: f64| {
        let xt = lo + half * (1.0 - t.cos());
        let s = t.sin();
        if xt <= 0.0 {
            // q = 1 at t = 0: limit of sin^2 t / (2 (1 - cos t)) is 1
            return 1.0;
        }
        s * s / xt
    };
    let steps = 2048;
    let h = theta / steps as f64;
    let mut acc = f(0.0) + f(theta);
    for k in 1..steps {
        acc += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    (acc * h / 3.0 * half * half / (2.0 * std::f64::consts::PI * q)).clamp(0.0, 1.0)
}

/// Binning of an eigenvalue histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinSpec {
    /// `bins` equal-width bins over `[0, max eigenvalue]`.
    Auto { bins: usize },
    Linear { bins: usize, lo: f64, hi: f64 },
    Log { bins: usize, lo: f64, hi: f64 },
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec::Auto { bins: 100 }
    }
}

/// Normalised histogram of eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct EsdHistogram {
    pub bin_edges: Vec<f64>,
    /// Probabilities of the in-range eigenvalues; sums to one.
    pub probabilities: Vec<f64>,
    /// Fraction of all eigenvalues that fell inside the edges.
    pub coverage: f64,
}

impl EsdHistogram {
    /// Density estimate per bin, scaled so that out-of-range mass is respected.
    pub fn densities(&self) -> Vec<f64> {
        self.probabilities
            .iter()
            .zip(self.bin_edges.windows(2))
            .map(|(p, e)| p * self.coverage / (e[1] - e[0]))
            .collect()
    }
}

/// All eigenvalues of an ensemble, concatenated in sample order.
pub fn pooled(spectra: &[SpectrumResult]) -> Vec<f64> {
    spectra.iter().flat_map(|s| s.eigenvalues.iter().copied()).collect()
}

pub fn esd_histogram(eigenvalues: &[f64], spec: BinSpec) -> Result<EsdHistogram> {
    if eigenvalues.is_empty() {
        return Err(Error::Empty("no eigenvalues to histogram"));
    }
    let edges: Vec<f64> = match spec {
        BinSpec::Auto { bins } => {
            let hi = eigenvalues.iter().copied().fold(0.0, f64::max);
            let hi = if hi > 0.0 { hi } else { 1.0 };
            linear_edges(bins, 0.0, hi)?
        }
        BinSpec::Linear { bins, lo, hi } => linear_edges(bins, lo, hi)?,
        BinSpec::Log { bins, lo, hi } => {
            if !(lo > 0.0) {
                return invalid("log bins need a positive lower edge");
            }
            linear_edges(bins, lo.ln(), hi.ln())?.into_iter().map(f64::exp).collect()
        }
    };
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    let mut counts = vec![0usize; bins];
    let mut inside = 0usize;
    for &v in eigenvalues {
        if v < lo || v > hi {
            continue;
        }
        let k = edges.partition_point(|&e| e <= v).clamp(1, bins) - 1;
        counts[k] += 1;
        inside += 1;
    }
    if inside == 0 {
        return Err(Error::Empty("no eigenvalue inside the histogram window"));
    }
    let probabilities = counts.iter().map(|&c| c as f64 / inside as f64).collect();
    Ok(EsdHistogram {
        bin_edges: edges,
        probabilities,
        coverage: inside as f64 / eigenvalues.len() as f64,
    })
}

fn linear_edges(bins: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if bins == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return invalid(format!("bad histogram window [{lo}, {hi}] with {bins} bins"));
    }
    let w = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * w).collect();
    edges[bins] = hi;
    Ok(edges)
}

pub fn write_eigenvalues_csv(path: &Path, header: &str, spectra: &[SpectrumResult]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(header.as_bytes())?;
    writeln!(out, "sample_id,eigenvalue")?;
    for (s, spec) in spectra.iter().enumerate() {
        for v in &spec.eigenvalues {
            writeln!(out, "{s},{v}")?;
        }
    }
    Ok(())
}

/// Reads back an eigenvalue file, grouping values by `sample_id`.
pub fn read_eigenvalues_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut samples: Vec<Vec<f64>> = Vec::new();
    let mut rows = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    match rows.next() {
        Some("sample_id,eigenvalue") => {}
        _ => return Err(Error::Parse(format!("{}: missing eigenvalue header", path.display()))),
    }
    for line in rows {
        let bad = || Error::Parse(format!("{}: bad line '{line}'", path.display()));
        let (id, v) = line.split_once(',').ok_or_else(bad)?;
        let id: usize = id.parse().map_err(|_| bad())?;
        let v: f64 = v.parse().map_err(|_| bad())?;
        if samples.len() <= id {
            samples.resize(id + 1, Vec::new());
        }
        samples[id].push(v);
    }
    if samples.iter().all(Vec::is_empty) {
        return Err(Error::Empty("eigenvalue file has no rows"));
    }
    Ok(samples)
}

pub fn write_histogram_csv(path: &Path, header: &str, h: &EsdHistogram) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(header.as_bytes())?;
    writeln!(out, "bin_left,bin_right,probability")?;
    for (e, p) in h.bin_edges.windows(2).zip(&h.probabilities) {
        writeln!(out, "{},{},{}", e[0], e[1], p)?;
    }
    Ok(())
}
