//! Stieltjes inversion and the push-forward to the eigenvalue density of `R_N`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::solver::{KFunction, Solver};
use crate::spectra::SpectrumResult;

pub const DEFAULT_EPS_IM: f64 = 0.01;

/// A sampled density.
///
/// Points whose Stieltjes value could not be obtained are flagged in
/// `missing` and hold `NaN`; they are never interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityCurve {
    pub x_points: Vec<f64>,
    pub values: Vec<f64>,
    pub eps_im: f64,
    /// Largest negative value that was clamped to zero.
    pub clamped_max: f64,
    pub missing: Vec<bool>,
}

impl DensityCurve {
    /// Trapezoid integral over the sampled window, skipping missing points.
    pub fn mass(&self) -> f64 {
        self.x_points
            .windows(2)
            .zip(self.values.windows(2))
            .filter(|(_, v)| v[0].is_finite() && v[1].is_finite())
            .map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1]))
            .sum()
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }
}

/// `values[j] = Im(mu2(x_j - i eps)) / pi`, clamped at zero.
///
/// With `richardson`, the value is `2 v(eps) - v(2 eps)`, which removes the
/// first-order smoothing bias of the Poisson kernel.
pub fn invert_stieltjes<F>(mu2_at: F, x_points: &[f64], eps_im: f64, richardson: bool) -> Result<DensityCurve>
where
    F: Fn(Complex64) -> Result<Complex64> + Sync,
{
    if !(eps_im > 0.0) {
        return invalid(format!("eps_im must be positive, got {eps_im}"));
    }
    let raw: Vec<Option<f64>> = x_points
        .par_iter()
        .map(|&x| {
            let at = |eps: f64| mu2_at(Complex64::new(x, -eps)).ok().map(|m| m.im / PI);
            let v = at(eps_im)?;
            if richardson {
                Some(2.0 * v - at(2.0 * eps_im)?)
            } else {
                Some(v)
            }
        })
        .collect();
    Ok(assemble(x_points.to_vec(), raw, eps_im))
}

fn assemble(x_points: Vec<f64>, raw: Vec<Option<f64>>, eps_im: f64) -> DensityCurve {
    let mut clamped_max: f64 = 0.0;
    let missing: Vec<bool> = raw.iter().map(Option::is_none).collect();
    let values = raw
        .into_iter()
        .map(|v| match v {
            None => f64::NAN,
            Some(v) if v < 0.0 => {
                clamped_max = clamped_max.max(-v);
                0.0
            }
            Some(v) => v,
        })
        .collect();
    DensityCurve { x_points, values, eps_im, clamped_max, missing }
}

/// Per-point record of a solver-backed inversion.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PointDiagnostics {
    pub x: f64,
    #[serde(flatten)]
    pub k: KFunction,
}

/// Solves at `x - i eps` for every `x` and inverts; returns the curve of the
/// symmetric law together with per-point diagnostics. Non-converged points
/// are marked missing.
pub fn upsilon_from_solver(
    solver: &Solver,
    x_points: &[f64],
    eps_im: f64,
    richardson: bool,
) -> Result<(DensityCurve, Vec<PointDiagnostics>)> {
    if !(eps_im > 0.0) {
        return invalid(format!("eps_im must be positive, got {eps_im}"));
    }
    let solved: Vec<(Option<f64>, PointDiagnostics)> = x_points
        .par_iter()
        .map(|&x| -> Result<_> {
            let k = solver.solve_report(Complex64::new(x, -eps_im))?;
            let mut value = k.converged.then(|| k.mu2.im / PI);
            if richardson && value.is_some() {
                let k2 = solver.solve_report(Complex64::new(x, -2.0 * eps_im))?;
                value = if k2.converged { value.map(|v| 2.0 * v - k2.mu2.im / PI) } else { None };
            }
            Ok((value, PointDiagnostics { x, k }))
        })
        .collect::<Result<_>>()?;
    let (raw, diags): (Vec<_>, Vec<_>) = solved.into_iter().unzip();
    Ok((assemble(x_points.to_vec(), raw, eps_im), diags))
}

/// Density of `X^2` for a symmetric law of `X`: `f(l) = v(sqrt l) / sqrt l`.
pub fn push_forward_square(ups: &DensityCurve) -> Result<DensityCurve> {
    if ups.x_points.iter().any(|&x| x < 0.0) {
        return invalid("push-forward expects the symmetric law sampled on x >= 0");
    }
    let mut x_points = Vec::new();
    let mut values = Vec::new();
    let mut missing = Vec::new();
    for ((&x, &v), &m) in ups.x_points.iter().zip(&ups.values).zip(&ups.missing) {
        if x == 0.0 {
            continue;
        }
        x_points.push(x * x);
        values.push(v / x);
        missing.push(m);
    }
    if x_points.is_empty() {
        return Err(Error::Empty("no positive abscissa to push forward"));
    }
    Ok(DensityCurve { x_points, values, eps_im: ups.eps_im, clamped_max: ups.clamped_max, missing })
}

/// `(1/N) sum 1/(z - lambda_i)`.
pub fn stieltjes_of_spectrum(s: &SpectrumResult, z: Complex64) -> Complex64 {
    let sum: Complex64 = s.eigenvalues.iter().map(|&l| (z - l).inv()).sum();
    sum / s.eigenvalues.len() as f64
}

/// `n` log-spaced points in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
}

/// `n` equally spaced points in `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Default eigenvalue grid: 200 log-spaced points in `[1e-2, 20]`.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-2, 20.0, 200)
}

/// Cumulative distribution of `X^2` built from the symmetric law of `X`.
///
/// `F(l) = 2 \int_0^{sqrt l} v(x) dx`, trapezoid on the sampled abscissae
/// with the segment below the first sample treated as flat.
#[derive(Debug, Clone)]
pub struct SquaredCdf {
    xs: Vec<f64>,
    cum: Vec<f64>,
}

impl SquaredCdf {
    pub fn from_upsilon(ups: &DensityCurve) -> Result<Self> {
        if ups.x_points.len() < 2 {
            return Err(Error::Empty("need at least two density samples"));
        }
        if ups.missing_count() > 0 {
            return Err(Error::Incompatible(format!(
                "{} density samples are missing",
                ups.missing_count()
            )));
        }
        let mut xs = vec![0.0];
        let mut cum = vec![0.0];
        let mut acc = 2.0 * ups.x_points[0] * ups.values[0];
        xs.push(ups.x_points[0]);
        cum.push(acc);
        for (x, v) in ups.x_points.windows(2).zip(ups.values.windows(2)) {
            acc += (x[1] - x[0]) * (v[0] + v[1]);
            xs.push(x[1]);
            cum.push(acc);
        }
        Ok(Self { xs, cum })
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        if lambda <= 0.0 {
            return 0.0;
        }
        let x = lambda.sqrt();
        let k = self.xs.partition_point(|&v| v <= x);
        if k >= self.xs.len() {
            return *self.cum.last().unwrap();
        }
        let (x0, x1) = (self.xs[k - 1], self.xs[k]);
        let (c0, c1) = (self.cum[k - 1], self.cum[k]);
        c0 + (c1 - c0) * (x - x0) / (x1 - x0)
    }

    /// Largest `lambda` covered by the samples.
    pub fn max_lambda(&self) -> f64 {
        let x = *self.xs.last().unwrap();
        x * x
    }

    /// Mass on `(lambda, max_lambda]`.
    pub fn tail(&self, lambda: f64) -> f64 {
        (self.total() - self.eval(lambda)).max(0.0)
    }

    /// Total mass captured on the sampled window.
    pub fn total(&self) -> f64 {
        *self.cum.last().unwrap()
    }
}

/// Solved mass of the eigenvalue law on `(lambda0, max_lambda]`.
///
/// Integrating the tail directly keeps the estimate free of the quadrature
/// error near the origin that `1 - F(lambda0)` would inherit.
pub fn tail_mass_beyond(ups: &DensityCurve, lambda0: f64) -> Result<f64> {
    let cdf = SquaredCdf::from_upsilon(ups)?;
    if lambda0 > cdf.max_lambda() * (1.0 + 1e-12) {
        return Err(Error::Incompatible(format!(
            "threshold {lambda0} is beyond the sampled window ({})",
            cdf.max_lambda()
        )));
    }
    Ok(cdf.tail(lambda0))
}

/// Writes a two-column density file with `#` metadata lines.
pub fn write_density_csv(path: &Path, header: &str, x_name: &str, curve: &DensityCurve) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(header.as_bytes())?;
    writeln!(out, "{x_name},density")?;
    for (x, v) in curve.x_points.iter().zip(&curve.values) {
        if v.is_finite() {
            writeln!(out, "{x},{v}")?;
        } else {
            writeln!(out, "{x},nan")?;
        }
    }
    Ok(())
}

/// Reads a two-column density file, skipping `#` lines and the header.
pub fn read_density_csv(path: &Path) -> Result<DensityCurve> {
    let text = std::fs::read_to_string(path)?;
    let mut x_points = Vec::new();
    let mut values = Vec::new();
    let mut missing = Vec::new();
    let mut eps_im = f64::NAN;
    let mut seen_header = false;
    for line in text.lines() {
        let line = line.trim();
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((k, v)) = meta.split_once('=') {
                if k.trim() == "eps_im" {
                    eps_im = v.trim().parse().unwrap_or(f64::NAN);
                }
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        if !seen_header {
            seen_header = true;
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("{}: bad line '{line}'", path.display())))?;
        let x: f64 = a.trim().parse().map_err(|_| Error::Parse(format!("bad abscissa '{a}'")))?;
        let v: f64 = b.trim().parse().map_err(|_| Error::Parse(format!("bad density '{b}'")))?;
        x_points.push(x);
        missing.push(!v.is_finite());
        values.push(v);
    }
    if x_points.is_empty() {
        return Err(Error::Empty("density file has no rows"));
    }
    Ok(DensityCurve { x_points, values, eps_im, clamped_max: 0.0, missing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn semicircle_stieltjes(z: Complex64) -> Complex64 {
        // branch with Im z Im G < 0
        let s = (z * z - 4.0).sqrt();
        let g = (z - s) / 2.0;
        if g.im * z.im <= 0.0 {
            g
        } else {
            (z + s) / 2.0
        }
    }

    #[test]
    fn semicircle_inversion() {
        let xs = [0.0, 1.0, 10.0];
        let curve = invert_stieltjes(|z| Ok(semicircle_stieltjes(z)), &xs, 0.01, false).unwrap();
        assert!((curve.values[0] - 1.0 / PI).abs() < 0.01);
        assert!((curve.values[1] - 3f64.sqrt() / (2.0 * PI)).abs() < 0.01);
        assert!(curve.values[2] < 0.005);
        assert!(curve.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn negative_values_are_clamped_and_reported() {
        let curve = invert_stieltjes(|_| Ok(Complex64::new(0.0, -0.3)), &[1.0, 2.0], 0.01, false).unwrap();
        assert_eq!(curve.values, vec![0.0, 0.0]);
        assert_relative_eq!(curve.clamped_max, 0.3 / PI, epsilon = 1e-15);
    }

    #[test]
    fn failures_are_missing_not_interpolated() {
        let curve = invert_stieltjes(
            |z| if z.re > 1.5 { Err(Error::NonConvergence { residual: 1.0, iterations: 1 }) } else { Ok(Complex64::new(0.0, 1.0)) },
            &[1.0, 2.0, 1.2],
            0.01,
            false,
        )
        .unwrap();
        assert_eq!(curve.missing, vec![false, true, false]);
        assert!(curve.values[1].is_nan());
        assert!(SquaredCdf::from_upsilon(&curve).is_err());
    }

    #[test]
    fn semicircle_pushes_forward_to_mp() {
        let xs = linear_grid(0.0, 2.0, 401);
        let ups = DensityCurve {
            values: xs.iter().map(|&x| (4.0 - x * x).max(0.0).sqrt() / (2.0 * PI)).collect(),
            missing: vec![false; xs.len()],
            x_points: xs,
            eps_im: 0.0,
            clamped_max: 0.0,
        };
        let f = push_forward_square(&ups).unwrap();
        assert_eq!(f.x_points.len(), 400);
        for (l, v) in f.x_points.iter().zip(&f.values) {
            assert!((v - crate::spectra::mp_density(*l, 1.0)).abs() < 1e-9, "{l}");
        }
        assert_eq!(*f.values.last().unwrap(), 0.0);
        // mass: int f dl = 2 int_{x > 0} v dx
        let mass_l: f64 = {
            let cdf = SquaredCdf::from_upsilon(&ups).unwrap();
            cdf.eval(4.0)
        };
        assert_relative_eq!(mass_l, 2.0 * ups.mass(), max_relative = 1e-12);
        assert!((mass_l - 1.0).abs() < 1e-3);
    }

    #[test]
    fn spectrum_stieltjes() {
        let s = SpectrumResult { eigenvalues: vec![1.0], n: 1, t_steps: 1 };
        let g = stieltjes_of_spectrum(&s, Complex64::new(0.0, 1.0));
        assert_relative_eq!(g.re, -0.5, epsilon = 1e-15);
        assert_relative_eq!(g.im, -0.5, epsilon = 1e-15);
        let s = SpectrumResult { eigenvalues: vec![0.1, 0.5, 3.0, 7.0], n: 4, t_steps: 4 };
        for &z in &[Complex64::new(0.5, 0.01), Complex64::new(-2.0, -0.3)] {
            assert!(stieltjes_of_spectrum(&s, z).norm() <= 1.0 / z.im.abs());
        }
    }

    #[test]
    fn grids() {
        let g = default_lambda_grid();
        assert_eq!(g.len(), 200);
        assert_relative_eq!(g[0], 0.01, max_relative = 1e-12);
        assert_relative_eq!(g[199], 20.0, max_relative = 1e-12);
        assert_eq!(linear_grid(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn density_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let c = DensityCurve {
            x_points: vec![0.1, 0.2],
            values: vec![0.5, f64::NAN],
            eps_im: 0.01,
            clamped_max: 0.0,
            missing: vec![false, true],
        };
        write_density_csv(&p, "# eps_im = 0.01\n", "lambda", &c).unwrap();
        let r = read_density_csv(&p).unwrap();
        assert_eq!(r.x_points, c.x_points);
        assert_eq!(r.missing, c.missing);
        assert_eq!(r.eps_im, 0.01);
    }
}
