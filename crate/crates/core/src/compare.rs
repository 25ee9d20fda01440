//! Distances between simulated eigenvalue samples and solved densities.

use crate::density::SquaredCdf;
use crate::error::{invalid, Error, Result};
use crate::spectra::EsdHistogram;

/// Kolmogorov-Smirnov distance between the empirical law of `sample` and
/// `cdf`, with the supremum taken over `[lo, hi]`.
///
/// The empirical distribution uses the whole sample; only the points where
/// the supremum is searched are restricted to the window.
pub fn ks_distance<F: Fn(f64) -> f64>(sample: &[f64], cdf: F, lo: f64, hi: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Empty("KS distance of an empty sample"));
    }
    if !(hi > lo) {
        return invalid(format!("empty KS window [{lo}, {hi}]"));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let below = |x: f64| sorted.partition_point(|&v| v <= x) as f64 / n;
    let strictly_below = |x: f64| sorted.partition_point(|&v| v < x) as f64 / n;

    let mut d = (below(lo) - cdf(lo)).abs().max((below(hi) - cdf(hi)).abs());
    let start = sorted.partition_point(|&v| v < lo);
    let end = sorted.partition_point(|&v| v <= hi);
    let mut i = start;
    while i < end {
        let v = sorted[i];
        let f = cdf(v);
        d = d.max((below(v) - f).abs()).max((strictly_below(v) - f).abs());
        // skip ties
        i = sorted.partition_point(|&u| u <= v).max(i + 1);
    }
    Ok(d)
}

/// `sum_bins |p_bin - (F(b) - F(a))|` over the histogram window, where `p_bin`
/// is the fraction of the full sample in the bin.
pub fn l1_histogram_distance<F: Fn(f64) -> f64>(hist: &EsdHistogram, cdf: F) -> f64 {
    hist.bin_edges
        .windows(2)
        .zip(&hist.probabilities)
        .map(|(e, p)| (p * hist.coverage - (cdf(e[1]) - cdf(e[0]))).abs())
        .sum()
}

/// Empirical and theoretical mass beyond a threshold.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TailRow {
    pub threshold: f64,
    pub empirical: f64,
    pub theoretical: f64,
}

pub fn tail_table(sample: &[f64], cdf: &SquaredCdf, thresholds: &[f64]) -> Vec<TailRow> {
    let n = sample.len() as f64;
    thresholds
        .iter()
        .map(|&t| TailRow {
            threshold: t,
            empirical: sample.iter().filter(|&&v| v > t).count() as f64 / n,
            theoretical: cdf.tail(t),
        })
        .collect()
}

/// Inverse-CDF draws from a solved law, used for self-consistency checks.
pub fn sample_from_cdf(cdf: &SquaredCdf, uniforms: &[f64]) -> Vec<f64> {
    let total = cdf.total();
    let hi = cdf.max_lambda();
    uniforms
        .iter()
        .map(|&u| {
            let target = u * total;
            let (mut a, mut b) = (0.0, hi);
            for _ in 0..80 {
                let m = 0.5 * (a + b);
                if cdf.eval(m) < target {
                    a = m;
                } else {
                    b = m;
                }
            }
            0.5 * (a + b)
        })
        .collect()
}
