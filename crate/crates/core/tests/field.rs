use mrw_spectra::field::{ln_plus, ln_plus_kernel, rho_eps, sample_field, LogFieldSampler};
use mrw_spectra::seed::{stream_rng, Domain};
use mrw_spectra::Grid;
use proptest::prelude::*;

/// Mean and standard error of a sample.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn covariance_matches_kernel_at_selected_lags() {
    let grid = Grid::new(256).unwrap();
    let (gamma2, tau) = (1.0, 0.25);
    let eta = grid.spacing();
    let sampler = LogFieldSampler::new(grid, gamma2, tau, eta).unwrap();
    let samples: Vec<Vec<f64>> = (0..10_000u64)
        .map(|i| sampler.sample(&mut stream_rng(11, Domain::Field, i)).values)
        .collect();

    // one pair per realization keeps the products independent; the anchor
    // moves around the grid to exercise stationarity
    for lag in [0usize, 1, 4, 16] {
        let products: Vec<f64> = samples
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let a = (i * 37) % (grid.n_points() - lag);
                v[a] * v[a + lag]
            })
            .collect();
        let (est, se) = mean_se(&products);
        let target = gamma2 * ln_plus(tau / (lag as f64 * grid.spacing() + eta));
        assert!((est - target).abs() <= 3.0 * se, "lag {lag}: {est} vs {target} (se {se})");
    }

    let means: Vec<f64> = samples.iter().map(|v| v[100]).collect();
    let (m, se) = mean_se(&means);
    assert!(m.abs() <= 3.0 * se, "mean {m} (se {se})");
}

#[test]
fn zero_intermittency_and_determinism() {
    let grid = Grid::new(64).unwrap();
    let flat = sample_field(grid, 0.0, 0.25, grid.spacing(), 3).unwrap();
    assert!(flat.values.iter().all(|&v| v == 0.0));
    let a = sample_field(grid, 0.5, 0.25, grid.spacing(), 3).unwrap();
    let b = sample_field(grid, 0.5, 0.25, grid.spacing(), 3).unwrap();
    let c = sample_field(grid, 0.5, 0.25, grid.spacing(), 4).unwrap();
    assert_eq!(a.values, b.values);
    assert_ne!(a.values, c.values);
}

#[test]
fn kernel_examples() {
    assert_eq!(ln_plus_kernel(0.5, 0.25, 0.25, 1e-3), 1.0);
    assert_eq!(ln_plus_kernel(0.01, 0.0, 0.25, 1e-3), 1.0);
    let e = std::f64::consts::E;
    assert!((ln_plus_kernel(1.0 / e, 1.0, 1.0, 1e-3) - e).abs() < 1e-12);
    assert!((rho_eps(0.0, 1.0 / e, 1.0).unwrap() - 2.0).abs() < 1e-12);
    assert!((rho_eps(0.5, 0.01, 1.0).unwrap() - 2f64.ln()).abs() < 1e-12);
    assert_eq!(rho_eps(2.0, 0.3, 1.0).unwrap(), 0.0);
}

proptest! {
    #[test]
    fn rho_eps_non_increasing_in_lag(a in 0.0f64..2.0, b in 0.0f64..2.0, eps in 1e-4f64..0.5) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(rho_eps(lo, eps, 1.0).unwrap() >= rho_eps(hi, eps, 1.0).unwrap() - 1e-12);
    }

    #[test]
    fn rho_eps_increases_to_log_kernel(lag in 1e-3f64..1.5) {
        let limit = ln_plus(1.0 / lag);
        let mut prev = f64::NEG_INFINITY;
        for eps in [0.5, 0.1, 1e-2, 1e-3, 1e-4, 1e-5] {
            let v = rho_eps(lag, eps, 1.0).unwrap();
            prop_assert!(v >= prev - 1e-12);
            prop_assert!(v <= limit + 1e-12);
            prev = v;
        }
        prop_assert!((prev - limit).abs() < 1e-9);
    }

    #[test]
    fn power_kernel_is_at_least_one(lag in -2.0f64..2.0, gamma2 in 0.0f64..1.9, tau in 0.01f64..4.0) {
        let w = ln_plus_kernel(lag, gamma2, tau, 1e-3);
        prop_assert!(w >= 1.0);
        prop_assert_eq!(w, ln_plus_kernel(-lag, gamma2, tau, 1e-3));
    }
}
