use mrw_spectra::compare::{ks_distance, l1_histogram_distance};
use mrw_spectra::mrm::{sample_returns, ModelParams, ReturnsMatrix};
use mrw_spectra::seed::child_seed;
use mrw_spectra::spectra::{
    bn_spectrum_check, covariance_spectrum, esd_histogram, gram_spectrum, mp_cdf, mp_edges, pooled, BinSpec,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

#[test]
fn marchenko_pastur_at_moderate_size() {
    let p = ModelParams::new(0.0, 0.25, 1.0, 512).unwrap();
    let s = covariance_spectrum(&sample_returns(&p, 21).unwrap()).unwrap();
    assert_eq!(s.eigenvalues.len(), 512);
    let ks = ks_distance(&s.eigenvalues, |x| mp_cdf(x, 1.0), 0.0, 4.5).unwrap();
    assert!(ks < 0.05, "KS {ks}");
    let h = esd_histogram(&s.eigenvalues, BinSpec::Linear { bins: 40, lo: 0.0, hi: 4.0 }).unwrap();
    let l1 = l1_histogram_distance(&h, |x| mp_cdf(x, 1.0));
    assert!(l1 < 0.1, "L1 {l1}");
}

#[test]
fn rectangular_marchenko_pastur() {
    let q = 0.25;
    let p = ModelParams::new(0.0, 0.25, q, 256).unwrap();
    let s = covariance_spectrum(&sample_returns(&p, 22).unwrap()).unwrap();
    let (lo, hi) = mp_edges(q);
    assert!((lo - 0.25).abs() < 1e-15 && (hi - 2.25).abs() < 1e-15);
    let ks = ks_distance(&s.eigenvalues, |x| mp_cdf(x, q), 0.0, 3.0).unwrap();
    assert!(ks < 0.05, "KS {ks}");
}

#[test]
fn normalized_trace_has_unit_mean() {
    let p = ModelParams::new(0.25, 0.25, 1.0, 64).unwrap();
    let means: Vec<f64> = (0..200)
        .map(|k| covariance_spectrum(&sample_returns(&p, child_seed(3, k)).unwrap()).unwrap().mean())
        .collect();
    let n = means.len() as f64;
    let m = means.iter().sum::<f64>() / n;
    let se = (means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!((m - 1.0).abs() <= 3.0 * se, "{m} (se {se})");
}

#[test]
fn pooled_histogram_weights() {
    let a = ReturnsMatrix::from_entries(DMatrix::identity(3, 3));
    let s = covariance_spectrum(&a).unwrap();
    let all = pooled(&[s.clone(), s]);
    assert_eq!(all.len(), 6);
    let h = esd_histogram(&all, BinSpec::Linear { bins: 2, lo: 0.0, hi: 2.0 }).unwrap();
    assert_eq!(h.probabilities, vec![0.0, 1.0]);
}

#[test]
fn block_matrix_shapes() {
    let x = DMatrix::from_fn(2, 4, |i, j| (i * 4 + j) as f64 * 0.1 - 0.3);
    let c = bn_spectrum_check(&x, 1e-8).unwrap();
    assert!(c.passed);
    assert_eq!(c.extra_zeros, 2);
    let z = bn_spectrum_check(&DMatrix::zeros(3, 5), 1e-12).unwrap();
    assert!(z.passed && z.max_deviation == 0.0);
}

fn matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..7, 1usize..9).prop_flat_map(|(n, t)| {
        prop::collection::vec(-3.0f64..3.0, n * t).prop_map(move |v| DMatrix::from_vec(n, t, v))
    })
}

proptest! {
    #[test]
    fn trace_identity(x in matrix()) {
        let eig = gram_spectrum(&x).unwrap();
        prop_assert_eq!(eig.len(), x.nrows());
        prop_assert!(eig.iter().all(|&l| l >= 0.0));
        let total: f64 = eig.iter().sum();
        prop_assert!((total - x.norm_squared()).abs() <= 1e-9 * (1.0 + x.norm_squared()));
    }

    #[test]
    fn block_matrix_relation_holds(x in matrix()) {
        let c = bn_spectrum_check(&x, 1e-8).unwrap();
        prop_assert!(c.passed, "deviation {}", c.max_deviation);
        prop_assert_eq!(c.extra_zeros, x.nrows().abs_diff(x.ncols()));
    }

    #[test]
    fn histogram_is_a_distribution(v in prop::collection::vec(0.0f64..10.0, 1..200), bins in 1usize..50) {
        let h = esd_histogram(&v, BinSpec::Auto { bins }).unwrap();
        prop_assert!(h.probabilities.iter().all(|&p| p >= 0.0));
        prop_assert!((h.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(h.bin_edges.windows(2).all(|e| e[1] > e[0]));
    }

    #[test]
    fn row_order_is_irrelevant(x in matrix(), shift in 0usize..7) {
        let n = x.nrows();
        let perm = DMatrix::from_fn(n, x.ncols(), |i, j| x[((i + shift) % n, j)]);
        let a = gram_spectrum(&x).unwrap();
        let b = gram_spectrum(&perm).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-9 * (1.0 + u.abs()));
        }
    }
}
