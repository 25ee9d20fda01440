use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use mrw_spectra::compare::sample_from_cdf;
use mrw_spectra::density::{read_density_csv, SquaredCdf};
use mrw_spectra::seed::{stream_rng, Domain};
use mrw_spectra::spectra::{mp_density, read_eigenvalues_csv, write_eigenvalues_csv, SpectrumResult};
use rand::Rng;
use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrw-spectra")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path(dir: &Path) -> &str {
    dir.to_str().unwrap()
}

/// Flags for a solve small enough to finish in a few seconds.
const SMALL_SOLVE: &[&str] =
    &["--grid", "32", "--sim-grid", "256", "--ensemble", "100", "--points", "60", "--lambda-max", "12"];

fn solve(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["solve", "--out-dir", path(dir)];
    args.extend_from_slice(SMALL_SOLVE);
    args.extend_from_slice(extra);
    run(&args)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn smoke_simulation_is_fast() {
    let tmp = TempDir::new().unwrap();
    let start = Instant::now();
    let out = run(&["simulate", "--gamma2", "0", "--n", "64", "--out-dir", path(tmp.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed() < Duration::from_secs(5));
    for f in ["eigenvalues.csv", "histogram.csv", "manifest.txt"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
}

#[test]
fn simulation_ensemble_size() {
    let tmp = TempDir::new().unwrap();
    let out = run(&[
        "simulate", "--gamma2", "0.25", "--tau", "0.25", "--q", "1", "--n", "1024", "--ensemble", "8", "--seed", "7",
        "--out-dir", path(tmp.path()),
    ]);
    assert_eq!(code(&out), 0);
    let samples = read_eigenvalues_csv(&tmp.path().join("eigenvalues.csv")).unwrap();
    assert_eq!(samples.len(), 8);
    assert!(samples.iter().all(|s| s.len() == 1024));
}

#[test]
fn usage_errors() {
    let tmp = TempDir::new().unwrap();
    let dir = path(tmp.path());
    assert_eq!(code(&run(&["simulate", "--gamma2", "0.25", "--out-dir", dir])), 2);
    assert_eq!(code(&solve(tmp.path(), &["--tol", "0"])), 2);
    assert_eq!(code(&run(&["simulate", "--n", "8", "--gamma2", "2.5", "--out-dir", dir])), 2);
    assert_eq!(code(&run(&["simulate", "--n", "8", "--threads", "0", "--out-dir", dir])), 2);
    assert_eq!(code(&run(&["simulate", "--n", "8", "--preset", "nope", "--out-dir", dir])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    let cfg = tmp.path().join("bad.txt");
    std::fs::write(&cfg, "colour = blue\n").unwrap();
    assert_eq!(code(&run(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", dir])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn partial_convergence_exit_code() {
    let tmp = TempDir::new().unwrap();
    let out = solve(tmp.path(), &["--max-iter", "2", "--tol", "1e-12"]);
    assert_eq!(code(&out), 3);
    let report = json(&tmp.path().join("diagnostics.json"));
    assert!(report["summary"]["converged_fraction"].as_f64().unwrap() < 0.95);
}

#[test]
fn marchenko_pastur_solve() {
    let tmp = TempDir::new().unwrap();
    let out = solve(
        tmp.path(),
        &["--gamma2", "0", "--points", "200", "--lambda-min", "0.05", "--lambda-max", "4", "--richardson"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let d = read_density_csv(&tmp.path().join("density.csv")).unwrap();
    let l1: f64 = d
        .x_points
        .windows(2)
        .zip(d.values.windows(2))
        .map(|(x, v)| {
            let e0 = (v[0] - mp_density(x[0], 1.0)).abs();
            let e1 = (v[1] - mp_density(x[1], 1.0)).abs();
            0.5 * (x[1] - x[0]) * (e0 + e1)
        })
        .sum();
    assert!(l1 < 0.05, "L1 {l1}");
    let report = json(&tmp.path().join("diagnostics.json"));
    assert_eq!(report["summary"]["converged_fraction"].as_f64(), Some(1.0));
    assert_eq!(report["diagnostics"].as_array().unwrap().len(), 200);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let tmp = TempDir::new().unwrap();
    let files = |sub: &str| -> Vec<Vec<u8>> {
        ["eigenvalues.csv", "histogram.csv", "density.csv", "upsilon.csv", "diagnostics.json"]
            .iter()
            .map(|f| std::fs::read(tmp.path().join(sub).join(f)).unwrap())
            .collect()
    };
    for threads in ["1", "3"] {
        let dir = tmp.path().join(threads);
        let d = path(&dir);
        let sim = run(&["simulate", "--n", "96", "--ensemble", "4", "--seed", "5", "--threads", threads, "--out-dir", d]);
        assert_eq!(code(&sim), 0);
        assert_eq!(code(&solve(&dir, &["--threads", threads, "--gamma2", "0.3"])), 0);
    }
    assert_eq!(files("1"), files("3"));
}

#[test]
fn manifest_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let first = tmp.path().join("first");
    assert_eq!(code(&solve(&first, &["--gamma2", "0.2", "--tau", "0.5", "--q", "0.5", "--seed", "9"])), 0);
    let manifest = std::fs::read_to_string(first.join("manifest.txt")).unwrap();
    for key in ["gamma2", "tau", "q", "grid", "sim_grid", "ensemble", "tol", "eps_im", "seed", "points"] {
        assert!(manifest.lines().any(|l| l.starts_with(&format!("{key} ="))), "{key} missing");
    }
    let second = tmp.path().join("second");
    let m = first.join("manifest.txt");
    assert_eq!(code(&run(&["solve", "--config", m.to_str().unwrap(), "--out-dir", path(&second)])), 0);
    for f in ["density.csv", "upsilon.csv"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sweep_preset_writes_one_directory_per_run() {
    let tmp = TempDir::new().unwrap();
    let extra = ["--preset", "fig3", "--points", "10", "--ensemble", "20"];
    assert_eq!(code(&solve(tmp.path(), &extra)), 0);
    for sub in ["gamma2_0", "gamma2_0.25", "gamma2_0.5"] {
        let m = std::fs::read_to_string(tmp.path().join(sub).join("manifest.txt")).unwrap();
        assert!(m.contains(&format!("gamma2 = {}", &sub[7..])), "{sub}");
    }
}

#[test]
fn compare_against_simulation_and_between_solves() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    let mp = tmp.path().join("mp");
    let light = tmp.path().join("light");
    let heavy = tmp.path().join("heavy");
    let out = run(&["simulate", "--gamma2", "0", "--n", "512", "--ensemble", "1", "--seed", "2", "--out-dir", path(&sim)]);
    assert_eq!(code(&out), 0);
    assert_eq!(code(&solve(&mp, &["--gamma2", "0", "--points", "150", "--richardson"])), 0);
    assert_eq!(code(&solve(&light, &["--gamma2", "0.25"])), 0);
    assert_eq!(code(&solve(&heavy, &["--gamma2", "0.5"])), 0);

    let report = tmp.path().join("report");
    let out = run(&[
        "compare", "--sim", path(&sim), "--solve", path(&mp), "--solve", path(&light), "--solve", path(&heavy),
        "--out-dir", path(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ks"));
    let r = json(&report.join("compare.json"));
    let entries = r["entries"].as_array().unwrap();
    assert!(entries[0]["ks"].as_f64().unwrap() < 0.05, "{}", entries[0]["ks"]);
    let tail4 = |e: &Value| e["tails"][0]["theoretical"].as_f64().unwrap();
    assert_eq!(entries[1]["tails"][0]["threshold"].as_f64(), Some(4.0));
    assert!(tail4(&entries[2]) > tail4(&entries[1]), "{} vs {}", tail4(&entries[2]), tail4(&entries[1]));
    assert!(report.join("compare.txt").exists());

    // the solved window stops at 12, so a window reaching 20 is rejected
    let out = run(&["compare", "--sim", path(&sim), "--solve", path(&mp), "--hi", "20"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn compare_with_own_resampled_histogram() {
    let tmp = TempDir::new().unwrap();
    let solved = tmp.path().join("solved");
    assert_eq!(code(&solve(&solved, &["--gamma2", "0.25", "--points", "150"])), 0);
    let ups = read_density_csv(&solved.join("upsilon.csv")).unwrap();
    let cdf = SquaredCdf::from_upsilon(&ups).unwrap();
    let mut rng = stream_rng(1, Domain::Simulation, 0);
    let uniforms: Vec<f64> = (0..400_000).map(|_| rng.random::<f64>()).collect();
    let draws = sample_from_cdf(&cdf, &uniforms);
    let sim = tmp.path().join("resampled");
    std::fs::create_dir_all(&sim).unwrap();
    let spectrum = SpectrumResult { n: draws.len(), t_steps: draws.len(), eigenvalues: draws };
    write_eigenvalues_csv(&sim.join("eigenvalues.csv"), "", &[spectrum]).unwrap();

    let report = tmp.path().join("report");
    let out = run(&["compare", "--sim", path(&sim), "--solve", path(&solved), "--out-dir", path(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let l1 = json(&report.join("compare.json"))["entries"][0]["l1"].as_f64().unwrap();
    assert!(l1 < 0.02, "L1 {l1}");
}
