#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use scenario_core::verify::{benchmark_system, BENCHMARK_NAMES};
use tempfile::TempDir;

fn scenario(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_scenario"));
    cmd.args(args).env("RUST_LOG", "warn");
    if let Some(t) = threads {
        cmd.env("SCENARIO_THREADS", t.to_string());
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Runs `verify` once with a light configuration and returns the directory
/// holding `fixture.csv`.
fn fixture() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let cfg = dir.path().join("verify.toml");
        std::fs::write(
            &cfg,
            "out = \"verify\"\n[verify]\nparticles = [5]\ndraws = 40\nirf_draws = 20\nirf_particles = 5\n",
        )
        .unwrap();
        ok(&scenario(&["verify", "--config", cfg.to_str().unwrap()], None));
        dir
    })
    .path()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let data = fixture().join("verify/fixture.csv");
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("data = \"{}\"\n{body}", data.display())).unwrap();
    path
}

type Table = Vec<BTreeMap<String, String>>;

fn read_csv(path: &Path) -> Table {
    let mut r = csv::Reader::from_path(path).unwrap();
    let h: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    r.records()
        .map(|rec| {
            h.iter()
                .cloned()
                .zip(rec.unwrap().iter().map(String::from))
                .collect()
        })
        .collect()
}

fn num(row: &BTreeMap<String, String>, col: &str) -> f64 {
    row[col].parse().unwrap()
}

const SMALL_LINEAR: &str =
    "[model]\nbackend = \"linear\"\np = 2\n[sampler]\nn_burn = 50\nn_save = 60\nseed = 9\n";

#[test]
fn verify_writes_fixture_and_reports() {
    let dir = fixture().join("verify");
    for f in [
        "fixture.csv",
        "verify_bands.csv",
        "verify_runtime.csv",
        "verify_irf.csv",
        "manifest.json",
    ] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let fx = read_csv(&dir.join("fixture.csv"));
    assert_eq!(fx.len(), 1000);
    assert_eq!(fx[0]["date"], "1776Q1");
    let irf = read_csv(&dir.join("verify_irf.csv"));
    assert_eq!(irf.len(), BENCHMARK_NAMES.len());
    for row in &irf {
        assert!(num(row, "recursive_shared_max_err") < 1e-8);
    }
}

#[test]
fn missing_data_file_is_an_input_error_naming_the_path() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "data = \"no_such_file.csv\"\n[forecast]\nhorizon = 4\n",
    )
    .unwrap();
    let out = scenario(&["forecast", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_file.csv"));

    let out = scenario(&["estimate", "--config", "/nonexistent/run.toml"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/run.toml"));
}

#[test]
fn bad_restriction_names_are_input_errors() {
    let dir = TempDir::new().unwrap();
    std::fs::write(
        dir.path().join("r.toml"),
        "[[restriction]]\nhorizon = 1\nkind = \"obs\"\nweights = { OIL = 1.0 }\nvalue = 1.0\nhardness = \"hard\"\n",
    )
    .unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL_LINEAR}[forecast]\nhorizon = 2\nrestrictions = \"r.toml\"\n"),
    );
    let out = scenario(&["forecast", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("OIL"));
}

#[test]
fn conditional_forecast_tracks_restrictions_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    std::fs::write(
        dir.path().join("r.toml"),
        "[[restriction]]\nhorizons = [1, 2, 3, 4]\nkind = \"obs\"\nweights = { FEDFUNDS = 1.0 }\nvalue = 5.0\nhardness = \"hard\"\n",
    )
    .unwrap();
    let body = format!("{SMALL_LINEAR}[forecast]\nhorizon = 6\nrestrictions = \"r.toml\"\n");
    let cfg = write_config(dir.path(), &body);
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&scenario(
        &[
            "forecast",
            "--config",
            cfg,
            "--chains",
            "2",
            "--out",
            a.to_str().unwrap(),
            "--dump-draws",
        ],
        Some(1),
    ));
    ok(&scenario(
        &[
            "forecast",
            "--config",
            cfg,
            "--chains",
            "2",
            "--out",
            b.to_str().unwrap(),
            "--dump-draws",
        ],
        Some(3),
    ));
    for f in ["forecast.csv", "draws.csv", "manifest.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }

    let rows = read_csv(&a.join("forecast.csv"));
    assert_eq!(rows.len(), 6 * BENCHMARK_NAMES.len());
    assert_eq!(rows[0]["date"], "2026Q1");
    for row in &rows {
        let qs: Vec<f64> = ["q16", "q25", "q50", "q75", "q84"]
            .iter()
            .map(|c| num(row, c))
            .collect();
        assert!(qs.windows(2).all(|w| w[0] <= w[1]), "{row:?}");
        let h: usize = row["horizon"].parse().unwrap();
        if row["variable"] == "FEDFUNDS" && h <= 4 {
            for c in ["mean", "q16", "q84"] {
                assert!((num(row, c) - 5.0).abs() < 1e-3, "{row:?}");
            }
        }
    }
    let draws = read_csv(&a.join("draws.csv"));
    assert_eq!(draws.len(), 2 * 60 * 6 * BENCHMARK_NAMES.len());

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["chains"], 2);
    assert_eq!(manifest["seed"], 9);
    assert!(manifest["files"]["forecast.csv"].is_string());
}

#[test]
fn linear_estimate_recovers_the_fixture_system() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "[model]\nbackend = \"linear\"\np = 5\n[sampler]\nn_burn = 200\nn_save = 300\nseed = 4\n",
    );
    ok(&scenario(
        &[
            "estimate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("e").to_str().unwrap(),
        ],
        None,
    ));
    let e = dir.path().join("e");
    for f in [
        "sigma.csv",
        "coefficients.csv",
        "residuals.csv",
        "outliers.csv",
        "fit_summary.json",
        "checkpoint_chain0.json",
    ] {
        assert!(e.join(f).is_file(), "{f} missing");
    }
    let sys = benchmark_system();
    let n = BENCHMARK_NAMES.len();
    let coef = read_csv(&e.join("coefficients.csv"));
    let mean_of = |i: usize, j: usize, lag: usize| {
        let reg = format!("{}.l{lag}", BENCHMARK_NAMES[j]);
        let row = coef
            .iter()
            .find(|r| r["equation"] == BENCHMARK_NAMES[i] && r["regressor"] == reg)
            .unwrap();
        num(row, "mean")
    };
    // Own first lags of the well-identified equations.
    for i in 1..4 {
        let (est, truth) = (mean_of(i, i, 1), sys.a[(i, i)]);
        assert!((est - truth).abs() < 0.06, "own lag {i}: {est} vs {truth}");
    }
    // Summed lag polynomial: the near-unit-root rate's lags are collinear individually.
    for (i, j) in [(3, 3), (1, 1), (2, 2), (2, 0), (0, 2)] {
        let est: f64 = (1..=5).map(|l| mean_of(i, j, l)).sum();
        let truth: f64 = (0..5).map(|l| sys.a[(i, l * n + j)]).sum();
        assert!(
            (est - truth).abs() < 0.1,
            "sum of lags ({i},{j}): {est} vs {truth}"
        );
    }

    let sigma = read_csv(&e.join("sigma.csv"));
    for i in 0..n {
        let row = sigma
            .iter()
            .find(|r| r["row"] == BENCHMARK_NAMES[i] && r["column"] == BENCHMARK_NAMES[i])
            .unwrap();
        let truth = sys.sigma[(i, i)];
        assert!(
            (num(row, "mean") / truth - 1.0).abs() < 0.15,
            "sigma {i}: {} vs {truth}",
            row["mean"]
        );
    }
    let fit: serde_json::Value =
        serde_json::from_slice(&std::fs::read(e.join("fit_summary.json")).unwrap()).unwrap();
    assert_eq!(fit["draws"], 300);
    assert_eq!(fit["backend"], "linear");
}

#[test]
fn scaled_recursive_sgirf_is_identical_across_sizes() {
    let dir = TempDir::new().unwrap();
    let body = format!(
        "{SMALL_LINEAR}[girf]\nshock = \"FEDFUNDS\"\nsizes = [-1.0, 1.0, 3.0]\nhorizon = 8\nmethod = \"recursive\"\norigins = {{ list = [100, 500] }}\n"
    );
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("g");
    ok(&scenario(
        &[
            "girf",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    ));
    let rows = read_csv(&out.join("girf.csv"));
    assert_eq!(rows.len(), 3 * 2 * 8 * BENCHMARK_NAMES.len());
    let mut by_key: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for r in &rows {
        by_key
            .entry((
                r["origin"].clone(),
                r["horizon"].clone(),
                r["variable"].clone(),
            ))
            .or_default()
            .push(num(r, "mean"));
    }
    for (k, v) in by_key {
        assert_eq!(v.len(), 3);
        for x in &v {
            assert!((x - v[0]).abs() < 1e-9 * (1.0 + v[0].abs()), "{k:?}: {v:?}");
        }
    }
    let impact = rows
        .iter()
        .find(|r| r["size"] == "1" && r["horizon"] == "1" && r["variable"] == "FEDFUNDS")
        .unwrap();
    assert!(num(impact, "mean") > 0.0);
}

#[test]
fn bart_estimate_reports_move_acceptance() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "[model]\np = 1\ntrees = 10\n[sampler]\nn_burn = 10\nn_save = 10\n",
    );
    let out = dir.path().join("b");
    ok(&scenario(
        &[
            "estimate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    ));
    let fit: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("fit_summary.json")).unwrap()).unwrap();
    assert_eq!(fit["trees"], 10);
    let acc = fit["acceptance"].as_array().unwrap();
    assert_eq!(acc.len(), 4);
    assert!(!out.join("coefficients.csv").exists());
}
