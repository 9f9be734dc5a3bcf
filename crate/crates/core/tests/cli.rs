//! Black-box tests of the command-line binary: artifact shapes, exit
//! codes, and cross-subcommand plumbing.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qvar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qvar"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn qvar_ok(dir: &Path, args: &[&str]) -> String {
    let out = qvar(dir, args);
    assert!(
        out.status.success(),
        "qvar {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn explore_selects_lag_one_on_white_noise() {
    let dir = tempfile::tempdir().unwrap();
    qvar_ok(
        dir.path(),
        &[
            "generate", "--process", "gaussian-ar1", "--phi", "0", "--n", "1500",
            "--seed", "4", "--out", ".",
        ],
    );
    let stdout = qvar_ok(
        dir.path(),
        &["explore", "--input", "series.csv", "--max-p", "5", "--out", "."],
    );
    assert!(stdout.contains("chosen lag: 1"), "stdout: {stdout}");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["chosen_lag"], 1);
    for f in ["acf.csv", "pacf.csv", "bic.csv", "manifest.json"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
}

#[test]
fn explore_acf_recovers_ar1_slope() {
    let dir = tempfile::tempdir().unwrap();
    qvar_ok(
        dir.path(),
        &[
            "generate", "--process", "gaussian-ar1", "--phi", "0.6", "--n", "4000",
            "--seed", "8", "--out", ".",
        ],
    );
    qvar_ok(
        dir.path(),
        &["explore", "--input", "series.csv", "--max-p", "3", "--out", "."],
    );
    let acf = fs::read_to_string(dir.path().join("acf.csv")).unwrap();
    let first = acf.lines().nth(1).unwrap();
    let value: f64 = first.split(',').nth(1).unwrap().parse().unwrap();
    assert!((value - 0.6).abs() < 0.05, "lag-1 autocorrelation {value}");
}

#[test]
fn missing_input_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = qvar(
        dir.path(),
        &["explore", "--input", "nonexistent.csv", "--out", "."],
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nonexistent.csv"), "stderr: {stderr}");
}

#[test]
fn fit_backtest_roundtrip_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    qvar_ok(
        dir.path(),
        &[
            "generate", "--process", "gaussian-ar1", "--phi", "0.5", "--n", "900",
            "--seed", "2", "--out", ".",
        ],
    );
    let stdout = qvar_ok(
        dir.path(),
        &[
            "fit-qar", "--input", "series.csv", "--alpha", "0.9", "--lag", "1",
            "--out", "fit",
        ],
    );
    assert!(stdout.contains("540 train / 360 test"), "stdout: {stdout}");
    let forecasts = fs::read_to_string(dir.path().join("fit/forecasts.csv")).unwrap();
    assert!(forecasts.starts_with("t,y,var_forecast,violation\n"));
    assert_eq!(forecasts.lines().count(), 361);

    qvar_ok(
        dir.path(),
        &[
            "backtest", "--input", "fit/forecasts.csv", "--alpha", "0.9",
            "--out", "bt",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("bt/backtest.json")).unwrap())
            .unwrap();
    for key in ["exp", "act", "uc.LRp", "cc.LRp", "uc.D", "cc.D"] {
        assert!(report.get(key).is_some(), "backtest.json missing {key}");
    }
    // floor((1-0.9)*360): the binary representation of 0.1 lands just
    // below 36, and the floor convention keeps it there
    assert_eq!(report["exp"], 35);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("bt/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "backtest");
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["input_digests"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["outputs"][0], "backtest.json");
}

#[test]
fn run_cqar_emits_per_level_series_and_regret() {
    let dir = tempfile::tempdir().unwrap();
    qvar_ok(
        dir.path(),
        &[
            "generate", "--process", "gaussian-ar1", "--phi", "0.5", "--n", "250",
            "--seed", "3", "--out", ".",
        ],
    );
    qvar_ok(
        dir.path(),
        &[
            "fit-qar", "--input", "series.csv", "--alpha", "0.9", "--lag", "1",
            "--out", ".",
        ],
    );
    qvar_ok(
        dir.path(),
        &[
            "run-cqar", "--input", "series.csv", "--lag", "1", "--alpha", "0.9",
            "--alpha", "0.95", "--iters", "100", "--burn-in", "20",
            "--comparator", "model.json", "--out", "cq",
        ],
    );
    for f in ["cqar_0.90.csv", "cqar_0.95.csv", "regret_0.90.csv", "regret_0.95.csv"] {
        assert!(dir.path().join("cq").join(f).is_file(), "missing {f}");
    }
    let text = fs::read_to_string(dir.path().join("cq/cqar_0.90.csv")).unwrap();
    assert!(text.starts_with("t,y,gamma,loss,cumulative_loss,acceptance_ratio\n"));
    assert_eq!(text.lines().count(), 250); // header + 249 scored steps
    let regret = fs::read_to_string(dir.path().join("cq/regret_0.90.csv")).unwrap();
    assert!(regret.starts_with("t,avg_regret,bound\n"));
}

#[test]
fn tune_prints_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    qvar_ok(
        dir.path(),
        &[
            "generate", "--process", "gaussian-ar1", "--phi", "0.5", "--n", "200",
            "--seed", "5", "--out", ".",
        ],
    );
    let stdout = qvar_ok(
        dir.path(),
        &[
            "run-cqar", "--input", "series.csv", "--lag", "1", "--iters", "80",
            "--burn-in", "20", "--tune", "--out", ".",
        ],
    );
    assert!(stdout.starts_with("a,sigma,acceptance_ratio,pinball_loss\n"));
    assert_eq!(stdout.lines().count(), 10); // header + 3x3 grid
    assert!(dir.path().join("tune.csv").is_file());
}

#[test]
fn generate_qar1_uses_coefficient_tables() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("coeffs.json"),
        r#"{"theta0": {"knots": [0.0, 1.0], "values": [-1.0, 1.0]},
            "theta1": {"knots": [0.0, 1.0], "values": [0.2, 0.8]}}"#,
    )
    .unwrap();
    qvar_ok(
        dir.path(),
        &[
            "generate", "--process", "qar1", "--coeffs", "coeffs.json", "--n", "500",
            "--seed", "1", "--out", ".",
        ],
    );
    let text = fs::read_to_string(dir.path().join("series.csv")).unwrap();
    assert_eq!(text.lines().count(), 501);
    assert_eq!(text.lines().next().unwrap(), "value");
}
