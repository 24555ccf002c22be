use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use flowlab_experiments::Report;
use tempfile::TempDir;

fn flowlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowlab")).args(args).output().expect("binary runs")
}

fn run_into(dir: &Path, scenario: &str, extra: &[&str]) -> Output {
    let mut args = vec![scenario, "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    flowlab(&args)
}

const QUICK: [&str; 6] = ["--seed-count", "2", "--override", "samples=2", "--override", "lattice.extent=24"];

fn rows(dir: &Path) -> Vec<HashMap<String, String>> {
    let mut reader = csv::Reader::from_path(dir.join("metrics.csv")).unwrap();
    reader.deserialize().map(|r| r.unwrap()).collect()
}

#[test]
fn same_config_gives_byte_identical_metrics() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for dir in [&a, &b] {
        let out = run_into(dir.path(), "error-reduction", &QUICK);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |d: &TempDir| fs::read(d.path().join("metrics.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let report_a = Report::from_path(&a.path().join("report.json")).unwrap();
    let report_b = Report::from_path(&b.path().join("report.json")).unwrap();
    assert_eq!(report_a.artifacts, report_b.artifacts);
}

#[test]
fn zero_sigma_rows_equal_raw_rows() {
    let dir = TempDir::new().unwrap();
    let mut args = QUICK.to_vec();
    args.extend(["--override", "sigmas=[0,1]"]);
    let out = run_into(dir.path(), "error-reduction", &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let rows = rows(dir.path());
    let value = |seed: &str, variant: &str, metric: &str| -> f64 {
        rows.iter()
            .find(|r| r["seed"] == seed && r["variant"] == variant && r["metric"] == metric)
            .unwrap_or_else(|| panic!("missing {variant} {metric}"))["value"]
            .parse()
            .unwrap()
    };
    let mut compared = 0;
    for r in rows.iter().filter(|r| r["variant"] == "sigma=0") {
        let raw = value(&r["seed"], "raw", &r["metric"]);
        let relaxed: f64 = r["value"].parse().unwrap();
        assert!((relaxed - raw).abs() <= 1e-12, "{} {}: {relaxed} vs {raw}", r["seed"], r["metric"]);
        compared += 1;
    }
    assert_eq!(compared, 2 * 3);
}

#[test]
fn every_row_carries_the_config_hash() {
    let dir = TempDir::new().unwrap();
    assert!(run_into(dir.path(), "stability", &["--seed-count", "3"]).status.success());
    let report = Report::from_path(&dir.path().join("report.json")).unwrap();
    let rows = rows(dir.path());
    assert!(!rows.is_empty());
    for r in &rows {
        assert_eq!(r["config_hash"], report.config_hash);
        assert_eq!(r["experiment_id"], report.experiment_id);
    }
}

#[test]
fn verdicts_are_recomputable_from_rows() {
    let dir = TempDir::new().unwrap();
    assert!(run_into(dir.path(), "visibility", &["--seed-count", "2"]).status.success());
    let report = Report::from_path(&dir.path().join("report.json")).unwrap();
    assert!(!report.verdicts.is_empty());
    assert_eq!(report.recompute(), report.verdicts);
    assert!(report.preamble.contains("cannot be reproduced"));
}

#[test]
fn invalid_config_lists_every_violation_and_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = run_into(
        dir.path(),
        "wasserstein",
        &["--override", "rho=1.5", "--override", "steps=0", "--override", "cutoff=0.9"],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for field in ["rho", "steps", "cutoff"] {
        assert!(err.contains(field), "missing {field} in: {err}");
    }
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let out = run_into(dir.path(), "stability", &["--override", "sigma=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failing_verdict_exits_1() {
    // strong shared observation noise reverses the ordering
    let dir = TempDir::new().unwrap();
    let out = run_into(
        dir.path(),
        "wasserstein",
        &["--seed-count", "2", "--override", "amplitude=1", "--override", "samples=64"],
    );
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
    let report = Report::from_path(&dir.path().join("report.json")).unwrap();
    assert!(!report.passed);
}

#[test]
fn defaults_round_trip_through_a_config_file() {
    let out = flowlab(&["defaults", "stability"]);
    assert!(out.status.success());
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("config.json");
    fs::write(&path, &out.stdout).unwrap();
    let run_dir = dir.path().join("run");
    let out = flowlab(&[
        "stability",
        "--config",
        path.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--seed-count",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let traj = fs::read_dir(run_dir.join("trajectories")).unwrap().count();
    assert_eq!(traj, 4);
}

#[test]
fn config_scenario_must_match_subcommand() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("config.json");
    fs::write(&path, r#"{"scenario": "ambiguous"}"#).unwrap();
    let out = flowlab(&["stability", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
