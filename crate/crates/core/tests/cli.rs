mod common;

use std::path::Path;
use std::process::{Command, Output};

fn delayadm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_delayadm")).args(args).output().unwrap()
}

fn config(name: &str) -> String {
    common::configs_dir().join(format!("{name}.json")).to_string_lossy().into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("run.json")).unwrap()).unwrap()
}

#[test]
fn validate_accepts_a_good_config() {
    let out = delayadm(&["validate", "--config", &config("scalar_simulate")]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}

#[test]
fn validate_reports_the_contraction_eigenvalue() {
    let out = delayadm(&["validate", "--config", &config("bounds_expansive")]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("contraction certificate failed") && err.contains("5.000000e-1"), "{err}");
}

#[test]
fn validate_names_both_grid_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"system": {"kind": "matrices", "a": 0, "a1": 1}, "grid": {"m": 100, "dt": 0.003}}"#)
        .unwrap();
    let out = delayadm(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dt = 0.003") && err.contains("1/m = 0.01"), "{err}");
}

#[test]
fn malformed_config_still_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = delayadm(&["simulate", "--config", &config("malformed"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("malformed.json:4:"), "{err}");
    let m = manifest(dir.path());
    assert_eq!(m["outcome"], "error");
    assert!(m["config_sha256"].is_null());
}

#[test]
fn unknown_fields_are_rejected_with_a_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.json");
    std::fs::write(&path, "{\n  \"system\": {\"kind\": \"matrices\", \"a\": 0},\n  \"sede\": 3\n}\n").unwrap();
    let out = delayadm(&["validate", "--config", path.to_str().unwrap()]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("typo.json:3:") && err.contains("sede"), "{err}");
}

#[test]
fn experiment_mismatch_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = delayadm(&["bounds", "--config", &config("scalar_simulate"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(manifest(dir.path())["error"].as_str().unwrap().contains("invoked as `bounds`"));
}

#[test]
fn seed_and_refine_flags_reach_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = delayadm(&[
        "simulate",
        "--config",
        &config("scalar_simulate"),
        "--out",
        dir.path().to_str().unwrap(),
        "--seed",
        "7",
        "--refine",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let m = manifest(dir.path());
    assert_eq!(m["seed"], 7);
    assert_eq!(m["grid"]["m"], 400);
    assert_eq!(m["grid"]["dt"].as_f64().unwrap(), 5e-4);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn omega_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = delayadm(&[
        "admissibility",
        "--config",
        &config("admissibility_stable"),
        "--out",
        dir.path().to_str().unwrap(),
        "--omega",
        "-0.5",
    ]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("admissibility.json")).unwrap()).unwrap();
    assert_eq!(summary["omega_source"], "flag");
    assert_eq!(summary["weiss"]["omega_ref"].as_f64().unwrap(), -0.5);
    // the expected constant belongs to omega = 0, so the run now fails its check
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn trajectory_csv_has_the_documented_header() {
    let dir = tempfile::tempdir().unwrap();
    delayadm(&["simulate", "--config", &config("scalar_simulate"), "--out", dir.path().to_str().unwrap()]);
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,re(z_1),im(z_1)"));
    // the initial history on [-1, 0] comes first
    assert!(lines.next().unwrap().starts_with("-1.0000000000000000e0,"));
    assert_eq!(lines.count(), 3000);
}
