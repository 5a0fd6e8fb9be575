use std::path::Path;
use std::process::{Command, Output};

use sysid_core::experiment::{SweepRow, SWEEP_FIELDS};

const SMALL: &str = r#"{"rollout_counts": [20, 60], "repeats": 3, "gammas": [0.01, 0.1], "table2_sigma_ws": [1.0, 10.0]}"#;

fn sysid(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sysid"))
        .args(args)
        .current_dir(dir)
        .env_remove("SYSID_THREADS")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    std::fs::write(&path, SMALL).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn table2_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let first = sysid(&["table2", "--config", &cfg, "--seed", "7", "--out", "run1", "--threads", "1"], dir.path());
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let second = sysid(&["table2", "--config", &cfg, "--seed", "7", "--out", "run2", "--threads", "3"], dir.path());
    assert!(second.status.success());
    for name in ["table2.csv", "table2_summary.csv"] {
        let a = std::fs::read(dir.path().join("run1").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("run2").join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs");
    }
    let other = sysid(&["table2", "--config", &cfg, "--seed", "8", "--out", "run3"], dir.path());
    assert!(other.status.success());
    assert_ne!(
        std::fs::read(dir.path().join("run1/table2.csv")).unwrap(),
        std::fs::read(dir.path().join("run3/table2.csv")).unwrap()
    );
}

#[test]
fn missing_config_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = sysid(&["sweep", "--config", "no/such/config.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no/such/config.json"));
}

#[test]
fn unknown_config_key_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.json");
    std::fs::write(&path, r#"{"gamas": [0.1]}"#).unwrap();
    let out = sysid(&["sweep", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gamas") && err.contains("line 1"), "{err}");
}

#[test]
fn sweep_json_is_one_row_document_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = sysid(&["sweep", "--config", &cfg, "--format", "json", "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("o/sweep.json")).unwrap();
    let rows: Vec<SweepRow> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2 * 2);
    for line in text.lines() {
        let doc: serde_json::Value = serde_json::from_str(line).unwrap();
        for field in SWEEP_FIELDS {
            assert!(doc.get(field).is_some(), "{field} missing");
        }
    }
}

#[test]
fn sweep_csv_numbers_are_finite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    assert!(sysid(&["sweep", "--config", &cfg, "--out", "o"], dir.path()).status.success());
    let mut reader = csv::Reader::from_path(dir.path().join("o/sweep.csv")).unwrap();
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), SWEEP_FIELDS.to_vec());
    for record in reader.records() {
        let record = record.unwrap();
        for (field, value) in SWEEP_FIELDS.iter().zip(record.iter()) {
            if value.is_empty() || ["experiment", "system", "estimator_scaling"].contains(field) {
                continue;
            }
            assert!(value.parse::<f64>().unwrap().is_finite(), "{field} = {value}");
        }
    }
}

#[test]
fn strict_infeasible_design_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["design", "--n-rollouts", "10", "--out", "o"];
    let relaxed = sysid(&args, dir.path());
    assert_eq!(relaxed.status.code(), Some(0));
    let mut strict = args.to_vec();
    strict.push("--strict");
    assert_eq!(sysid(&strict, dir.path()).status.code(), Some(3));
    let feasible = sysid(&["design", "--n-rollouts", "200", "--strict", "--out", "o"], dir.path());
    assert_eq!(feasible.status.code(), Some(0));
}

#[test]
fn bad_thread_variable_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sysid"))
        .args(["bounds", "--n-rollouts", "20", "--out", "o"])
        .current_dir(dir.path())
        .env("SYSID_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_run_commands_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["simulate", "--n-rollouts", "5"],
        vec!["estimate", "--n-rollouts", "50", "--format", "json"],
        vec!["bounds", "--n-rollouts", "50"],
    ] {
        let mut full = args.clone();
        full.extend(["--out", "o"]);
        let out = sysid(&full, dir.path());
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let rollouts = std::fs::read_to_string(dir.path().join("o/rollouts.csv")).unwrap();
    // Header plus 5 rollouts of 12 states each.
    assert_eq!(rollouts.lines().count(), 1 + 5 * 12);
    let estimates: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/estimates.json")).unwrap()).unwrap();
    assert_eq!(estimates[0]["mode"], "OLS");
    assert_eq!(estimates[1]["mode"], "SVR");
}
