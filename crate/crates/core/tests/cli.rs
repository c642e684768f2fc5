use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use memctl::config::ExperimentConfig;
use serde_json::Value;

fn memctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memctl")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn run_in(dir: &Path, text: &str, extra: &[&str]) -> Output {
    let cfg = write_config(dir, text);
    let out = dir.join("out");
    let mut args = vec!["run", cfg.to_str().unwrap(), "--output-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    memctl(&args)
}

fn summary(dir: &Path, kind: &str) -> Value {
    let text = std::fs::read_to_string(dir.join("out").join(format!("{kind}_summary.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

const SIMULATE: &str = r#"
kind = "simulate"
[problem]
preset = "constant-cost"
[discretization]
h = 0.05
horizon = 1.0
[initial]
x = 0.75
[simulate]
"#;

const VALUE: &str = r#"
kind = "value"
seed = 3
[problem]
preset = "controlled-memory-lq"
[discretization]
h = 0.01
horizon = 6.0
[initial]
x = 1.0
past = { kind = "matched", rate = 1.0 }
[value]
intervals = [1, 2]
control_horizon = 2.0
"#;

#[test]
fn list_has_six_stable_rows() {
    let a = memctl(&["list"]);
    let b = memctl(&["list"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    for (row, kind) in rows.iter().zip(["simulate", "value", "dpp", "bop", "hjb2d", "xval"]) {
        let cols: Vec<&str> = row.split(" | ").map(str::trim).collect();
        assert_eq!(cols.len(), 3, "{row}");
        assert_eq!(cols[0], kind);
        assert!(!cols[1].is_empty() && !cols[2].is_empty(), "{row}");
    }
}

#[test]
fn zero_drift_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), SIMULATE, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/simulate.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,y_1,G_1,u_index");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 21);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("0.75")));
    let s = summary(dir.path(), "simulate");
    assert_eq!(s["pass"], Value::Bool(true));
    assert_eq!(s["results"]["final_state"][0].as_f64(), Some(0.75));
}

#[test]
fn dpp_with_unit_cost_reports_zero_residual() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
kind = "dpp"
[problem]
preset = "constant-cost"
[discretization]
h = 0.01
[dpp]
split = 0.5
intervals = [1, 2]
control_horizon = 1.0
tolerance = 1e-9
"#;
    let out = run_in(dir.path(), text, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path(), "dpp");
    assert!(s["results"]["residual"].as_f64().unwrap() <= 1e-9);
    assert_eq!(s["pass"], Value::Bool(true));
}

#[test]
fn negative_lambda_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = SIMULATE.replace("preset = \"constant-cost\"", "preset = \"constant-cost\"\nlambda = -1");
    let out = run_in(dir.path(), &text, &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("problem.lambda"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn schema_violation_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let text = SIMULATE.replace("horizon = 1.0", "horizon = 1.0\nstepsize = 2");
    let out = run_in(dir.path(), &text, &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("stepsize") && err.contains("line"), "{err}");
}

#[test]
fn numerical_failure_serializes_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
kind = "xval"
[problem]
preset = "uncontrolled-lq"
[discretization]
h = 0.05
horizon = 2.0
[initial]
x = 5.0
[xval]
x_range = [-1.0, 1.0]
y_range = [-1.0, 1.0]
levels = [{ intervals = 1, n = 11, dt = 0.05 }]
"#;
    let out = run_in(dir.path(), text, &[]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    let payload: Value = serde_json::from_str(err.lines().last().unwrap()).unwrap();
    assert_eq!(payload["error"], "outside_domain");
}

#[test]
fn outputs_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(run_in(a.path(), VALUE, &[]).status.success());
    assert!(run_in(b.path(), VALUE, &[]).status.success());
    for f in ["value.csv", "value_summary.json"] {
        let x = std::fs::read(a.path().join("out").join(f)).unwrap();
        let y = std::fs::read(b.path().join("out").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn summary_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(dir.path(), VALUE, &[]).status.success());
    let s = summary(dir.path(), "value");
    let echoed: ExperimentConfig = serde_json::from_value(s["config"].clone()).unwrap();
    assert_eq!(echoed, ExperimentConfig::from_toml(VALUE).unwrap());
    assert_eq!(s["seed"], 3);
}

#[test]
fn seed_flag_drives_sampled_checks() {
    let text = r#"
kind = "bop"
[problem]
preset = "constant-cost"
[discretization]
h = 0.01
h_z = 0.002
[initial]
x = 1.0
[bop]
samples = 3
"#;
    let runs: Vec<Value> = ["1", "1", "2"]
        .iter()
        .map(|seed| {
            let dir = tempfile::tempdir().unwrap();
            let out = run_in(dir.path(), text, &["--seed", seed]);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            summary(dir.path(), "bop")
        })
        .collect();
    let c = |v: &Value| v["results"]["lower_bound_constant"].as_f64().unwrap();
    assert_eq!(c(&runs[0]), c(&runs[1]));
    assert_ne!(c(&runs[0]), c(&runs[2]));
}

#[test]
fn verbose_reports_progress() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), SIMULATE, &["--verbose"]);
    assert!(out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("PASS lipschitz_violation"), "{err}");
}
