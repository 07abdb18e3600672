mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::*;
use ctrlinv::verify::{simulate, PiecewiseConstant};
use serde_json::Value;

const DRIFT_ONLY: &str = r#"{"n": 2, "k": 1, "box": [[-1, 1], [-1, 1]],
    "drift": ["0", "x1"], "controls": []}"#;

const SQUARED_CONTROL: &str = r#"{"n": 2, "k": 1, "box": [[-1, 1], [-1, 1]],
    "distribution": {"vectors": [[0, 1]]},
    "drift": ["0", "0"], "controls": [["x1^2", "0"]]}"#;

fn write_input(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn ctrlinv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctrlinv")).args(args).output().unwrap()
}

fn run(dir: &Path, input: &Path, extra: &[&str]) -> (i32, PathBuf) {
    let out = dir.join(format!("out-{}", input.file_stem().unwrap().to_string_lossy()));
    let mut args = vec!["run", input.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend(extra);
    let o = ctrlinv(&args);
    (o.status.code().unwrap(), out)
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn running_example_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path(), "running.json", RUNNING_JSON);
    let (code, out) = run(dir.path(), &input, &["--simulate", "--seed", "3"]);
    assert_eq!(code, 0);
    let r = report(&out);
    assert_eq!(r["verdict"], "invariant");
    assert_eq!(r["exit_code"], 0);
    assert!(r["verification"]["max_residual"].as_f64().unwrap() <= 1e-6);
    let leaf = &r["verification"]["leaf_tests"][0];
    assert!(leaf["closed_loop_deviation"].as_f64().unwrap() <= 1e-5);
    assert!(leaf["open_loop_deviation"].as_f64().unwrap() > 1e-2);

    assert_eq!(header(&out.join("feedback_alpha.csv")), "x1,x2,x3,alpha1");
    assert_eq!(header(&out.join("feedback_beta.csv")), "x1,x2,x3,beta1_1");
    assert_eq!(header(&out.join("trajectories.csv")), "system,pair,start,t,x1,x2,x3");

    // α = -x1 x2 / (1 + x1²) at every node
    let text = std::fs::read_to_string(out.join("feedback_alpha.csv")).unwrap();
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        let expected = -v[0] * v[1] / (1.0 + v[0] * v[0]);
        assert!((v[3] - expected).abs() < 1e-12, "{line}");
    }

    let rv = ctrlinv(&["reverify", input.to_str().unwrap(), out.join("report.json").to_str().unwrap()]);
    assert_eq!(rv.status.code(), Some(0), "{}", String::from_utf8_lossy(&rv.stdout));
}

#[test]
fn reverify_flags_tampered_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path(), "running.json", RUNNING_JSON);
    let (_, out) = run(dir.path(), &input, &[]);
    let mut r = report(&out);
    r["invariance"]["worst_drift_residual"] = Value::from(0.5);
    let tampered = dir.path().join("tampered.json");
    std::fs::write(&tampered, serde_json::to_string(&r).unwrap()).unwrap();
    let rv = ctrlinv(&["reverify", input.to_str().unwrap(), tampered.to_str().unwrap()]);
    assert_eq!(rv.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&rv.stdout).contains("worst_drift_residual"));
}

#[test]
fn verdict_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path(), "drift.json", DRIFT_ONLY);
    let (code, out) = run(dir.path(), &input, &["--grid", "5"]);
    assert_eq!(code, 1);
    let r = report(&out);
    assert_eq!(r["verdict"], "not_invariant");
    assert_eq!(r["invariance"]["offending_nodes"].as_array().unwrap().len(), 25);
    assert!(!out.join("feedback_alpha.csv").exists());

    let input = write_input(dir.path(), "squared.json", SQUARED_CONTROL);
    let (code, out) = run(dir.path(), &input, &[]);
    assert_eq!(code, 2);
    let r = report(&out);
    for s in r["ranks"]["singular"].as_array().unwrap() {
        assert_eq!(s["point"][0].as_f64(), Some(0.0));
    }
}

#[test]
fn input_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_input(
        dir.path(),
        "bad.json",
        r#"{"n": 2, "k": 1, "box": [[-1, 1], [-1, 1]], "drift": ["0", "x1 +"]}"#,
    );
    let o = ctrlinv(&["run", bad.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("drift[1]"));

    let unknown = write_input(dir.path(), "unknown.json", r#"{"n": 2, "k": 1, "box": [[-1, 1], [-1, 1]], "drift": ["0", "0"], "extra": 1}"#);
    let o = ctrlinv(&["run", unknown.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    assert_eq!(ctrlinv(&["run", "/nonexistent/input.json"]).status.code(), Some(3));
    assert_eq!(ctrlinv(&["frobnicate"]).status.code(), Some(3));
    assert_eq!(ctrlinv(&["--help"]).status.code(), Some(0));
}

#[test]
fn seeded_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path(), "running.json", RUNNING_JSON);
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = ctrlinv(&[
            "run",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--simulate",
            "--seed",
            "42",
        ]);
        assert_eq!(o.status.code(), Some(0));
        files.push(std::fs::read(out.join("trajectories.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn simulation_is_deterministic() {
    let sys = running();
    let u = PiecewiseConstant::random(1, 8, 0.125, 1.0, 9);
    assert_eq!(u.values, PiecewiseConstant::random(1, 8, 0.125, 1.0, 9).values);
    assert_ne!(u.values, PiecewiseConstant::random(1, 8, 0.125, 1.0, 10).values);
    let a = simulate(&sys, &u, &[0.1, 0.2, 0.5], 1.0, 1e-3).unwrap();
    let b = simulate(&sys, &u, &[0.1, 0.2, 0.5], 1.0, 1e-3).unwrap();
    assert_eq!(a.states, b.states);
    assert_eq!(a.times.len(), 1001);
    assert!(!a.truncated);
    assert_eq!(sys.chart().n(), a.last().len());
}

#[test]
fn documented_sample_runs() {
    let dir = tempfile::tempdir().unwrap();
    let sample = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/running.json");
    let (code, out) = run(dir.path(), &sample, &["--simulate"]);
    assert_eq!(code, 0);
    assert_eq!(report(&out)["settings"]["simulate"], true);
}
