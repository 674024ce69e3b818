use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn model(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models").join(name)
}

fn ctmdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctmdp"))
        .args(args)
        .env("CTMDP_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn run_json(args: &[&str]) -> (i32, Value) {
    let out = ctmdp(args);
    let code = out.status.code().unwrap();
    let value = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (code, value)
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn certify_pure_birth_echoes_rho() {
    let m = model("pure_birth.json");
    let (code, v) = run_json(&["certify", "--model", path_str(&m)]);
    assert_eq!(code, 0);
    assert_eq!(v["passed"], true);
    assert_eq!(v["condition1"]["rho"], 1.0);
    assert_eq!(v["condition1"]["alpha"], 2.0);
}

#[test]
fn solve_single_state() {
    let m = model("single_state.json");
    let (code, v) = run_json(&["solve", "--model", path_str(&m)]);
    assert_eq!(code, 0);
    assert!((v["values"]["ctmdp"].as_f64().unwrap() - 5.0).abs() < 1e-9);
    assert_eq!(v["policy"]["0"], 0);
}

#[test]
fn reduce_pure_birth_row_one() {
    let m = model("pure_birth.json");
    let (code, v) = run_json(&["reduce", "--model", path_str(&m)]);
    assert_eq!(code, 0);
    let row: Vec<(String, f64)> = v["kernel"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e[0] == 1)
        .map(|e| (e[2].to_string().trim_matches('"').to_string(), e[3].as_f64().unwrap()))
        .collect();
    let get = |label: &str| row.iter().find(|(l, _)| l == label).unwrap().1;
    assert!((get("2") - 0.5).abs() < 1e-12);
    assert!((get("delta") - 0.25).abs() < 1e-12);
    assert!((get("x_inf") - 0.25).abs() < 1e-12);
}

#[test]
fn constrained_lp_mixes_actions() {
    let m = model("two_action_lp.json");
    let (code, v) = run_json(&["solve-constrained", "--model", path_str(&m)]);
    assert_eq!(code, 0);
    assert!((v["objective"]["ctmdp"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert!((v["constraints"][0]["ctmdp"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!((v["policy"]["0"]["0"].as_f64().unwrap() - 0.5).abs() < 1e-9);
}

#[test]
fn infeasible_lp_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(model("two_action_lp.json")).unwrap().replace("\"bounds\": [1.0]", "\"bounds\": [-1.0]");
    let path = dir.path().join("m.json");
    std::fs::write(&path, text).unwrap();
    let (code, v) = run_json(&["solve-constrained", "--model", path_str(&path)]);
    assert_eq!(code, 3);
    assert_eq!(v["status"], "infeasible");
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(ctmdp(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ctmdp(&["solve"]).status.code(), Some(1));
    assert_eq!(ctmdp(&["solve", "--model", "/nonexistent/model.json"]).status.code(), Some(1));
    assert_eq!(ctmdp(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_models_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("syntax.json", "{ not json"),
        ("unknown_key.json", r#"{"costs": [], "alpha": 1, "initial": 0, "states": [0], "actions": [[0]], "rates": [], "extra": 1}"#),
        ("bad_alpha.json", r#"{"costs": [], "alpha": -1, "initial": 0, "states": [0], "actions": [[0]], "rates": []}"#),
    ];
    for (name, text) in cases {
        let path = dir.path().join(name);
        std::fs::write(&path, text).unwrap();
        assert_eq!(ctmdp(&["validate", "--model", path_str(&path)]).status.code(), Some(2), "{name}");
    }
}

#[test]
fn failed_certificate_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("cert.json");
    // ρ = 3 is not below α = 2
    std::fs::write(&cert, r#"{"w": [1, 2], "rho": 3.0}"#).unwrap();
    let m = model("two_state.json");
    let out = ctmdp(&["certify", "--model", path_str(&m), "--cert", path_str(&cert)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("solve.json");
    let m = model("two_state.json");
    let o = ctmdp(&["solve", "--model", path_str(&m), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!((v["values"]["ctmdp"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-9);
}

#[test]
fn outputs_are_byte_identical() {
    let m = model("queue.json");
    for cmd in ["transform", "reduce", "solve", "solve-constrained", "simulate"] {
        let a = ctmdp(&[cmd, "--model", path_str(&m), "--seed", "5", "--ntraj", "2000"]);
        let b = Command::new(env!("CARGO_BIN_EXE_ctmdp"))
            .args([cmd, "--model", path_str(&m), "--seed", "5", "--ntraj", "2000"])
            .env("CTMDP_THREADS", "7")
            .output()
            .unwrap();
        assert_eq!(a.status.code(), Some(0), "{cmd}");
        assert_eq!(a.stdout, b.stdout, "{cmd}");
    }
}

#[test]
fn simulate_with_policy_file() {
    let dir = tempfile::tempdir().unwrap();
    let m = model("two_state.json");
    let policy = dir.path().join("policy.json");
    std::fs::write(&policy, r#"{"policy": {"0": 0, "1": {"0": 1.0}}}"#).unwrap();
    let csv = dir.path().join("traj.csv");
    let (code, v) = run_json(&[
        "simulate",
        "--model",
        path_str(&m),
        "--policy",
        path_str(&policy),
        "--ntraj",
        "5000",
        "--trajectories",
        path_str(&csv),
    ]);
    assert_eq!(code, 0);
    let mean = v["mean"].as_f64().unwrap();
    let se = v["stderr"].as_f64().unwrap();
    let tail = v["tail_bound"].as_f64().unwrap();
    assert!((mean - 1.0 / 3.0).abs() <= 4.0 * se + tail);
    assert_eq!(v["n"], 5000);
    let lines = std::fs::read_to_string(&csv).unwrap().lines().count();
    assert_eq!(lines, 5001);
}

#[test]
fn solve_output_feeds_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let m = model("queue.json");
    let sol = dir.path().join("solve.json");
    assert_eq!(ctmdp(&["solve", "--model", path_str(&m), "--out", path_str(&sol)]).status.code(), Some(0));
    let (code, v) = run_json(&["simulate", "--model", path_str(&m), "--policy", path_str(&sol), "--ntraj", "3000"]);
    assert_eq!(code, 0);
    let solved: Value = serde_json::from_str(&std::fs::read_to_string(&sol).unwrap()).unwrap();
    let target = solved["values"]["ctmdp"].as_f64().unwrap();
    let (mean, se, tail) = (v["mean"].as_f64().unwrap(), v["stderr"].as_f64().unwrap(), v["tail_bound"].as_f64().unwrap());
    assert!((mean - target).abs() <= 4.0 * se + tail + 1e-6);
}

#[test]
fn verify_bundled_models() {
    for name in ["pure_birth.json", "two_state.json", "single_state.json", "two_action_lp.json", "queue.json"] {
        let m = model(name);
        let (code, v) = run_json(&["verify", "--model", path_str(&m), "--ntraj", "2000"]);
        assert_eq!(code, 0, "{name}: {v}");
        assert_eq!(v["passed"], true);
    }
}

#[test]
fn diagnose_leaky_defect_grows() {
    let m = model("pure_birth.json");
    let out = ctmdp(&["diagnose", "--model", path_str(&m), "--leaky", "--times", "0.5,1,2"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,t,defect,kc_residual"));
    let first: Vec<f64> = lines
        .filter(|l| l.starts_with("1,"))
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(first.len(), 3);
    assert!(first[0] > 0.0 && first[0] < first[1] && first[1] < first[2]);

    let out = ctmdp(&["diagnose", "--model", path_str(&m), "--times", "1"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for line in text.lines().skip(1) {
        let d: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(d.abs() < 1e-8, "{line}");
    }
}

#[test]
fn constrained_policy_reproduces_lp_values() {
    let dir = tempfile::tempdir().unwrap();
    let m = model("queue.json");
    let sol = dir.path().join("lp.json");
    assert_eq!(ctmdp(&["solve-constrained", "--model", path_str(&m), "--out", path_str(&sol)]).status.code(), Some(0));
    let lp: Value = serde_json::from_str(&std::fs::read_to_string(&sol).unwrap()).unwrap();
    for (cost, target) in [("0", lp["objective"]["ctmdp"].as_f64().unwrap()), ("1", lp["constraints"][0]["ctmdp"].as_f64().unwrap())] {
        let (code, v) = run_json(&["simulate", "--model", path_str(&m), "--policy", path_str(&sol), "--cost", cost, "--ntraj", "20000", "--seed", "9"]);
        assert_eq!(code, 0);
        let (mean, se, tail) = (v["mean"].as_f64().unwrap(), v["stderr"].as_f64().unwrap(), v["tail_bound"].as_f64().unwrap());
        assert!((mean - target).abs() <= 4.0 * se + tail, "cost {cost}: {mean} vs {target}");
    }
}
