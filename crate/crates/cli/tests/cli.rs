use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn saferoa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saferoa"))
        .args(args)
        .output()
        .expect("binary runs")
}

const LINEAR: &str = r#"{
  "system": {"name": "polynomial", "f": ["-1 * x1"], "g": [["1"]], "active_outputs": [0]},
  "kernel": {"weights": [0.01]},
  "synthesis": {"deg_v": 2, "deg_kappa": 1, "deg_sv": 2, "deg_sd": 2, "deg_sgamma": 2, "n_iter": 2},
  "initial_conditions": [[0.5]],
  "horizon": 2.0,
  "lambda": 0.1,
  "volume_samples": 2000
}"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn default_config_is_valid_json() {
    let out = saferoa(&["default-config"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["system"]["name"], "pendulum-sat");
    assert_eq!(v["eta"], 3.0);
}

#[test]
fn bad_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"iterations": 0}"#);
    let out = saferoa(&["synthesize", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(4));
    let out = saferoa(&["synthesize", "--config", "/no/such/file.json"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn synthesize_learn_report_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), LINEAR);

    let cert = dir.path().join("cert.json");
    let out = saferoa(&["synthesize", "--config", &cfg, "--out", cert.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let c: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cert).unwrap()).unwrap();
    assert!(c["gamma"].as_f64().unwrap() > 0.0);

    let run = dir.path().join("run");
    let out = saferoa(&["learn", "--config", &cfg, "--out", run.to_str().unwrap(), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(run.join("summary.json")).unwrap();
    assert!(summary.contains("\"seed\": 3"));
    fs::remove_file(run.join("boundary_1.csv")).unwrap();
    let out = saferoa(&["report", "--result", run.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(run.join("boundary_1.csv").exists());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), summary.trim());

    let post = run.join("certificate_1.json");
    let traj = dir.path().join("traj.csv");
    let out = saferoa(&[
        "simulate",
        "--cert",
        post.to_str().unwrap(),
        "--config",
        &cfg,
        "--x0=-0.3",
        "--horizon",
        "5",
        "--out",
        traj.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&traj).unwrap();
    assert!(text.starts_with("t,x1,u1,V"));
    assert_eq!(text.lines().count(), 502);

    let out = saferoa(&["simulate", "--cert", post.to_str().unwrap(), "--config", &cfg, "--x0", "1000"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn start_outside_region_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &LINEAR.replace("[[0.5]]", "[[1000.0]]"));
    let run = dir.path().join("run");
    let out = saferoa(&["learn", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("outside the certified region"));
}
