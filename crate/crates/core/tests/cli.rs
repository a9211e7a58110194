//! End-to-end checks of the command-line interface: exit codes, output
//! files, and cross-process reproducibility.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_corrport"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("corrport-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn write_config_with(
    name: &str,
    n_steps: usize,
    delta: f64,
    values: &str,
    variable: &str,
    strategies: &str,
) -> PathBuf {
    let path = scratch(name);
    let text = format!(
        r#"{{
  "market": {{"mu1": 0.07, "sigma1": 0.30, "mu2": 0.03, "sigma2": 0.10, "k": 0.0,
             "mu3": 0.05, "sigma3": 0.25, "a31": 0.6, "a32": 0.6, "gamma": 0.5,
             "delta": {delta}, "x0": 1.0, "i0": 1.0, "b0": 1.0}},
  "grid": {{"n_steps": {n_steps}, "h": 1.0}},
  "simulation": {{"n_sim": 20000, "seed": 9, "chunk_size": 4096}},
  "sweep": {{"variable": "{variable}", "values": {values}}},
  "strategies": {strategies},
  "output": "{out}"
}}"#,
        out = scratch("default-out.csv").display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn write_config(name: &str, n_steps: usize, delta: f64, values: &str, variable: &str) -> PathBuf {
    write_config_with(name, n_steps, delta, values, variable, r#"["UnSGP", "CSGP", "CPC"]"#)
}

#[test]
fn strategy_prints_vectors() {
    let cfg = write_config("strategy.json", 2, 0.09, "[0.09]", "delta");
    let json_out = scratch("strategy-out.json");
    let out = bin()
        .args(["strategy", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&json_out)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("CSGP"), "missing CSGP line: {text}");
    assert!(text.contains("-0.12388086"), "missing last-step amount: {text}");
    assert!(text.contains("UnSGP"), "missing UnSGP line: {text}");
    let emitted: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_out).unwrap()).unwrap();
    let csgp = emitted["CSGP"].as_array().unwrap();
    assert_eq!(csgp.len(), 2);
    assert!((csgp[1].as_f64().unwrap() + 0.12388086103901565).abs() < 1e-12);
}

#[test]
fn malformed_config_exits_2() {
    let path = scratch("broken.json");
    std::fs::write(&path, "{ not json").unwrap();
    let out = bin().args(["strategy", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    // Missing file is a config error too.
    let out = bin().args(["sweep", "--config", "/nonexistent/cfg.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn inadmissible_delta_exits_3() {
    let cfg = write_config("inadmissible.json", 8, 0.25, "[0.25]", "delta");
    let out = bin().args(["strategy", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("inadmissible"), "stderr: {err}");
    // A sweep whose every value is inadmissible also exits 3.
    let cfg = write_config_with(
        "inadmissible-sweep.json",
        8,
        0.09,
        "[0.25, 0.40]",
        "delta",
        r#"["CSGP", "CPC"]"#,
    );
    let out = bin().args(["sweep", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn simulate_emits_json_report() {
    let cfg = write_config("simulate.json", 2, 0.09, "[0.09]", "delta");
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--nsim", "5000", "--seed", "4"])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["n_sim"], 5000);
    assert_eq!(report["seed"], 4);
    assert!(report["expected_utility"].as_f64().unwrap() < 0.0);
}

#[test]
fn sweep_outputs_are_byte_identical_across_runs_and_workers() {
    let cfg = write_config("sweep.json", 2, 0.09, "[0.05, 0.09]", "delta");
    let mut outputs = Vec::new();
    for (tag, threads) in [("a", "1"), ("b", "3"), ("c", "1")] {
        let path = scratch(&format!("sweep-{tag}.csv"));
        let out = bin()
            .args(["sweep", "--config"])
            .arg(&cfg)
            .args(["--out"])
            .arg(&path)
            .env("RAYON_NUM_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
        outputs.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "one worker vs three workers");
    assert_eq!(outputs[0], outputs[2], "repeated run");
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    assert!(text.starts_with("sweep_variable,"), "header row expected");
    assert_eq!(text.lines().count(), 1 + 2 * 3, "header plus one row per (value, strategy)");
}

#[test]
fn sweep_json_format() {
    let cfg = write_config("sweep-json.json", 2, 0.09, "[0.09]", "delta");
    let path = scratch("sweep-out.json");
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--format", "json", "--out"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let rows: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 3);
    assert_eq!(rows[0]["status"], "ok");
}

#[test]
fn verify_runs_clean() {
    let result_path = scratch("verify.json");
    let out = bin()
        .args(["verify", "--nsim", "20000", "--out"])
        .arg(&result_path)
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "stdout: {text}");
    assert!(text.contains("[PASS] root-ordering"), "stdout: {text}");
    assert!(text.contains("0 failed"), "stdout: {text}");
    // The machine-readable report mirrors the printed lines.
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&result_path).unwrap()).unwrap();
    let items = report.as_array().unwrap();
    assert!(items.len() >= 9);
    assert!(items.iter().all(|i| i["passed"] == true));
}
