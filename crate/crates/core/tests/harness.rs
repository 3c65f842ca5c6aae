use std::fs;
use std::process::Command;

use lucbrank::harness::{
    emit_report, run_experiment, Algorithm, ExperimentConfig, Manifest, MANIFEST_FILE, RESULTS_FILE,
    RESULTS_HEADER, TERMINATION_FILE, TERMINATION_HEADER,
};
use serde_json::json;

const BIN: &str = env!("CARGO_BIN_EXE_lucbrank");

fn small_config(trials: u64) -> ExperimentConfig {
    serde_json::from_value(json!({
        "instance": {"inline": {"kind": "direct", "means": [0.8, 0.2, 0.6, 0.4, 0.7, 0.3]}},
        "algorithms": ["lucbrank", "uniform", "active_ranking"],
        "clusters": [2, 4],
        "trials": trials,
        "checkpoints": [200, 1000, 4000],
        "seed": 11,
        "jobs": 2
    }))
    .unwrap()
}

#[test]
fn config_file_with_relative_instance_path() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("inst.json"),
        json!({"kind": "btl", "scores": [0.0, 0.5, 1.0, 1.5, 2.0]}).to_string(),
    )
    .unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(
        &cfg_path,
        json!({
            "instance": {"file": "inst.json"},
            "algorithms": ["quicksort", "uniform_param"],
            "clusters": {"equal_sized": 2},
            "trials": 4,
            "checkpoints": [100, 300],
            "seed": 3
        })
        .to_string(),
    )
    .unwrap();
    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let results = run_experiment(&cfg).unwrap();
    assert_eq!(results.true_means.len(), 5);
    assert_eq!(results.spec.boundaries(), &[3, 5]);
    assert!(results.get(Algorithm::Quicksort).is_some());
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cfg.json");
    fs::write(&p, r#"{"instance":{"builtin":"B"},"algorithms":["uniform"],"clusters":[3,12],"trials":1,"checkpoints":[10],"seed":0,"bogus":1}"#).unwrap();
    assert!(ExperimentConfig::load(&p).is_err());
}

#[test]
fn report_files_and_manifest_round_trip() {
    let cfg = small_config(6);
    let results = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = emit_report(&results, dir.path()).unwrap();

    let results_text = fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
    let mut lines = results_text.lines();
    assert_eq!(lines.next().unwrap(), RESULTS_HEADER.join(","));
    assert_eq!(lines.count(), 3 * 3);

    let term = fs::read_to_string(dir.path().join(TERMINATION_FILE)).unwrap();
    let mut lines = term.lines();
    assert_eq!(lines.next().unwrap(), TERMINATION_HEADER.join(","));
    assert_eq!(lines.count(), 3 * 6);

    let loaded = Manifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded, manifest);
    assert_eq!(loaded.config, cfg);
    assert_eq!(loaded.boundaries, vec![2, 4, 6]);
    assert!(loaded.complexity.is_some());
}

#[test]
fn standard_error_shrinks_with_trials() {
    let mut cfg: ExperimentConfig = serde_json::from_value(json!({
        "instance": {"inline": {"kind": "direct", "means": [0.55, 0.5, 0.45, 0.4]}},
        "algorithms": ["uniform"],
        "clusters": [2],
        "trials": 100,
        "checkpoints": [400],
        "seed": 5
    }))
    .unwrap();
    let se = |cfg: &ExperimentConfig| {
        let r = run_experiment(cfg).unwrap();
        r.algorithms[0].rows[0].kendall_tau.se
    };
    let small = se(&cfg);
    cfg.trials = 400;
    let large = se(&cfg);
    let ratio = small / large;
    assert!((ratio - 2.0).abs() <= 0.5, "se ratio {ratio}");
}

#[test]
fn cli_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, serde_json::to_string(&small_config(3)).unwrap()).unwrap();
    let out = dir.path().join("out");
    let status = Command::new(BIN)
        .args(["run", cfg_path.to_str().unwrap(), "--trials", "2", "--jobs", "1", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for f in [RESULTS_FILE, TERMINATION_FILE, MANIFEST_FILE] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let manifest = Manifest::load(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.config.trials, 2);
}

#[test]
fn cli_same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, serde_json::to_string(&small_config(4)).unwrap()).unwrap();
    let mut outputs = Vec::new();
    for (i, jobs) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("o{i}"));
        let st = Command::new(BIN)
            .args(["run", cfg_path.to_str().unwrap(), "--jobs", jobs, "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(st.success());
        outputs.push(fs::read(out.join(RESULTS_FILE)).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn cli_errors_are_json_on_stderr() {
    let out = Command::new(BIN).args(["instance", "nope"]).output().unwrap();
    assert!(!out.status.success());
    let line = String::from_utf8(out.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["error"], "unknown_instance");
    assert!(v["message"].as_str().unwrap().contains("nope"));

    let out = Command::new(BIN).args(["run", "/nonexistent/cfg.json"]).output().unwrap();
    assert!(!out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"], "io");
}

#[test]
fn cli_complexity_and_instance() {
    let out = Command::new(BIN).args(["complexity", "B", "3,12"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.is_object());

    let out = Command::new(BIN).args(["instance", "B", "--emit"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["kind"], "direct");
    assert_eq!(v["means"].as_array().unwrap().len(), 15);
}
