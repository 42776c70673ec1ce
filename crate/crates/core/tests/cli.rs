use std::path::Path;
use std::process::Command;

use lora_flow::cli::{run_config, ExperimentConfig, EXPERIMENTS};

const BIN: &str = env!("CARGO_BIN_EXE_lora-flow");

fn config(experiment: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json(&format!(
        r#"{{"experiment": "{experiment}", "seed": 11, "n": 3}}"#
    ))
    .unwrap();
    cfg.out = Some(out.to_path_buf());
    cfg.trials = 2_000;
    cfg
}

#[test]
fn every_experiment_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    for (name, _) in EXPERIMENTS {
        let out = dir.path().join(name);
        let outcome = run_config(&config(name, &out), Path::new("."), 0).unwrap();
        assert!(
            outcome.output.passed(),
            "{name}: {:?}",
            outcome.output.checks
        );
        let csv = std::fs::read_to_string(out.join(format!("{name}.csv"))).unwrap();
        assert!(!csv.contains('\r'));
        let header_cols = csv.lines().next().unwrap().split(',').count();
        assert!(
            csv.lines().all(|l| l.split(',').count() == header_cols),
            "{name}"
        );
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap())
                .unwrap();
        assert_eq!(summary["experiment"], name);
        assert_eq!(summary["passed"], true);
        assert!(summary["checks"].as_array().is_some_and(|c| !c.is_empty()));
        assert!(summary["wall_time_s"].is_number());
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["approx-error", "moments"] {
        let a = dir.path().join(format!("{name}-seq"));
        let b = dir.path().join(format!("{name}-par"));
        run_config(&config(name, &a), Path::new("."), 0).unwrap();
        run_config(&config(name, &b), Path::new("."), 4).unwrap();
        let file = format!("{name}.csv");
        assert_eq!(
            std::fs::read(a.join(&file)).unwrap(),
            std::fs::read(b.join(&file)).unwrap()
        );
    }
}

#[test]
fn binary_list_and_exit_codes() {
    let out = Command::new(BIN).arg("list").output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 6);

    let out = Command::new(BIN).args(["list", "--json"]).output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 6);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"experiment": "trace-flow", "sigmaa": 1}"#).unwrap();
    let out = Command::new(BIN)
        .args(["run", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigmaa"));

    let saddle = dir.path().join("saddle.json");
    std::fs::write(
        &saddle,
        r#"{"experiment": "trace-flow", "w0_source": {"diagonal": [1, -1]}}"#,
    )
    .unwrap();
    let out = Command::new(BIN)
        .args(["run", "--config"])
        .arg(&saddle)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn binary_overrides_and_relative_w0_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("w0.csv"), "3,0,0\n0,2,0\n0,0,1\n0,0,0\n").unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"experiment": "moments", "r": 2, "w0_source": {"file": "w0.csv"}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("run");
    let out = Command::new(BIN)
        .args([
            "run",
            "--experiment",
            "lowrank-eym",
            "--seed",
            "5",
            "--config",
        ])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["config"]["seed"], 5);
    assert_eq!(summary["experiment"], "lowrank-eym");
    assert!((summary["metrics"]["final_loss"].as_f64().unwrap() - 0.5).abs() < 1e-12);
}
