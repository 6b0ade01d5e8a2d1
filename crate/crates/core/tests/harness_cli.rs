use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use crashlearn::analysis::{AnalysisOptions, Check};
use crashlearn::graph::Limits;
use crashlearn::harness::{analyze_trace, exit, run_batch, ExperimentBatch, GATE_MESSAGE};
use crashlearn::protocol::{ExecutionTrace, SimulationConfig};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crashlearn"))
}

fn short_k4() -> SimulationConfig {
    let mut cfg = SimulationConfig::load(&configs().join("k4_f1_mid_update.json")).unwrap();
    cfg.horizon = 120;
    cfg
}

#[test]
fn batches_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        run_batch(&ExperimentBatch::new(short_k4(), 4, dir)).unwrap();
    }
    for name in ["summary.json", "summary.csv", "seed-2/report.json", "seed-2/trajectory.csv", "seed-2/trace.jsonl"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn persisted_traces_replay_to_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_batch(&ExperimentBatch::new(short_k4(), 3, dir.path())).unwrap();
    assert_eq!(summary.seeds.len(), 3);
    for s in &summary.seeds {
        let seed_dir = dir.path().join(format!("seed-{}", s.seed));
        let replay = analyze_trace(
            &seed_dir.join("trace.jsonl"),
            &Check::ALL,
            &Limits::default(),
            &AnalysisOptions::default(),
        )
        .unwrap();
        let stored = fs::read_to_string(seed_dir.join("report.json")).unwrap();
        assert_eq!(serde_json::to_string_pretty(&replay).unwrap() + "\n", stored);

        let trace = ExecutionTrace::read(&seed_dir.join("trace.jsonl")).unwrap();
        let expected: usize = trace.steps().iter().map(|st| st.alive_end().len()).sum();
        let rows = fs::read_to_string(seed_dir.join("trajectory.csv")).unwrap().lines().count();
        assert_eq!(rows, expected + 1);
    }
    let csv = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn skip_traces_leaves_reports_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut batch = ExperimentBatch::new(short_k4(), 1, dir.path());
    batch.persist_traces = false;
    batch.checks = vec![Check::Psi];
    let s = run_batch(&batch).unwrap();
    assert_eq!(s.exit_code(), exit::OK);
    let seed_dir = dir.path().join("seed-0");
    assert!(!seed_dir.join("trace.jsonl").exists());
    assert!(seed_dir.join("report.json").exists());
}

#[test]
fn cli_simulate_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["simulate", "--config"])
        .arg(configs().join("cycle3_sync.json"))
        .args(["--seed", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = dir.path().join("trace.jsonl");

    let all = bin().args(["analyze", "--checks", "all", "--trace"]).arg(&trace).output().unwrap();
    assert_eq!(all.status.code(), Some(exit::OK));
    let report: serde_json::Value = serde_json::from_slice(&all.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["checks"].as_object().unwrap().len(), 9);

    let none = bin().args(["analyze", "--checks", "", "--trace"]).arg(&trace).output().unwrap();
    assert_eq!(none.status.code(), Some(exit::OK));
    let report: serde_json::Value = serde_json::from_slice(&none.stdout).unwrap();
    assert!(report["checks"].as_object().unwrap().is_empty());
}

#[test]
fn cli_reports_corrupted_quorum() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["simulate", "--config"])
        .arg(configs().join("cycle3_sync.json"))
        .args(["--seed", "1", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let path = dir.path().join("trace.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut rec: serde_json::Value = serde_json::from_str(&lines[5]).unwrap();
    rec["quorum"] = serde_json::json!([]);
    lines[5] = rec.to_string();
    fs::write(&path, lines.join("\n") + "\n").unwrap();

    let out = bin().args(["analyze", "--checks", "all", "--trace"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(exit::INVARIANT_VIOLATION));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], false);
    assert!(!report["trace_violations"].as_array().unwrap().is_empty());
}

#[test]
fn cli_batch_gate_refuses_and_override_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["batch", "--seeds", "2", "--config"])
        .arg(configs().join("k4_negative_control.json"))
        .arg("--out")
        .arg(dir.path().join("refused"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(exit::GATE_REFUSED));
    assert!(String::from_utf8_lossy(&out.stderr).contains(GATE_MESSAGE));

    let out = bin()
        .args(["batch", "--seeds", "2", "--checks", "psi", "--override-gate", "--config"])
        .arg(configs().join("k4_negative_control.json"))
        .arg("--out")
        .arg(dir.path().join("override"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(exit::OK));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seeds"], 2);
    assert_eq!(v["convergence_asserted"], false);
}

#[test]
fn cli_detect_and_identify() {
    let out = bin()
        .args(["detect", "--f", "1", "--graph"])
        .arg(configs().join("k4.graph.json"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["chi"], 260);
    assert_eq!(v["condition1_holds"], true);

    let out = bin()
        .args(["identify", "--f", "1", "--graph"])
        .arg(configs().join("k4.graph.json"))
        .arg("--model")
        .arg(configs().join("k4.model.json"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["assumption1_ok"], true);
    assert!(v["c1"].as_f64().unwrap() > 0.0);

    let bad = bin().args(["detect", "--f", "1", "--graph", "/nonexistent.json"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(exit::ERROR));
}
