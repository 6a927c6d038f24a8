use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn salm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salm")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = salm(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn run_dir(out: &Path) -> PathBuf {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1);
    dirs.pop().unwrap()
}

#[test]
fn eval_writes_logs_reports_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let stdout = ok(&["eval", "--planner", "all", "--task", "both", "--cases", "2", "--seed", "3", "--out", out]);
    assert!(stdout.contains("SALM"), "{stdout}");
    let run = run_dir(tmp.path());
    for f in ["metrics.csv", "report.csv", "report.md", "manifest.json"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    for planner in ["ORCA_baseline", "SA-RLNM", "SA-LNM", "SA-LFM-fixed", "SALM"] {
        for name in ["p2p-3.jsonl", "p2p-4.jsonl", "hf-3.jsonl", "hf-4.jsonl"] {
            assert!(run.join(planner).join(name).is_file(), "{planner}/{name} missing");
        }
    }
    assert!(run.join("SALM").join("hf-4.transcript.jsonl").is_file());
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema"], "salm-run/1");
    assert_eq!(manifest["crashed_episodes"].as_array().map_or(0, Vec::len), 0);
    let report = std::fs::read_to_string(run.join("report.csv")).unwrap();
    assert_eq!(report.lines().filter(|l| !l.starts_with('#')).count(), 6, "{report}");

    let log = run.join("SALM").join("p2p-3.jsonl");
    let replay = ok(&["replay", "--log", log.to_str().unwrap(), "--rerun"]);
    assert!(!replay.is_empty());
}

#[test]
fn scenario_dump_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("s.json");
    ok(&["scenario", "--seed", "9", "--pedestrians", "4", "--out", path.to_str().unwrap()]);
    let file: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(file["agents"].as_array().unwrap().len(), 6);
    let dumped: serde_json::Value = serde_json::from_str(&ok(&["scenario", "--seed", "9", "--pedestrians", "4", "--dump"])).unwrap();
    assert_eq!(dumped, file);
}

#[test]
fn train_writes_weights_and_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("policy");
    ok(&["train", "--iterations", "3", "--out", out.to_str().unwrap()]);
    let curve = std::fs::read_to_string(out.join("training_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4);
    assert!(out.join("weights.json").is_file());
}

#[test]
fn bad_input_exits_with_an_error() {
    for args in [
        &["eval", "--cases", "0", "--out", "/nonexistent-salm"][..],
        &["eval", "--planner", "nope"],
        &["eval", "--feedback-probability", "2"],
        &["replay", "--log", "/nonexistent/log.jsonl"],
        &["scenario", "--seed", "1", "--task", "both"],
    ] {
        let o = salm(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("error"), "{args:?}");
    }
}
