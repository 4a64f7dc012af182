use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_rtrc");
const DEMO: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/demo");

fn rtrc(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, script: &Path) -> std::path::PathBuf {
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "run_id = \"t\"\ninput = \"{DEMO}/segments.jsonl\"\noutput = \"out\"\n\n[backend]\nkind = \"scripted\"\nscript = \"{}\"\n",
            script.display()
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn run_analyze_export() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &Path::new(DEMO).join("script.jsonl"));
    let out = rtrc(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join("out/t");
    assert!(run.join("comparisons.jsonl").exists());

    let an = tmp.path().join("an");
    let out = rtrc(&["analyze", "--run", run.to_str().unwrap(), "--otsu", "--out", an.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(an.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n_pairs"], 39);
    assert!(std::fs::read_to_string(an.join("comparisons.csv")).unwrap().starts_with("segment_id,"));

    let out = rtrc(&["export", "--run", run.to_str().unwrap(), "--what", "segments"]);
    let segs: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(segs.as_array().unwrap().len(), 30);

    let out = rtrc(&["add-case", "--run", run.to_str().unwrap(), "--segment", "seg-001"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "mn:t:seg-001:round1");
}

#[test]
fn partial_failure_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let script = std::fs::read_to_string(Path::new(DEMO).join("script.jsonl")).unwrap();
    // drop coder B's first reply for seg-000 so that segment fails
    let kept: Vec<&str> = script.lines().filter(|l| !l.contains("\"seg-000/round1/coder_b\"")).collect();
    let sp = tmp.path().join("script.jsonl");
    std::fs::write(&sp, kept.join("\n")).unwrap();
    let cfg = write_config(tmp.path(), &sp);
    let out = rtrc(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["counts"]["failures"], 1);
    let segs = std::fs::read_to_string(tmp.path().join("out/t/segments.jsonl")).unwrap();
    assert!(segs.contains("ScriptExhausted"));
}

#[test]
fn usage_and_config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "run_id = \"x\"\nunknown_key = 1\n").unwrap();
    assert_eq!(rtrc(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(rtrc(&["replay", "--run", tmp.path().to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(rtrc(&["sample", "--run", "x", "--mode", "within-misalign", "--band", "0.9:0.1"]).status.code(), Some(2));
}
