use std::path::Path;
use std::process::{Command, Output};

fn siloscan(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_siloscan"))
        .arg("--quiet")
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn report_json(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("report/report.json")).expect("report.json");
    serde_json::from_str(&text).expect("valid json")
}

#[test]
fn fixture_audit_and_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let first = siloscan(&["audit", "--fixture", "--out", "run"], tmp.path());
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let stdout = String::from_utf8_lossy(&first.stdout);
    assert!(stdout.contains("Acme Games"), "{stdout}");

    let run = tmp.path().join("run");
    let r = report_json(&run);
    assert_eq!(r["total_instances"], 1);
    assert_eq!(r["affected_companies"], 1);
    assert_eq!(r["sample_size"], 3);
    let instances = std::fs::read_to_string(run.join("instances.jsonl")).unwrap();
    assert!(instances.contains("SALE_SHARING") && instances.contains("California"));

    let before = std::fs::read(run.join("report/report.json")).unwrap();
    let manifest = std::fs::read(run.join("manifest.json")).unwrap();
    let second = siloscan(&["audit", "--fixture", "--out", "run"], tmp.path());
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(std::fs::read(run.join("report/report.json")).unwrap(), before);
    assert_eq!(std::fs::read(run.join("manifest.json")).unwrap(), manifest);
}

#[test]
fn check_mismatch_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("ok.json"), r#"{"total_instances": 1, "sample_size": 3}"#).unwrap();
    std::fs::write(tmp.path().join("bad.json"), r#"{"total_instances": 282}"#).unwrap();
    let ok = siloscan(&["audit", "--fixture", "--out", "a", "--check", "ok.json"], tmp.path());
    assert_eq!(ok.status.code(), Some(0));
    let bad = siloscan(&["audit", "--fixture", "--out", "b", "--check", "bad.json"], tmp.path());
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("CHECK MISMATCH"));
}

#[test]
fn invalid_input_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = siloscan(&["audit", "--out", "x", "--check", "missing.json", "--fixture"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let out = siloscan(&["audit", "--corpus", "missing.jsonl", "--out", "y"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stepwise_chain_matches_audit() {
    let tmp = tempfile::tempdir().unwrap();
    let audit = siloscan(&["audit", "--fixture", "--out", "run"], tmp.path());
    assert_eq!(audit.status.code(), Some(0));
    let input = tmp.path().join("run/input");
    let meta = input.join("company_meta.jsonl");
    let meta = meta.to_str().unwrap();
    let policies = input.join("policies");

    let seg = siloscan(
        &["segment", "--in", policies.to_str().unwrap(), "--out", "seg.jsonl", "--company-meta", meta],
        tmp.path(),
    );
    assert_eq!(seg.status.code(), Some(0), "{}", String::from_utf8_lossy(&seg.stderr));
    let cls = siloscan(&["classify", "--corpus", "seg.jsonl", "--out", "ann.jsonl"], tmp.path());
    assert_eq!(cls.status.code(), Some(0), "{}", String::from_utf8_lossy(&cls.stderr));
    let vote = siloscan(&["vote", "--corpus", "ann.jsonl", "--out", "con.jsonl", "--ensemble-size", "1"], tmp.path());
    assert_eq!(vote.status.code(), Some(0), "{}", String::from_utf8_lossy(&vote.stderr));
    let det = siloscan(
        &["detect", "--corpus", "con.jsonl", "--company-meta", meta, "--out", "inst.jsonl"],
        tmp.path(),
    );
    assert_eq!(det.status.code(), Some(0), "{}", String::from_utf8_lossy(&det.stderr));
    let rep = siloscan(
        &[
            "report",
            "--corpus",
            "con.jsonl",
            "--instances",
            "inst.jsonl",
            "--company-meta",
            meta,
            "--out",
            "rep",
        ],
        tmp.path(),
    );
    assert_eq!(rep.status.code(), Some(0), "{}", String::from_utf8_lossy(&rep.stderr));
    let a = report_json(&tmp.path().join("run"));
    let b: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("rep/report.json")).unwrap()).unwrap();
    assert_eq!(a["total_instances"], b["total_instances"]);
    assert_eq!(a["category_table"], b["category_table"]);
}

#[test]
fn stats_ci_prints_interval() {
    let tmp = tempfile::tempdir().unwrap();
    let out = siloscan(&["stats", "ci", "--k", "77", "--n", "123", "--corrected"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let json: serde_json::Value = serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
    assert!((json["lower"].as_f64().unwrap() - 0.534).abs() < 0.001);
    assert!((json["upper"].as_f64().unwrap() - 0.711).abs() < 0.001);
    assert_eq!(json["variant"], "continuity_corrected");
    let bad = siloscan(&["stats", "ci", "--k", "5", "--n", "3"], tmp.path());
    assert_eq!(bad.status.code(), Some(1));
}
