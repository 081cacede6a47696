use std::path::Path;
use std::process::{Command, Output};

fn ncp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn ncp")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ncp(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn trained(dir: &Path) {
    ok(
        dir,
        &[
            "bench", "gen", "--out", "a.jsonl", "--n", "300", "--seed", "1",
        ],
    );
    ok(
        dir,
        &[
            "predictor",
            "train",
            "--data",
            "a.jsonl",
            "--out",
            "a.pred",
            "--epochs",
            "20",
            "--seed",
            "3",
        ],
    );
}

#[test]
fn flops_reports_gflops_and_params() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        dir.path(),
        &[
            "flops", "--code", "default", "--input", "512x1024", "--head", "seg",
        ],
    );
    assert!(out.contains("GFLOPs"), "{out}");
    assert!(out.contains("params: 5.712787 M"), "{out}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(ncp(d, &["--help"]).status.code(), Some(0));
    assert_eq!(ncp(d, &["nope"]).status.code(), Some(1));
    assert_eq!(ncp(d, &["flops", "--code", "1,2,3"]).status.code(), Some(1));
    let missing = ncp(d, &["search", "continuous", "--predictor", "missing.pred"]);
    assert_eq!(missing.status.code(), Some(2));
    std::fs::write(d.join("junk.pred"), "not a predictor").unwrap();
    let junk = ncp(d, &["search", "continuous", "--predictor", "junk.pred"]);
    assert_ne!(junk.status.code(), Some(0));
}

#[test]
fn continuous_search_trace_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    ok(
        d,
        &[
            "search",
            "continuous",
            "--predictor",
            "a.pred",
            "--lambda",
            "0.5",
            "--iters",
            "70",
            "--init",
            "default",
            "--trace",
            "out.csv",
            "--out",
            "r.json",
        ],
    );
    let trace = std::fs::read_to_string(d.join("out.csv")).unwrap();
    let rows = trace.lines().count() - 1;
    assert!((1..=70).contains(&rows), "{rows} rows");
    assert!(trace.starts_with("iter,e_0,"));

    let result: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(result["code"].as_str().unwrap().split(',').count(), 27);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("out.csv.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "search continuous");
    assert!(manifest["argv"].as_array().unwrap().len() > 2);
    assert!(manifest["config"].is_object());
}

#[test]
fn runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    let first = std::fs::read(d.join("a.pred")).unwrap();
    trained(d);
    assert_eq!(first, std::fs::read(d.join("a.pred")).unwrap());

    let args = [
        "search",
        "wta",
        "--predictor",
        "a.pred",
        "--iters",
        "20",
        "--trace",
        "w.csv",
    ];
    ok(d, &args);
    let a = std::fs::read_to_string(d.join("w.csv")).unwrap();
    ok(d, &args);
    assert_eq!(a, std::fs::read_to_string(d.join("w.csv")).unwrap());
}

#[test]
fn auxiliary_commands_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    let stats = ok(d, &["bench", "stats", "--data", "a.jsonl"]);
    assert!(stats.contains("records: 300"), "{stats}");
    let base = ok(
        d,
        &[
            "baseline",
            "random",
            "--predictor",
            "a.pred",
            "--budget",
            "50",
            "--seed",
            "1",
        ],
    );
    assert!(base.contains("evaluations: 50"), "{base}");
    ok(d, &["corr", "--data", "a.jsonl", "--metric", "acc"]);
}
