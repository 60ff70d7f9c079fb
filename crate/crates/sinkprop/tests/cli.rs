//! Contract tests for the `sinkprop` binary: exit codes, output formats,
//! and the run manifest.

mod common;

use sinkprop::data::serialize_queries;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_sinkprop")
}

struct Fixture {
    _dir: tempfile::TempDir,
    train: PathBuf,
    vali: PathBuf,
    model: PathBuf,
}

fn train_fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let split = common::synthetic_split(6, 3, 0, 8, 3, 0.0, 11);
    let train = dir.path().join("train.txt");
    let vali = dir.path().join("vali.txt");
    std::fs::write(&train, serialize_queries(&split.train)).unwrap();
    std::fs::write(&vali, serialize_queries(&split.validation)).unwrap();
    let model = dir.path().join("model.txt");
    let status = Command::new(bin())
        .args(["train", "--train"])
        .arg(&train)
        .arg("--vali")
        .arg(&vali)
        .arg("--out")
        .arg(&model)
        .args(["--resample", "0", "--lambda-grid", "0", "--sigma-schedule", "1,0.5", "--max-iters", "10"])
        .status()
        .unwrap();
    assert!(status.success());
    Fixture { _dir: dir, train, vali, model }
}

fn run(args: &[&str], paths: &[&Path]) -> Output {
    let mut cmd = Command::new(bin());
    let mut path_iter = paths.iter();
    for arg in args {
        if *arg == "{}" {
            cmd.arg(path_iter.next().unwrap());
        } else {
            cmd.arg(arg);
        }
    }
    cmd.output().unwrap()
}

#[test]
fn missing_input_file_exits_2() {
    let f = train_fixture();
    let out = run(
        &["eval", "--model", "{}", "--test", "/nonexistent/test.txt"],
        &[&f.model],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn malformed_letor_line_reports_line_number() {
    let f = train_fixture();
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "1 qid:q0 1:0.5\nnot a letor line\n").unwrap();
    let out = run(&["eval", "--model", "{}", "--test", "{}"], &[&f.model, &bad]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "stderr was: {stderr}");
}

#[test]
fn empty_test_file_exits_2_with_no_queries() {
    let f = train_fixture();
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let out = run(&["eval", "--model", "{}", "--test", "{}"], &[&f.model, &empty]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no queries"));
}

#[test]
fn rank_rejects_zero_cap() {
    let f = train_fixture();
    let out = run(
        &["rank", "--model", "{}", "--input", "{}", "--cap", "0"],
        &[&f.model, &f.vali],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cap"));
}

#[test]
fn eval_emits_csv_for_all_metric_families() {
    let f = train_fixture();
    let out = run(
        &["eval", "--model", "{}", "--test", "{}", "--metrics", "ndcg,p,rbp", "--k-max", "3"],
        &[&f.model, &f.vali],
    );
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "metric,k,value");
    // 3 NDCG rows, 3 P rows, 1 untruncated RBP row.
    assert_eq!(lines.len(), 8);
    assert!(lines[1].starts_with("NDCG,1,"));
    assert!(lines[4].starts_with("P,1,"));
    assert!(lines[7].starts_with("RBP,0,"));
    for line in &lines[1..] {
        let value: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&value), "metric out of range: {line}");
    }
}

#[test]
fn rank_emits_full_permutations() {
    let f = train_fixture();
    let out = run(&["rank", "--model", "{}", "--input", "{}"], &[&f.model, &f.vali]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    // 3 queries of 8 documents each.
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 24);
    for chunk in lines.chunks(8) {
        let qid = chunk[0].split('\t').next().unwrap();
        let mut seen = [false; 8];
        for (i, line) in chunk.iter().enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            assert_eq!(cols.len(), 4);
            assert_eq!(cols[0], qid);
            assert_eq!(cols[1].parse::<usize>().unwrap(), i + 1);
            let doc: usize = cols[2].parse().unwrap();
            assert!(!seen[doc], "document listed twice");
            seen[doc] = true;
            let score: f64 = cols[3].parse().unwrap();
            assert!(score.is_finite() && score >= 0.0);
        }
    }
}

#[test]
fn train_writes_manifest_next_to_model() {
    let f = train_fixture();
    let manifest_path = f.model.with_extension("txt.manifest.json");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(manifest_path).unwrap()).unwrap();
    assert_eq!(manifest["tool"], "sinkprop");
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["inputs"][0], f.train.display().to_string());
    assert!(manifest["config"]["best_validation_ndcg"].is_number());
}

#[test]
fn eval_out_flag_writes_file_and_manifest() {
    let f = train_fixture();
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("metrics.csv");
    let out = run(
        &["eval", "--model", "{}", "--test", "{}", "--out", "{}"],
        &[&f.model, &f.vali, &csv_path],
    );
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert!(csv.starts_with("metric,k,value\n"));
    assert!(csv_path.with_extension("csv.manifest.json").exists());
}

#[test]
fn check_subcommand_passes_and_prints_a_line_per_check() {
    let out = run(&["check", "--seed", "3"], &[]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines.iter().all(|l| l.starts_with("PASS ")));
}

#[test]
fn loaded_model_reproduces_training_parameterization() {
    let f = train_fixture();
    let text = std::fs::read_to_string(&f.model).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("sinkprop-model v1 smooth "), "header was: {header}");
    assert!(header.contains("M=3"));
    assert!(header.contains("iters=5"));
}
