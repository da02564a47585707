use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn stadkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stadkit"))
        .args(args)
        .env_remove("STADKIT_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = stadkit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_data(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    ok(&[
        "gen-data",
        "--out",
        p(&data),
        "--train-videos",
        "4",
        "--test-videos",
        "2",
    ]);
    data
}

#[test]
fn default_dataset_has_250_clips() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-data", "--out", p(&data)]);
    let manifest = read_json(&data.join("manifest.json"));
    let clips = manifest["clips"].as_array().unwrap();
    assert_eq!(clips.len(), 250);
    assert_eq!(clips.iter().filter(|c| c["split"] == "test").count(), 50);
    assert_eq!(manifest["classes"].as_array().unwrap().len(), 4);
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    let out = stadkit(&[
        "gen-data",
        "--config",
        p(&cfg),
        "--out",
        p(&dir.path().join("d")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn missing_inputs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let nowhere = dir.path().join("nowhere");
    let out = stadkit(&[
        "train",
        "--data",
        p(&nowhere),
        "--out",
        p(&dir.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = stadkit(&[
        "eval",
        "--data",
        p(&nowhere),
        "--out",
        p(&dir.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let data = small_data(dir.path());
    let out = stadkit(&[
        "assign-debug",
        "--data",
        p(&data),
        "--video",
        "test_9999",
        "--frame",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = stadkit(&[
        "assign-debug",
        "--data",
        p(&data),
        "--video",
        "test_0000",
        "--frame",
        "999",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_stadkit"))
        .args(["gen-data", "--out", p(&dir.path().join("d"))])
        .env("STADKIT_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn assign_debug_reports_both_assigners() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    for video in ["train_0000", "train_0001", "test_0000"] {
        let plus = dir.path().join("plus.json");
        let yowo = dir.path().join("yowo.json");
        ok(&[
            "assign-debug",
            "--data",
            p(&data),
            "--video",
            video,
            "--frame",
            "5",
            "--json",
            p(&plus),
        ]);
        ok(&[
            "assign-debug",
            "--data",
            p(&data),
            "--video",
            video,
            "--frame",
            "5",
            "--assigner",
            "yowo",
            "--json",
            p(&yowo),
        ]);
        let plus = read_json(&plus);
        let yowo = read_json(&yowo);
        let gts = yowo["ground_truths"].as_array().unwrap();
        assert!(!gts.is_empty());
        for g in gts {
            assert_eq!(g["positives"], 1);
        }
        for g in plus["ground_truths"].as_array().unwrap() {
            assert!(g["positives"].as_u64().unwrap() >= 1);
            let flagged = g["anchors"]
                .as_array()
                .unwrap()
                .iter()
                .filter(|a| a["positive"] == true)
                .count();
            assert_eq!(g["positives"].as_u64().unwrap() as usize, flagged);
        }
        assert!(plus["total_positives"].as_u64() >= yowo["total_positives"].as_u64());
    }
}

#[test]
fn debug_eval_modes_bound_the_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let oracle = dir.path().join("oracle");
    let empty = dir.path().join("empty");
    ok(&[
        "eval",
        "--data",
        p(&data),
        "--out",
        p(&oracle),
        "--debug-oracle",
        "--metric",
        "both",
    ]);
    ok(&[
        "eval",
        "--data",
        p(&data),
        "--out",
        p(&empty),
        "--debug-empty",
        "--metric",
        "both",
    ]);
    let r = read_json(&oracle.join("results.json"));
    assert_eq!(r["frame_map"]["mean"], 1.0);
    assert_eq!(r["video_map"]["mean"], 1.0);
    let r = read_json(&empty.join("results.json"));
    assert_eq!(r["frame_map"]["mean"], 0.0);
    assert_eq!(r["video_map"]["mean"], 0.0);
}

#[test]
fn train_eval_bench_report_round() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let run = dir.path().join("run");
    let stdout = ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--epochs",
        "2",
    ]);
    assert!(stdout.contains("trained"));
    let log = std::fs::read_to_string(run.join("train.log.jsonl")).unwrap();
    let lines: Vec<Value> = log
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.first().unwrap()["kind"], "header");
    assert_eq!(lines.last().unwrap()["kind"], "summary");
    assert!(lines
        .iter()
        .filter(|l| l["kind"] == "step")
        .all(|l| l["total"].as_f64().unwrap().is_finite()));

    let ckpt = run.join("checkpoint.bin");
    ok(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--metric",
        "frame-map",
    ]);
    let r = read_json(&run.join("results.json"));
    assert!(r["frame_map"]["mean"].is_f64());
    assert!(r["video_map"].is_null());

    let bench = dir.path().join("bench");
    ok(&[
        "bench",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--iters",
        "2",
        "--warmup",
        "0",
        "--out",
        p(&bench),
    ]);
    let b = read_json(&bench.join("bench.json"));
    assert!(b["report"]["median_fps"].as_f64().unwrap() > 0.0);

    let table = ok(&[
        "report",
        "--run",
        &format!("a={}", p(&run)),
        "--out",
        p(&dir.path().join("cmp")),
    ]);
    assert!(table.contains("| a | plus | giou |"));
    assert!(dir.path().join("cmp/comparison.json").exists());
}

#[test]
fn checkpoint_and_config_must_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let run = dir.path().join("run");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--epochs",
        "1",
    ]);
    let cfg = dir.path().join("other.toml");
    std::fs::write(&cfg, "[model]\ngrid_size = 5\n").unwrap();
    let out = stadkit(&[
        "eval",
        "--checkpoint",
        p(&run.join("checkpoint.bin")),
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--out",
        p(&run),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
