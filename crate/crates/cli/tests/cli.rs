use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn gdasum(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdasum"))
        .args(args)
        .current_dir(cwd)
        .env_remove("GDASUM_CONFIG")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(dir: &Path, videos: &str) {
    let out = gdasum(&["synth", "--videos", videos, "--dim", "16", "--out", "data"], dir);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn canonical_training_writes_five_folds() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth(dir, "10");
    let args = ["train", "--manifest", "data/manifest.json", "--epochs", "2", "--seed", "7", "--out"];
    let out = gdasum(&[&args[..], &["run"]].concat(), dir);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    for k in 0..5 {
        assert!(dir.join(format!("run/fold{k}.ckpt")).is_file());
        let text = fs::read_to_string(dir.join(format!("run/fold{k}.jsonl"))).unwrap();
        let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 3, "header plus one line per epoch");
        assert_eq!(lines[0]["format"], "gdasum-train-report");
        assert_eq!(lines[0]["fold"], k);
        assert_eq!(lines[0]["config"]["train"]["seed"], 7);
        assert_eq!(lines[2]["epoch"], 2);
    }
    let summary = read_json(&dir.join("run/train.json"));
    assert_eq!(summary["format"], "gdasum-train");
    assert_eq!(summary["version"], 1);
    assert_eq!(summary["folds"].as_array().unwrap().len(), 5);

    // Same seed, same bytes.
    let out = gdasum(&[&args[..], &["again"]].concat(), dir);
    assert_eq!(code(&out), 0);
    for k in 0..5 {
        let a = fs::read(dir.join(format!("run/fold{k}.ckpt"))).unwrap();
        let b = fs::read(dir.join(format!("again/fold{k}.ckpt"))).unwrap();
        assert_eq!(a, b, "fold {k}");
    }

    let out = gdasum(
        &["eval", "--manifest", "data/manifest.json", "--checkpoint", "run", "--seed", "7", "--out", "ev"],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = read_json(&dir.join("ev/metrics.json"));
    assert_eq!(metrics["format"], "gdasum-metrics");
    assert_eq!(metrics["per_video"].as_array().unwrap().len(), 10);
    assert_eq!(metrics["per_fold"].as_object().unwrap().len(), 5);
    let csv = fs::read_to_string(dir.join("ev/metrics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "video_id,fold,precision,recall,fscore");
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn single_fold_summarize_and_segment() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth(dir, "5");
    let out = gdasum(
        &["train", "--manifest", "data/manifest.json", "--epochs", "1", "--fold", "2", "--out", "run"],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("run/fold2.ckpt").is_file());
    assert!(!dir.join("run/fold0.ckpt").exists());

    let out = gdasum(
        &[
            "summarize",
            "--manifest",
            "data/manifest.json",
            "--checkpoint",
            "run/fold2.ckpt",
            "--emit-plot-data",
            "--out",
            "sum.json",
        ],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc = read_json(&dir.join("sum.json"));
    let videos = doc["videos"].as_array().unwrap();
    assert_eq!(videos.len(), 5);
    for v in videos {
        let mask = v["frame_mask"].as_array().unwrap();
        assert_eq!(mask.len(), 120);
        assert_eq!(v["frame_scores"].as_array().unwrap().len(), 120);
        let kept = mask.iter().filter(|m| m.as_u64() == Some(1)).count();
        assert!(kept <= 18, "{kept} frames over the 15% budget");
        assert!(v["plot"]["diversity_weights"].is_array());
    }

    let out = gdasum(
        &["segment", "--manifest", "data/manifest.json", "--penalty", "0.5", "--out", "seg.json"],
        dir,
    );
    assert_eq!(code(&out), 0);
    let seg = read_json(&dir.join("seg.json"));
    assert_eq!(seg["config"]["kts"]["penalty"], 0.5);
    for v in seg["videos"].as_array().unwrap() {
        let shots = v["shots"].as_array().unwrap();
        assert_eq!(shots[0][0], 0);
        assert_eq!(shots.last().unwrap()[1], 120);
    }
}

#[test]
fn gradcheck_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let out = gdasum(&["gradcheck", "--instances", "2", "--out", "ok.json"], dir);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(&dir.join("ok.json"))["report"]["passed"], true);

    let out = gdasum(
        &["gradcheck", "--instances", "2", "--inject-sign-flip", "w_q", "--out", "bad.json"],
        dir,
    );
    assert_eq!(code(&out), 2);
    assert_eq!(read_json(&dir.join("bad.json"))["report"]["passed"], false);

    let out = gdasum(&["gradcheck", "--inject-sign-flip", "nope"], dir);
    assert_eq!(code(&out), 1);
}

#[test]
fn input_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&gdasum(&["--help"], dir)), 0);
    assert_eq!(code(&gdasum(&["bogus"], dir)), 1);
    assert_eq!(code(&gdasum(&["train", "--manifest", "missing.json"], dir)), 1);

    fs::write(dir.join("bad.json"), r#"{"ratio": 0.15, "unknown": 1}"#).unwrap();
    let out = gdasum(&["--config", "bad.json", "gradcheck", "--instances", "1"], dir);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown"));

    synth(dir, "5");
    let out = gdasum(&["train", "--manifest", "data/manifest.json", "--fold", "9"], dir);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("fold 9"));
}

#[test]
fn config_file_sets_defaults_and_flags_override() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth(dir, "5");
    fs::write(dir.join("run.json"), r#"{"fold": 0, "train": {"epochs": 1}}"#).unwrap();
    let out = gdasum(
        &["--config", "run.json", "train", "--manifest", "data/manifest.json", "--sigma", "0.2", "--out", "run"],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.join("run/train.json"));
    assert_eq!(summary["config"]["train"]["epochs"], 1);
    assert_eq!(summary["config"]["train"]["sigma"], 0.2);
    assert_eq!(summary["folds"].as_array().unwrap().len(), 1);
}
