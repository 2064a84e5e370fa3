use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dusev_core::discriminator::{CheckpointFile, Discriminator, ModelConfig};

const SMALL: &str = r#"{
  "generator": {"n_scenes": 400, "seed": 7},
  "model": {"d_model": 16, "n_layers": 1, "n_heads": 2, "ffn_dim": 32, "head_widths": [16, 8]},
  "train": {"epochs": 2, "patience": 2},
  "explain": {"background_size": 8, "explain_size": 12},
  "robustness": {"background_size": 8},
  "bench": {"warmup": 2, "runs": 20}
}"#;

fn dusev(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dusev"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = dusev(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn pipeline(dir: &Path) {
    fs::write(dir.join("cfg.json"), SMALL).unwrap();
    for cmd in ["generate", "train", "eval", "explain", "surface", "perturb"] {
        ok(dir, &["--config", "cfg.json", cmd]);
    }
}

#[test]
fn pipeline_outputs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (name, bytes) in &sa {
        assert!(bytes == &sb[name], "{name} differs between runs");
    }
    for name in [
        "scenes.csv",
        "model.json",
        "model.json.meta.json",
        "out/history.csv",
        "out/metrics.json",
        "out/robustness.json",
        "out/explain/shapley.json",
        "out/explain/surrogate.json",
        "out/explain/synergy.dot",
        "out/explain/dependence_wp.csv",
        "out/surfaces/surface_em_wp.csv",
    ] {
        assert!(sa.contains_key(name), "missing {name}");
    }
    let surfaces = sa.keys().filter(|k| k.starts_with("out/surfaces/") && k.ends_with(".csv")).count();
    assert_eq!(surfaces, 10);
    let surface = String::from_utf8(sa["out/surfaces/surface_em_wp.csv"].clone()).unwrap();
    assert_eq!(surface.lines().count(), 1 + 41 * 41);
    assert!(surface.starts_with("v_em,v_wp,score\n"));

    let metrics: serde_json::Value = serde_json::from_slice(&sa["out/metrics.json"]).unwrap();
    assert_eq!(metrics["split"], "test");
    assert_eq!(metrics["metrics"]["n_samples"], 60);
    let robustness: serde_json::Value = serde_json::from_slice(&sa["out/robustness.json"]).unwrap();
    assert_eq!(robustness.as_array().unwrap().len(), 4 + 5 + 1);
    let meta: serde_json::Value = serde_json::from_slice(&sa["out/metrics.json.meta.json"]).unwrap();
    assert_eq!(meta["command"], "eval");
    assert_eq!(meta["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn overrides_change_the_output() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "--n", "50", "--seed", "1", "--out", "a.csv"]);
    ok(dir.path(), &["generate", "--n", "50", "--seed", "2", "--out", "b.csv"]);
    let a = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(a.lines().count(), 51);
    assert_ne!(a, fs::read_to_string(dir.path().join("b.csv")).unwrap());
}

#[test]
fn zeroed_head_scores_five() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = Discriminator::new(ModelConfig::default()).unwrap();
    model.params.head.w3.value.fill(0.0);
    model.params.head.b3.value.fill(0.0);
    fs::write(dir.path().join("zero.json"), CheckpointFile::from_model(&model).to_bytes()).unwrap();
    fs::write(
        dir.path().join("scene.json"),
        r#"{"scene_id": "cam1-0001",
            "detections": [{"kind": "person", "confidence": 0.9}, {"kind": "weapon", "confidence": 0.8}],
            "faces": [{"emotion": "anger", "confidence": 0.7}]}"#,
    )
    .unwrap();
    let out = ok(
        dir.path(),
        &["score", "--detections", "scene.json", "--model", "zero.json", "--attention"],
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["scene_id"], "cam1-0001");
    assert_eq!(v["counts"], serde_json::json!([1, 1, 1, 0, 0]));
    assert_eq!(v["score"].as_f64().unwrap(), 5.0);
    assert_eq!(v["band"], "Medium");
    assert!(v["attention"].is_array());

    fs::write(dir.path().join("empty.json"), r#"{"scene_id": "cam1-0002"}"#).unwrap();
    let out = ok(dir.path(), &["score", "--detections", "empty.json", "--model", "zero.json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["counts"], serde_json::json!([0, 0, 0, 0, 0]));
    assert_eq!(v["score"].as_f64().unwrap(), 5.0);
    assert!(v.get("attention").is_none());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(dusev(p, &["--help"]).status.code(), Some(0));
    assert_eq!(dusev(p, &["frobnicate"]).status.code(), Some(1));
    let unknown_flag = dusev(p, &["generate", "--colour"]);
    assert_eq!(unknown_flag.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown_flag.stderr).contains("Usage"));
    assert_eq!(dusev(p, &["eval", "--data", "missing.csv"]).status.code(), Some(2));
    assert_eq!(dusev(p, &["--config", "missing.json", "generate"]).status.code(), Some(2));
    fs::write(p.join("bad.json"), r#"{"generator": {"n_scenez": 5}}"#).unwrap();
    assert_eq!(dusev(p, &["--config", "bad.json", "generate"]).status.code(), Some(1));
    fs::write(p.join("neg.json"), r#"{"train": {"lr": -1.0}}"#).unwrap();
    assert_eq!(dusev(p, &["--config", "neg.json", "bench"]).status.code(), Some(1));
    fs::write(p.join("scenes.csv"), "not,a,scenes,file\n").unwrap();
    assert_eq!(dusev(p, &["train"]).status.code(), Some(1));
    assert!(!p.join("model.json").exists());
}

#[test]
fn bench_reports_latency() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["bench", "--runs", "200"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["runs"], 200);
    let (mean, p50, p99) = (
        v["mean_ms"].as_f64().unwrap(),
        v["p50_ms"].as_f64().unwrap(),
        v["p99_ms"].as_f64().unwrap(),
    );
    assert!(mean > 0.0 && mean < 5.0, "mean {mean} ms");
    assert!(p50 <= p99);
}
