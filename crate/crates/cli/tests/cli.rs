use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use regnn_cli::corpus;
use regnn_cli::RunConfig;

fn regnn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regnn"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, edit: impl FnOnce(&mut RunConfig)) {
    let mut cfg = RunConfig::default();
    cfg.behaviors = 4;
    cfg.train.lr_decay_epochs = vec![];
    cfg.train.learning_rate = 1e-2;
    edit(&mut cfg);
    std::fs::write(dir.join(name), cfg.to_text()).unwrap();
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn check_passes_on_fresh_model() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "cfg.txt", |_| {});
    let out = regnn(dir.path(), &["check", "--config", "cfg.txt", "--seed", "9"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["round-trip", "contraction", "normalization", "gradient"] {
        assert!(text.contains(&format!("PASS {name}")), "{text}");
    }
}

#[test]
fn eval_of_real_clips_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "cfg.txt", |_| {});
    let out = regnn(dir.path(), &["synth", "--config", "cfg.txt", "--out", "corpus"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let data = corpus::read_corpus(&dir.path().join("corpus/manifest.json")).unwrap();
    let preds: BTreeMap<_, _> = data.into_iter().map(|b| (b.id, b.listeners)).collect();
    corpus::write_predictions(&dir.path().join("preds"), &preds).unwrap();
    let out = regnn(
        dir.path(),
        &["eval", "--config", "cfg.txt", "--predictions", "preds/manifest.json", "--corpus", "corpus/manifest.json", "--out", "report.json"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["FRDist"].as_f64(), Some(0.0));
    assert!((report["PCC"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "two.txt", |c| c.train.epochs = 2);
    write_config(d, "one.txt", |c| c.train.epochs = 1);
    assert!(regnn(d, &["synth", "--config", "two.txt", "--out", "corpus"]).status.success());
    let m = "corpus/manifest.json";
    let full = regnn(d, &["train", "--config", "two.txt", "--corpus", m, "--out", "full"]);
    assert!(full.status.success(), "{}", stderr(&full));
    assert!(regnn(d, &["train", "--config", "one.txt", "--corpus", m, "--out", "half"]).status.success());
    let resumed = regnn(
        d,
        &["train", "--config", "two.txt", "--corpus", m, "--out", "resumed", "--resume", "half/checkpoint.json"],
    );
    assert!(resumed.status.success(), "{}", stderr(&resumed));
    for file in ["loss.csv", "checkpoint.json"] {
        let a = std::fs::read(d.join("full").join(file)).unwrap();
        let b = std::fs::read(d.join("resumed").join(file)).unwrap();
        assert!(a == b, "{file} differs");
    }
    let log = std::fs::read_to_string(d.join("full/loss.csv")).unwrap();
    assert!(log.starts_with("epoch,loss_eq7,loss_eq9,total\n0,"));
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn predict_and_sample_write_requested_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "cfg.txt", |c| c.train.epochs = 1);
    assert!(regnn(d, &["synth", "--config", "cfg.txt", "--out", "corpus"]).status.success());
    assert!(regnn(d, &["train", "--config", "cfg.txt", "--corpus", "corpus/manifest.json", "--out", "t"]).status.success());
    let out = regnn(
        d,
        &["predict", "--config", "cfg.txt", "--checkpoint", "t/checkpoint.json", "--corpus", "corpus/manifest.json", "--out", "p", "--samples", "3"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let preds = corpus::read_predictions(&d.join("p/manifest.json")).unwrap();
    assert_eq!(preds.len(), 4);
    assert!(preds.values().all(|c| c.len() == 3));
    let out = regnn(
        d,
        &[
            "sample", "--config", "cfg.txt", "--checkpoint", "t/checkpoint.json", "--speaker", "corpus/clips/b000_speaker.jsonl",
            "--out", "s.jsonl", "--samples", "2", "--distribution", "dist.json",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(corpus::read_clips(&d.join("s.jsonl")).unwrap().len(), 2);
    let dist = std::fs::read_to_string(d.join("dist.json")).unwrap();
    regnn_core::GaussianMixtureGraphDistribution::from_json(&dist).unwrap();
}

#[test]
fn malformed_inputs_exit_2_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.txt"), "seed = 1\nlearning_rate = fast\n").unwrap();
    let out = regnn(d, &["check", "--config", "bad.txt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bad.txt:2: learning_rate"), "{}", stderr(&out));

    std::fs::write(d.join("unknown.txt"), "sead = 1\n").unwrap();
    let out = regnn(d, &["synth", "--config", "unknown.txt", "--out", "c"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown.txt:1"), "{}", stderr(&out));

    std::fs::write(d.join("manifest.json"), "{\"b0\": {\"speaker\": \"nope.jsonl\", \"listeners\": []}}").unwrap();
    let out = regnn(d, &["train", "--corpus", "manifest.json", "--out", "t"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("manifest.json"), "{}", stderr(&out));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (out, seed) in [("a", "3"), ("b", "3"), ("c", "4")] {
        assert!(regnn(d, &["synth", "--seed", seed, "--out", out]).status.success());
    }
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read("a/clips/b000_listener_1.jsonl"), read("b/clips/b000_listener_1.jsonl"));
    assert_ne!(read("a/clips/b000_listener_1.jsonl"), read("c/clips/b000_listener_1.jsonl"));
}
