use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn convact(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convact"))
        .args(args)
        .current_dir(dir)
        .env("CONVACT_CACHE", dir.join("cache"))
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn convact")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, sessions: &str, turns: &str) -> PathBuf {
    let o = convact(dir, &["synth", "--sessions", sessions, "--turns", turns, "--out", "corpus.tsv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("corpus.tsv")
}

const SMALL: [&str; 6] = ["--set", "model.hidden_units=6", "--set", "model.epochs=1", "--set", "model.attention_dim=4"];

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let o = convact(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn missing_corpus_and_unknown_keys_exit_2() {
    let dir = TempDir::new().unwrap();
    let o = convact(dir.path(), &["ablate"]);
    assert_eq!(o.status.code(), Some(2));
    synth(dir.path(), "3", "12");
    let o = convact(dir.path(), &["ablate", "--corpus", "corpus.tsv", "--set", "model.depth=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.depth"));
    let o = convact(dir.path(), &["train", "--corpus", "corpus.tsv", "--seeds", "3..1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_exits_zero() {
    let dir = TempDir::new().unwrap();
    let o = convact(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for sub in ["corpus", "kappa", "features", "train", "ablate", "pipeline", "synth", "report"] {
        assert!(stdout(&o).contains(sub), "{sub}");
    }
}

#[test]
fn synthesized_corpus_validates_clean() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), "20", "18");
    let o = convact(dir.path(), &["corpus", "validate", "corpus.tsv"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "0 violations");

    let o = convact(dir.path(), &["corpus", "stats", "corpus.tsv", "--json"]);
    assert!(o.status.success());
    let stats: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(stats["sessions"], 20);
}

#[test]
fn out_of_order_corpus_fails_validation() {
    let dir = TempDir::new().unwrap();
    let path = synth(dir.path(), "2", "12");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.swap(2, 3);
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = convact(dir.path(), &["corpus", "validate", "corpus.tsv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!stdout(&o).trim().ends_with(" 0 violations"));
}

#[test]
fn jsonl_and_tsv_outputs_agree() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), "5", "14");
    let o = convact(dir.path(), &["synth", "--sessions", "5", "--turns", "14", "--out", "corpus.jsonl"]);
    assert!(o.status.success());
    let a = convact(dir.path(), &["corpus", "stats", "corpus.tsv", "--json"]);
    let b = convact(dir.path(), &["corpus", "stats", "corpus.jsonl", "--json"]);
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn grammar_round_trips_through_synth() {
    let dir = TempDir::new().unwrap();
    let o = convact(dir.path(), &["synth", "--sessions", "2", "--dump-grammar", "g.json", "--out", "a.tsv"]);
    assert!(o.status.success());
    let o = convact(dir.path(), &["synth", "--sessions", "2", "--grammar", "g.json", "--out", "b.tsv"]);
    assert!(o.status.success());
    assert_eq!(fs::read(dir.path().join("a.tsv")).unwrap(), fs::read(dir.path().join("b.tsv")).unwrap());

    let o = convact(dir.path(), &["synth", "--sessions", "2", "--turns", "4", "--out", "c.tsv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ablation_over_thirty_seeds() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), "10", "14");
    let mut args = vec!["ablate", "--corpus", "corpus.tsv", "--task", "search", "--seeds", "1..30", "--encoder", "stub", "--out", "ab"];
    args.extend(SMALL);
    let o = convact(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("ab");
    let tsv = fs::read_to_string(out.join("ablation_report.tsv")).unwrap();
    let rows: Vec<&str> = tsv.lines().skip(1).collect();
    assert_eq!(rows.len(), 7 * 30);
    let combos: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.split('\t').nth(1).unwrap()).collect();
    assert_eq!(combos.len(), 7);

    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["software"], "convact");
    assert_eq!(manifest["seeds"].as_array().unwrap().len(), 30);
    assert_eq!(manifest["schema_hash"].as_array().unwrap().len(), 30);
    assert_eq!(manifest["config"]["model.hidden_units"], 6);
    assert!(manifest["encoder"].as_str().unwrap().starts_with("stub"));
    for f in ["summary.md", "significance.tsv", "ablation.json", "confusion_search.tsv", "accuracy_search.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn identical_configs_give_identical_bytes() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), "8", "14");
    fs::write(
        dir.path().join("run.json"),
        r#"{"corpus": ["corpus.tsv"], "task": "search", "channels": "meta,linguistic", "seeds": "1..4",
            "model.hidden_units": 6, "model.epochs": 2, "output": "run"}"#,
    )
    .unwrap();
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let o = convact(dir.path(), &["ablate", "--config", "run.json"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let out = dir.path().join("run");
        let read = |f: &str| fs::read(out.join(f)).unwrap();
        snapshots.push((read("ablation_report.tsv"), read("significance.tsv"), read("run_manifest.json")));
        fs::remove_dir_all(out).unwrap();
    }
    assert_eq!(snapshots[0], snapshots[1]);
    let tsv = String::from_utf8(snapshots[0].0.clone()).unwrap();
    assert_eq!(tsv.lines().count(), 1 + 3 * 4);
}

#[test]
fn flags_override_config_and_set_overrides_flags() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), "4", "12");
    fs::write(dir.path().join("run.json"), r#"{"corpus": "corpus.tsv", "model.epochs": 9, "channels": "meta"}"#).unwrap();
    let o = convact(
        dir.path(),
        &["features", "extract", "--config", "run.json", "--epochs", "5", "--set", "model.epochs=3", "--out", "fx"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fx/run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["model.epochs"], 3);
    assert_eq!(manifest["config"]["channels"], "meta");
    assert_eq!(manifest["command"], "features extract");
}

#[test]
fn bert_channel_without_encoder_is_rejected() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), "2", "12");
    let o = convact(dir.path(), &["features", "extract", "--corpus", "corpus.tsv"]);
    assert_eq!(o.status.code(), Some(2));
    let o = convact(dir.path(), &["features", "extract", "--corpus", "corpus.tsv", "--encoder", "roberta"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cache"), "{}", stderr(&o));
}

#[test]
fn train_then_pipeline() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), "12", "16");
    for (task, out) in [("speech", "sp"), ("search", "se")] {
        let mut args = vec!["train", "--corpus", "corpus.tsv", "--task", task, "--channels", "meta,linguistic", "--out", out];
        args.extend(SMALL);
        let o = convact(dir.path(), &args);
        assert!(o.status.success(), "{}", stderr(&o));
        let metrics: Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(out).join("metrics.json")).unwrap()).unwrap();
        assert!(metrics["n_test"].as_u64().unwrap() > 0);
    }
    let o = convact(
        dir.path(),
        &["pipeline", "run", "--corpus", "corpus.tsv", "--channels", "meta,linguistic", "--speech-model", "sp/model", "--search-model", "se/model", "--out", "pl"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let preds = fs::read_to_string(dir.path().join("pl/predictions.tsv")).unwrap();
    let stats = convact(dir.path(), &["corpus", "stats", "corpus.tsv", "--json"]);
    let stats: Value = serde_json::from_str(&stdout(&stats)).unwrap();
    let search_rows = preds.lines().filter(|l| l.split('\t').nth(2) == Some("search")).count();
    assert_eq!(search_rows as u64, stats["search_actions"].as_u64().unwrap());
    let speech_rows = preds.lines().filter(|l| l.split('\t').nth(2) == Some("speech")).count();
    assert_eq!(speech_rows as u64, stats["utterances"].as_u64().unwrap());
}

#[test]
fn kappa_reports_agreement() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("speech.tsv"),
        "item_id\tannotator_id\tlabel\nu1\ta\tS1\nu1\tb\tS1\nu2\ta\tS2\nu2\tb\tS1\nu3\ta\tS2\nu3\tb\tS2\nu4\ta\tS1\nu4\tb\tS2\n",
    )
    .unwrap();
    let o = convact(dir.path(), &["kappa", "--speech", "speech.tsv", "--out", "k"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("k/kappa.tsv").exists());
    assert!(dir.path().join("k/kappa.md").exists());
    let o = convact(dir.path(), &["kappa"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_rerenders_saved_ablation() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), "6", "14");
    let mut args = vec!["ablate", "--corpus", "corpus.tsv", "--task", "search", "--channels", "meta", "--seeds", "1..2", "--out", "ab"];
    args.extend(SMALL);
    assert!(convact(dir.path(), &args).status.success());
    let o = convact(dir.path(), &["report", "--ablation", "ab/ablation.json", "--corpus", "corpus.tsv", "--out", "rp"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(dir.path().join("ab/ablation_report.tsv")).unwrap(),
        fs::read(dir.path().join("rp/ablation_report.tsv")).unwrap()
    );
    assert!(dir.path().join("rp/speech_act_counts.svg").exists());
}
