//! The `layoutkit` binary: run directories, exit codes and reruns.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[corpus]
doc_count = 24
[model]
hidden_size = 16
layers = 1
heads = 2
ffn_size = 32
[pretrain.schedule]
steps = 6
batch_size = 4
warmup_steps = 1
[finetune]
eval_every = 3
[finetune.schedule]
steps = 6
batch_size = 4
warmup_steps = 1
"#;

fn bin(root: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_layoutkit"));
    c.current_dir(root).env_remove("LAYOUTKIT_RUN_DIR");
    c
}

fn run(root: &Path, args: &[&str]) -> Output {
    bin(root).args(args).output().expect("binary runs")
}

fn ok(root: &Path, args: &[&str]) -> Output {
    let o = run(root, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    (t, cfg)
}

fn runs(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .map(|r| r.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    v.sort();
    v
}

#[test]
fn gen_corpus_writes_ten_documents() {
    let (t, _) = setup();
    let root = t.path();
    ok(root, &["gen-corpus", "--out", "out", "--set", "corpus.doc_count=10"]);
    let dir = root.join("out/gen-corpus-0001");
    let lines = fs::read_to_string(dir.join("corpus.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 10);
    let split_lines: usize = ["train", "dev", "test"]
        .iter()
        .map(|s| fs::read_to_string(dir.join(format!("{s}.jsonl"))).unwrap().lines().count())
        .sum();
    assert_eq!(split_lines, 10);
    assert!(fs::read_to_string(dir.join("stats.txt")).unwrap().contains("ADDRESS"));
    let stats: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["docs"], 10);
    for f in ["config.toml", "manifest.json"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn run_directories_are_append_only_and_relocatable() {
    let (t, cfg) = setup();
    let root = t.path();
    let c = cfg.to_str().unwrap();
    ok(root, &["gen-corpus", "--out", "a", "--config", c]);
    let first = fs::read(root.join("a/gen-corpus-0001/corpus.jsonl")).unwrap();
    ok(root, &["gen-corpus", "--out", "a", "--config", c, "--set", "corpus.seed=4"]);
    assert_eq!(runs(&root.join("a")), ["gen-corpus-0001", "gen-corpus-0002"]);
    assert_eq!(fs::read(root.join("a/gen-corpus-0001/corpus.jsonl")).unwrap(), first);
    assert_ne!(fs::read(root.join("a/gen-corpus-0002/corpus.jsonl")).unwrap(), first);

    let o = bin(root)
        .args(["gen-corpus", "--out", "a", "--config", c])
        .env("LAYOUTKIT_RUN_DIR", root.join("elsewhere"))
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(runs(&root.join("elsewhere")), ["gen-corpus-0001"]);
    assert_eq!(runs(&root.join("a")).len(), 2);
}

#[test]
fn config_errors_exit_2_without_outputs() {
    let (t, cfg) = setup();
    let root = t.path();
    let c = cfg.to_str().unwrap();
    for (args, needle) in [
        (vec!["gen-corpus", "--set", "corpus.doc_cnt=3"], "doc_cnt"),
        (vec!["gen-corpus", "--set", "pretrain.p_mlm=2"], "p_mlm"),
        (vec!["gen-corpus", "--config", "missing.toml"], "missing.toml"),
        (vec!["pretrain", "--config", c], "--corpus"),
        (vec!["gen-corpus", "--bogus-flag"], "bogus"),
    ] {
        let mut full = vec!["--out", "out"];
        full.extend(&args);
        let o = run(root, &full);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle), "{args:?}: {err}");
    }
    assert!(!root.join("out").exists(), "no run directory on config errors");
    fs::write(root.join("bad.toml"), "[pretrain]\nunknown_key = 1\n").unwrap();
    let o = run(root, &["gen-corpus", "--out", "out", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown_key"));
    assert_eq!(String::from_utf8_lossy(&o.stderr).trim().lines().count(), 1, "one-line diagnostic");
}

#[test]
fn runtime_errors_exit_3() {
    let (t, cfg) = setup();
    let root = t.path();
    let o = run(root, &["pretrain", "--out", "out", "--config", cfg.to_str().unwrap(), "--corpus", "nowhere"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere"));
}

#[test]
fn help_lists_every_flag() {
    let (t, _) = setup();
    let o = ok(t.path(), &["--help"]);
    let top = String::from_utf8_lossy(&o.stdout);
    for cmd in ["gen-corpus", "pretrain", "finetune", "eval", "robustness", "sweep", "inspect"] {
        assert!(top.contains(cmd), "{cmd}");
    }
    let o = ok(t.path(), &["eval", "--help"]);
    let h = String::from_utf8_lossy(&o.stdout);
    for flag in ["--config", "--set", "--from-manifest", "--corpus", "--checkpoint", "--split", "--out"] {
        assert!(h.contains(flag), "{flag}");
    }
}

#[test]
fn inspect_restarts_local_positions_per_segment() {
    let (t, _) = setup();
    let root = t.path();
    let doc = common::page("fig", &[&[&["Total", "Amount"], &["$12.30"]]]);
    fs::write(root.join("one.jsonl"), serde_json::to_string(&doc).unwrap() + "\n").unwrap();
    let o = ok(root, &["inspect", "--out", "out", "--corpus", "one.jsonl", "--set", "pretrain.mpm=false"]);
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    let table = fs::read_to_string(root.join("out/inspect-0001/inspect.txt")).unwrap();
    assert!(stdout.starts_with(&table));
    // rows: idx, input, original, word, segment, position, ...
    let rows: Vec<Vec<&str>> = table.lines().skip(2).map(|l| l.split_whitespace().collect()).collect();
    let seg_pos: Vec<(&str, &str)> = rows.iter().filter(|r| r.len() >= 6 && !r[2].starts_with('[')).map(|r| (r[4], r[5])).collect();
    // "Total" and "Amount" take 2 tokens each, "$12.30" takes 2
    assert_eq!(
        seg_pos,
        [("0", "1"), ("0", "2"), ("0", "3"), ("0", "4"), ("1", "1"), ("1", "2")]
    );
    let plan: serde_json::Value = serde_json::from_slice(&fs::read(root.join("out/inspect-0001/plan.json")).unwrap()).unwrap();
    assert_eq!(plan["pos_1d"], serde_json::json!([0, 1, 2, 3, 4, 1, 2, 0]));
    assert!(plan["mlm_actions"].as_array().unwrap().iter().any(|a| !a.is_null()), "the plan masks something");

    let o = ok(root, &["inspect", "--out", "out", "--corpus", "one.jsonl", "--set", "position.one_d=global"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("Global"));
    let plan: serde_json::Value = serde_json::from_slice(&fs::read(root.join("out/inspect-0002/plan.json")).unwrap()).unwrap();
    let pos = plan["pos_1d"].as_array().unwrap();
    assert_eq!(pos.first().unwrap(), 0);
    assert!(pos.len() >= 3);
}

fn sha(path: &Path) -> String {
    layoutkit::seed::sha256_hex(&fs::read(path).unwrap())
}

#[test]
fn reruns_from_manifests_are_identical() {
    let (t, cfg) = setup();
    let root = t.path();
    let c = cfg.to_str().unwrap();
    ok(root, &["gen-corpus", "--out", "out", "--config", c]);
    let corpus = "out/gen-corpus-0001";
    ok(root, &["pretrain", "--out", "out", "--config", c, "--corpus", corpus]);
    ok(root, &["pretrain", "--out", "out", "--from-manifest", "out/pretrain-0001/manifest.json"]);
    for f in ["checkpoint.lkc", "trace.csv"] {
        assert_eq!(sha(&root.join("out/pretrain-0001").join(f)), sha(&root.join("out/pretrain-0002").join(f)), "{f}");
    }

    ok(root, &["finetune", "--out", "out", "--config", c, "--corpus", corpus, "--checkpoint", "out/pretrain-0001/checkpoint.lkc"]);
    ok(root, &["finetune", "--out", "out", "--from-manifest", "out/finetune-0001/manifest.json"]);
    for f in ["checkpoint.lkc", "trace.csv", "dev_curve.csv"] {
        assert_eq!(sha(&root.join("out/finetune-0001").join(f)), sha(&root.join("out/finetune-0002").join(f)), "{f}");
    }

    let ckpt = "out/finetune-0001/checkpoint.lkc";
    ok(root, &["eval", "--out", "out", "--config", c, "--corpus", corpus, "--checkpoint", ckpt]);
    ok(root, &["eval", "--out", "out", "--from-manifest", "out/eval-0001/manifest.json"]);
    assert_eq!(sha(&root.join("out/eval-0001/report.json")), sha(&root.join("out/eval-0002/report.json")));

    ok(root, &["robustness", "--out", "out", "--config", c, "--corpus", corpus, "--checkpoint", ckpt]);
    let rows: Vec<serde_json::Value> =
        serde_json::from_slice(&fs::read(root.join("out/robustness-0001/robustness.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows[1..] {
        assert_eq!(r["eval"], rows[0]["eval"], "local/segment rows are identical");
    }

    // a global-position run cannot start from a local checkpoint
    let o = run(
        root,
        &["finetune", "--out", "out", "--config", c, "--corpus", corpus, "--checkpoint", "out/pretrain-0001/checkpoint.lkc", "--set", "position.one_d=global"],
    );
    assert_eq!(o.status.code(), Some(2));

    let m: serde_json::Value = serde_json::from_slice(&fs::read(root.join("out/pretrain-0001/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "pretrain");
    assert_eq!(m["outputs"]["checkpoint.lkc"], sha(&root.join("out/pretrain-0001/checkpoint.lkc")));
    assert!(m["input_hashes"]["corpus/train.jsonl"].is_string());
}
