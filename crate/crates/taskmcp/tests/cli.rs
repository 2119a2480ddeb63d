use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn taskmcp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taskmcp"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    art: String,
    data: String,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let art = dir.path().join("artifacts").to_str().unwrap().to_string();
        Workspace { data: fixtures().to_str().unwrap().to_string(), art, _dir: dir }
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut all = vec!["--data", &self.data, "--artifacts", &self.art];
        all.extend_from_slice(args);
        taskmcp(&all)
    }

    fn path(&self, name: &str) -> PathBuf {
        Path::new(&self.art).join(name)
    }

    fn train(&self, seed: &str, epochs: &str) -> Output {
        self.run(&[
            "--seed", seed, "train", "--epochs", epochs, "--batch-size", "4", "--hidden", "16", "--output-dim", "8",
        ])
    }

    fn trained() -> Self {
        let ws = Workspace::new();
        ok(&ws.run(&["build-vocab"]));
        ok(&ws.train("7", "5"));
        ok(&ws.run(&["index"]));
        ws
    }
}

fn jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn train_writes_checkpoint_and_one_log_row_per_epoch() {
    let ws = Workspace::trained();
    assert!(ws.path("checkpoint.bin").is_file());
    assert!(ws.path("index.bin").is_file());
    let log = jsonl(&ws.path("train_log.jsonl"));
    assert_eq!(log.len(), 5);
    for (i, row) in log.iter().enumerate() {
        assert_eq!(row["epoch"], i + 1);
        assert!(row["loss"].as_f64().unwrap().is_finite());
    }
}

#[test]
fn same_seed_reproduces_training_log() {
    let a = Workspace::new();
    ok(&a.run(&["build-vocab"]));
    ok(&a.train("7", "3"));
    let b = Workspace::new();
    ok(&b.run(&["build-vocab"]));
    ok(&b.train("7", "3"));
    let read = |w: &Workspace, f: &str| std::fs::read(w.path(f)).unwrap();
    assert_eq!(read(&a, "train_log.jsonl"), read(&b, "train_log.jsonl"));
    assert_eq!(read(&a, "checkpoint.bin"), read(&b, "checkpoint.bin"));
}

#[test]
fn epochs_zero_writes_a_loadable_checkpoint() {
    let ws = Workspace::new();
    ok(&ws.run(&["build-vocab"]));
    ok(&ws.train("1", "0"));
    assert!(jsonl(&ws.path("train_log.jsonl")).is_empty());
    ok(&ws.run(&["index"]));
}

#[test]
fn missing_corpus_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = taskmcp(&["--data", missing.to_str().unwrap(), "--artifacts", dir.path().to_str().unwrap(), "build-vocab"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nowhere"), "{err}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(taskmcp(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(taskmcp(&["recommend"]).status.code(), Some(1));
    assert_eq!(taskmcp(&["--help"]).status.code(), Some(0));
}

#[test]
fn recommend_prints_exactly_k_rows() {
    let ws = Workspace::trained();
    let stdout = ok(&ws.run(&["recommend", "--k", "5", "--text", "summarize youtube videos in python"]));
    let rows = stdout.lines().filter(|l| l.trim_start().chars().next().is_some_and(|c| c.is_ascii_digit())).count();
    assert_eq!(rows, 5, "{stdout}");
    assert!(stdout.contains("s_sem") && stdout.contains("s_str"));
}

#[test]
fn k_above_pool_size_is_rejected() {
    let ws = Workspace::trained();
    let out = ws.run(&["recommend", "--k", "60", "--text", "summarize videos"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn reranker_none_is_the_fused_prefix_and_builtin_succeeds() {
    let ws = Workspace::trained();
    let tasks = fixtures().join("tasks.jsonl");
    let tasks = tasks.to_str().unwrap();
    let out_none = ws.path("none");
    let out_builtin = ws.path("builtin");
    ok(&ws.run(&["--out", out_none.to_str().unwrap(), "recommend", "--tasks", tasks, "--k", "5", "--save"]));
    ok(&ws.run(&[
        "--out",
        out_builtin.to_str().unwrap(),
        "recommend",
        "--tasks",
        tasks,
        "--k",
        "5",
        "--save",
        "--reranker",
        "builtin",
    ]));
    let none = jsonl(&out_none.join("recommendations.jsonl"));
    let builtin = jsonl(&out_builtin.join("recommendations.jsonl"));
    assert_eq!(none.len(), 15);
    assert_eq!(builtin.len(), 15);
    for rec in &none {
        assert_eq!(rec["status"], "accepted");
        let fused: Vec<f64> = rec["items"].as_array().unwrap().iter().map(|i| i["scores"]["fused"].as_f64().unwrap()).collect();
        assert_eq!(fused.len(), 5);
        assert!(fused.windows(2).all(|w| w[0] >= w[1]), "{fused:?}");
    }
    for rec in &builtin {
        assert_eq!(rec["items"].as_array().unwrap().len(), 5);
    }
}

#[test]
fn recommend_output_is_byte_identical_across_runs() {
    let ws = Workspace::trained();
    let tasks = fixtures().join("tasks.jsonl");
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let out = ws.path(run);
        ok(&ws.run(&["--out", out.to_str().unwrap(), "recommend", "--tasks", tasks.to_str().unwrap(), "--save"]));
        files.push(std::fs::read(out.join("recommendations.jsonl")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn evaluate_writes_both_cutoffs() {
    let ws = Workspace::trained();
    let stdout = ok(&ws.run(&["evaluate", "--ks", "5,10"]));
    for col in ["Recall@5", "Recall@10", "NDCG@5", "NDCG@10"] {
        assert!(stdout.contains(col), "{stdout}");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(ws.path("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["ks"], serde_json::json!([5, 10]));
    assert!(ws.path("eval_report.txt").is_file());
}

#[test]
fn oracle_ranker_scores_perfect_recall_and_ndcg() {
    let ws = Workspace::trained();
    ok(&ws.run(&["evaluate", "--oracle", "--split", "all", "--ks", "1,5"]));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(ws.path("eval_report.json")).unwrap()).unwrap();
    for avg in report["averages"].as_array().unwrap() {
        assert_eq!(avg["ndcg"].as_f64().unwrap(), 1.0);
    }
    // no task has more than 5 positives, and each has at least one
    assert_eq!(report["averages"][1]["recall"].as_f64().unwrap(), 1.0);
    assert_eq!(report["averages"][0]["precision"].as_f64().unwrap(), 1.0);
}

#[test]
fn no_structural_changes_the_report() {
    let ws = Workspace::trained();
    let ndcgs = |extra: &[&str]| -> Vec<f64> {
        let mut args = vec!["evaluate", "--split", "all", "--ks", "1,3"];
        args.extend_from_slice(extra);
        ok(&ws.run(&args));
        let r: Value = serde_json::from_str(&std::fs::read_to_string(ws.path("eval_report.json")).unwrap()).unwrap();
        r["per_task"]
            .as_array()
            .unwrap()
            .iter()
            .flat_map(|t| t["metrics"].as_array().unwrap().iter().map(|m| m["ndcg"].as_f64().unwrap()).collect::<Vec<_>>())
            .collect()
    };
    assert_ne!(ndcgs(&[]), ndcgs(&["--no-structural"]), "structural features should move at least one ranking");
}

#[test]
fn sparse_pipeline_runs_without_a_checkpoint() {
    let ws = Workspace::new();
    ok(&ws.run(&["build-vocab"]));
    ok(&ws.run(&["index", "--no-two-tower"]));
    let stdout = ok(&ws.run(&["recommend", "--no-two-tower", "--k", "3", "--text", "run python unit tests"]));
    assert!(stdout.contains("pytest-runner"), "{stdout}");
}

#[test]
fn external_reranker_needs_an_endpoint() {
    let ws = Workspace::trained();
    let out = Command::new(env!("CARGO_BIN_EXE_taskmcp"))
        .args(["--data", &ws.data, "--artifacts", &ws.art, "recommend", "--reranker", "external", "--text", "x"])
        .env_remove("TASKMCP_RERANK_URL")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
