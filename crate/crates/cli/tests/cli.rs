//! End-to-end tests of the `pftopics` binary: every subcommand through a real
//! process, checking stdout JSON, file outputs, determinism, and exit codes
//! (0 success, 1 domain error, 2 usage error).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pftopics")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("spawning the pftopics binary")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON value")
}

/// Ground truth with well-separated topics over a 6-word vocabulary.
fn write_truth(path: &Path, p: f64, target_kind: &str) {
    let truth = serde_json::json!({
        "k": 2,
        "p": p,
        "alpha": [],
        "target_kind": target_kind,
        "beta": [
            [0.45, 0.45, 0.025, 0.025, 0.025, 0.025],
            [0.025, 0.025, 0.45, 0.45, 0.025, 0.025],
        ],
        "pi": [0.05, 0.05, 0.05, 0.05, 0.4, 0.4],
        "eta": [2.0, -2.0],
        "delta": 0.25,
    });
    std::fs::write(path, serde_json::to_string(&truth).unwrap()).unwrap();
}

/// Simulate a corpus, returning (vocab path, docs path).
fn simulated_corpus(dir: &Path, p: f64, target_kind: &str, docs: usize) -> (PathBuf, PathBuf) {
    let truth = dir.join("truth.json");
    write_truth(&truth, p, target_kind);
    let sim = dir.join("sim");
    let out = run(&[
        "simulate",
        "--truth",
        truth.to_str().unwrap(),
        "--num-docs",
        &docs.to_string(),
        "--tokens-per-doc",
        "40",
        "--seed",
        "7",
        "--out-dir",
        sim.to_str().unwrap(),
    ]);
    let summary = stdout_json(&out);
    assert_eq!(summary["v"], 6);
    assert_eq!(summary["docs"], docs);
    (sim.join("vocab.txt"), sim.join("docs.tsv"))
}

#[test]
fn simulate_with_switch_prior_one_marks_every_token_relevant() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("truth.json");
    write_truth(&truth, 1.0, "real");
    let sim = dir.path().join("sim");
    let out = run(&[
        "simulate",
        "--truth",
        truth.to_str().unwrap(),
        "--num-docs",
        "20",
        "--tokens-per-doc",
        "15",
        "--seed",
        "11",
        "--out-dir",
        sim.to_str().unwrap(),
    ]);
    stdout_json(&out);
    let latents = std::fs::read_to_string(sim.join("latents.jsonl")).unwrap();
    let mut lines = 0;
    for line in latents.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let xi = v["xi"].as_array().unwrap();
        assert_eq!(xi.len(), 15);
        assert!(xi.iter().all(|x| x == true), "p=1 must force xi = 1: {v}");
        lines += 1;
    }
    assert_eq!(lines, 20);
}

#[test]
fn prep_identity_bounds_keep_the_vocabulary_and_split_adds_up() {
    let dir = tempfile::tempdir().unwrap();
    let (vocab, docs) = simulated_corpus(dir.path(), 0.3, "real", 40);
    let prep = dir.path().join("prep");
    let out = run(&[
        "prep",
        "--vocab",
        vocab.to_str().unwrap(),
        "--docs",
        docs.to_str().unwrap(),
        "--out-dir",
        prep.to_str().unwrap(),
        "--min-docs",
        "0",
        "--max-doc-frac",
        "1",
        "--train-frac",
        "0.7",
        "--val-frac",
        "0.15",
        "--test-frac",
        "0.15",
        "--seed",
        "3",
    ]);
    let summary = stdout_json(&out);
    assert_eq!(summary["v"], 6, "identity bounds must not prune");
    let (m, tr, va, te) = (
        summary["m"].as_u64().unwrap(),
        summary["train"].as_u64().unwrap(),
        summary["val"].as_u64().unwrap(),
        summary["test"].as_u64().unwrap(),
    );
    assert_eq!(tr + va + te, m);
    assert_eq!(va, 6); // floor(0.15 · 40)
    assert_eq!(te, 6);
    for f in ["vocab.txt", "train.docs", "val.docs", "test.docs", "manifest.json"] {
        assert!(prep.join(f).exists(), "prep must write {f}");
    }
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(prep.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["target_kind"], "real");
    assert_eq!(manifest["train_docs"], 28);
}

#[test]
fn prep_with_missing_docs_file_exits_1_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = dir.path().join("vocab.txt");
    std::fs::write(&vocab, "alpha\nbeta\n").unwrap();
    let out = run(&[
        "prep",
        "--vocab",
        vocab.to_str().unwrap(),
        "--docs",
        "/definitely/not/here.docs",
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("/definitely/not/here.docs"),
        "error must name the missing path: {stderr}"
    );
}

#[test]
fn unknown_flag_is_a_usage_error_with_exit_2() {
    let out = run(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

fn train_args<'a>(
    vocab: &'a str,
    docs: &'a str,
    model: &'a str,
    extra: &[&'a str],
) -> Vec<&'a str> {
    let mut args = vec![
        "train",
        "--vocab",
        vocab,
        "--docs",
        docs,
        "--model-out",
        model,
        "--k",
        "2",
        "--epochs",
        "40",
        "--learning-rate",
        "0.1",
        "--seed",
        "5",
    ];
    args.extend_from_slice(extra);
    args
}

#[test]
fn train_is_byte_deterministic_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (vocab, docs) = simulated_corpus(dir.path(), 0.3, "real", 30);
    let (vocab, docs) = (vocab.to_str().unwrap(), docs.to_str().unwrap());
    let model_a = dir.path().join("a.json");
    let model_b = dir.path().join("b.json");

    let out = run(&train_args(vocab, docs, model_a.to_str().unwrap(), &[]));
    let summary = stdout_json(&out);
    assert!(summary["elbo"].is_f64());
    assert!(summary["relevant_fraction"].is_f64());

    stdout_json(&run(&train_args(vocab, docs, model_b.to_str().unwrap(), &[])));
    assert_eq!(
        std::fs::read(&model_a).unwrap(),
        std::fs::read(&model_b).unwrap(),
        "same config and seed must reproduce the model byte for byte"
    );
    // The log exists and each line is one JSON record with the bound terms.
    let log = std::fs::read_to_string(dir.path().join("a.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 41, "one init record plus 40 epochs");
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["epoch"], 0);
    assert!(first["terms"]["t_words"].is_f64());
}

#[test]
fn train_with_switch_prior_one_logs_exactly_zero_switch_terms() {
    let dir = tempfile::tempdir().unwrap();
    let (vocab, docs) = simulated_corpus(dir.path(), 0.3, "real", 30);
    let model = dir.path().join("slda.json");
    let out = run(&train_args(
        vocab.to_str().unwrap(),
        docs.to_str().unwrap(),
        model.to_str().unwrap(),
        &["--p", "1.0"],
    ));
    stdout_json(&out);
    let log = std::fs::read_to_string(dir.path().join("slda.log.jsonl")).unwrap();
    let last: Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(last["terms"]["t_xi_prior"], 0.0);
    assert_eq!(last["terms"]["h_xi"], 0.0);
}

#[test]
fn sweep_writes_one_model_per_p_and_a_summary_table() {
    let dir = tempfile::tempdir().unwrap();
    let (vocab, docs) = simulated_corpus(dir.path(), 0.3, "real", 30);
    let model = dir.path().join("sweep.json");
    let out = run(&train_args(
        vocab.to_str().unwrap(),
        docs.to_str().unwrap(),
        model.to_str().unwrap(),
        &["--sweep-p", "0.3,0.6"],
    ));
    let rows = stdout_json(&out);
    let rows = rows.as_array().expect("sweep summary is a JSON array");
    assert_eq!(rows.len(), 2);
    for (row, p) in rows.iter().zip([0.3, 0.6]) {
        assert_eq!(row["p"], p);
        assert!(row["coherence"].is_f64());
        assert!(row["relevant_fraction"].is_f64());
        let path = PathBuf::from(row["model"].as_str().unwrap());
        assert!(path.exists(), "sweep must write {}", path.display());
    }
}

#[test]
fn command_line_flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let (vocab, docs) = simulated_corpus(dir.path(), 0.3, "real", 30);
    let model = dir.path().join("m.json");
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        serde_json::to_string(&serde_json::json!({
            "k": 2,
            "epochs": 30,
            "learning_rate": 0.1,
            "vocab": vocab.to_str().unwrap(),
            "docs": docs.to_str().unwrap(),
            "model_out": model.to_str().unwrap(),
        }))
        .unwrap(),
    )
    .unwrap();
    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--k", "3"]);
    stdout_json(&out);
    let saved: Value =
        serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(saved["k"], 3, "the --k flag must win over the config file");
}

/// Train a small model and return (model path, vocab path, docs path).
fn trained_model(dir: &Path, target_kind: &str) -> (PathBuf, PathBuf, PathBuf) {
    let (vocab, docs) = simulated_corpus(dir, 0.3, target_kind, 40);
    let model = dir.join("model.json");
    stdout_json(&run(&train_args(
        vocab.to_str().unwrap(),
        docs.to_str().unwrap(),
        model.to_str().unwrap(),
        &[],
    )));
    (model, vocab, docs)
}

#[test]
fn eval_reports_metrics_json_and_topics_prints_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _vocab, docs) = trained_model(dir.path(), "real");
    let out = run(&[
        "eval",
        "--model",
        model.to_str().unwrap(),
        "--docs",
        docs.to_str().unwrap(),
    ]);
    let metrics = stdout_json(&out);
    assert_eq!(metrics["target_kind"], "real");
    assert_eq!(metrics["metric_name"], "rmse");
    assert!(metrics["metric"].as_f64().unwrap().is_finite());
    assert!(metrics["coherence"].is_f64());
    assert!(metrics["support_overlap"].is_f64());

    let report_file = dir.path().join("report.txt");
    let out = run(&[
        "topics",
        "--model",
        model.to_str().unwrap(),
        "--docs",
        docs.to_str().unwrap(),
        "--report-out",
        report_file.to_str().unwrap(),
    ]);
    stdout_json(&out);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("most positive topic") && stderr.contains("topic #"),
        "topics must print the report: {stderr}"
    );
    assert!(stderr.contains("background"));
    let saved = std::fs::read_to_string(&report_file).unwrap();
    assert!(saved.contains("most positive topic"));
}

#[test]
fn eval_rejects_a_mismatched_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _vocab, docs) = trained_model(dir.path(), "real");
    let other = dir.path().join("other-vocab.txt");
    std::fs::write(&other, "completely\ndifferent\nterms\n").unwrap();
    let out = run(&[
        "eval",
        "--model",
        model.to_str().unwrap(),
        "--docs",
        docs.to_str().unwrap(),
        "--vocab",
        other.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("vocabulary mismatch"), "{stderr}");
}

#[test]
fn eval_single_class_binary_split_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _vocab, _docs) = trained_model(dir.path(), "binary");
    // Every document labeled 1: AUC is undefined.
    let single = dir.path().join("single.docs");
    std::fs::write(&single, "a\t1\t0:2 3:1\nb\t1\t1:1 4:2\nc\t1\t2:3\n").unwrap();
    let out = run(&[
        "eval",
        "--model",
        model.to_str().unwrap(),
        "--docs",
        single.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("both classes"), "{stderr}");
}

#[test]
fn predict_emits_one_json_line_per_document() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _vocab, docs) = trained_model(dir.path(), "real");
    let out = run(&[
        "predict",
        "--model",
        model.to_str().unwrap(),
        "--docs",
        docs.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 40);
    for line in lines {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["id"].is_string());
        assert!(v["y_hat"].as_f64().unwrap().is_finite());
    }
}

#[test]
fn verify_passes_and_reports_margins() {
    let out = run(&["verify", "--instances", "8", "--seed", "1"]);
    let report = stdout_json(&out);
    assert_eq!(report["pass"], true);
    assert_eq!(report["bound"]["pass"], true);
    assert!(report["bound"]["max_gap"].as_f64().unwrap() <= 1e-6);
    assert_eq!(report["gradients"]["pass"], true);
    assert_eq!(report["switch_posterior"]["pass"], true);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bound: PASS"), "{stderr}");
}
