//! `train`: fit the model on a prepared corpus, write the model JSON and a
//! per-epoch JSON-lines log, and report the final bound and metrics. With
//! `--sweep-p`, one model and log per switch-prior value plus a summary
//! comparing them.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use pftopics::corpus::{load_corpus, Corpus};
use pftopics::eval::topic_coherence;
use pftopics::inference::{train, TrainResult};
use pftopics::model::TrainedModel;

use crate::config::{emit, require_out_path, require_path, RunConfig};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run-config file; the flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Vocabulary file, one term per line.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Training documents file.
    #[arg(long)]
    pub docs: Option<PathBuf>,
    /// Validation documents (same vocabulary); tracked per epoch as RMSE
    /// (real targets) or AUC (binary).
    #[arg(long)]
    pub val_docs: Option<PathBuf>,
    /// Where the trained model JSON goes.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Per-epoch JSON-lines log (default: the model path with .log.jsonl).
    #[arg(long)]
    pub log_out: Option<PathBuf>,
    /// Number of topics.
    #[arg(long)]
    pub k: Option<usize>,
    /// Prior probability that a token is topic-relevant, in (0, 1].
    #[arg(long)]
    pub p: Option<f64>,
    /// Dirichlet prior: one value (symmetric) or K comma-separated values.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    /// ADAM step size.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Maximum training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Documents per gradient step (default: full batch).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// RNG seed for initialization and batch shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop when the relative bound improvement falls below this.
    #[arg(long)]
    pub convergence_tol: Option<f64>,
    /// Lower clamp on the topic-proportion posterior parameters.
    #[arg(long)]
    pub gamma_floor: Option<f64>,
    /// Train one model per value of p and print a comparison summary.
    #[arg(long, value_delimiter = ',')]
    pub sweep_p: Option<Vec<f64>>,
    /// Words per topic entering the sweep's coherence column.
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Use normalized PMI for the sweep's coherence column.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub npmi: Option<bool>,
}

#[derive(Serialize)]
struct TrainSummary {
    p: f64,
    elbo: f64,
    val_metric: Option<f64>,
    relevant_fraction: f64,
    converged_epoch: Option<usize>,
    model: String,
    log: String,
}

#[derive(Serialize)]
struct SweepRow {
    p: f64,
    coherence: f64,
    val_metric: Option<f64>,
    relevant_fraction: f64,
    model: String,
    log: String,
}

/// `model.json` → `model.p0.1.json` (suffix before the extension).
fn suffixed(path: &Path, p: f64) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|s| format!(".{}", s.to_string_lossy()))
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.p{p}{ext}"))
}

fn default_log_path(model_out: &Path) -> PathBuf {
    let stem = model_out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    model_out.with_file_name(format!("{stem}.log.jsonl"))
}

fn write_log(path: &Path, result: &TrainResult) -> Result<()> {
    let f = std::fs::File::create(path)
        .with_context(|| format!("creating log file {}", path.display()))?;
    let mut w = std::io::BufWriter::new(f);
    for record in &result.history {
        serde_json::to_writer(&mut w, record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn run_one(
    rc: &RunConfig,
    p: f64,
    corpus: &Corpus,
    val: Option<&Corpus>,
    model_path: &Path,
    log_path: &Path,
) -> Result<(TrainResult, TrainedModel)> {
    let config = rc.model_config(p, corpus.target_kind)?;
    let opts = rc.train_options();
    let result = train(corpus, &config, &opts, val)?;
    let model = TrainedModel {
        vocab: corpus.vocab.clone(),
        params: result.params.clone(),
        varphi: result.varphi.clone(),
        p: config.p,
        alpha: config.alpha.clone(),
        target_kind: corpus.target_kind,
    };
    model.save(model_path)?;
    write_log(log_path, &result)?;
    let last = result.history.last().expect("history has the init record");
    eprintln!(
        "train: p={p} elbo {:.4} relevant_fraction {:.3}{}{}",
        last.elbo,
        last.relevant_fraction,
        match last.val_metric {
            Some(m) => format!(" val_metric {m:.4}"),
            None => String::new(),
        },
        match result.converged_epoch {
            Some(e) => format!(" (converged at epoch {e})"),
            None => format!(" ({} epochs)", rc.epochs),
        },
    );
    Ok((result, model))
}

pub fn run(args: TrainArgs) -> Result<()> {
    let mut rc = RunConfig::load(args.config.as_deref())?;
    if args.vocab.is_some() {
        rc.vocab = args.vocab;
    }
    if args.docs.is_some() {
        rc.docs = args.docs;
    }
    if args.val_docs.is_some() {
        rc.val_docs = args.val_docs;
    }
    if args.model_out.is_some() {
        rc.model_out = args.model_out;
    }
    if args.log_out.is_some() {
        rc.log_out = args.log_out;
    }
    if let Some(v) = args.k {
        rc.k = v;
    }
    if let Some(v) = args.p {
        rc.p = v;
    }
    if let Some(v) = args.alpha {
        rc.alpha = v;
    }
    if let Some(v) = args.learning_rate {
        rc.learning_rate = v;
    }
    if let Some(v) = args.epochs {
        rc.epochs = v;
    }
    if let Some(v) = args.batch_size {
        rc.batch_size = Some(v);
    }
    if let Some(v) = args.seed {
        rc.seed = v;
    }
    if let Some(v) = args.convergence_tol {
        rc.convergence_tol = v;
    }
    if let Some(v) = args.gamma_floor {
        rc.gamma_floor = v;
    }
    if let Some(v) = args.sweep_p {
        rc.sweep_p = v;
    }
    if let Some(v) = args.top_n {
        rc.top_n = v;
    }
    if let Some(v) = args.npmi {
        rc.npmi = v;
    }

    let vocab_path = require_path("vocab", &rc.vocab)?;
    let docs_path = require_path("docs", &rc.docs)?;
    let model_out = require_out_path("model-out", &rc.model_out)?;
    let corpus = load_corpus(&vocab_path, &docs_path)?;
    let val = match &rc.val_docs {
        Some(_) => {
            let vp = require_path("val-docs", &rc.val_docs)?;
            Some(load_corpus(&vocab_path, &vp)?)
        }
        None => None,
    };
    let log_out = rc
        .log_out
        .clone()
        .unwrap_or_else(|| default_log_path(&model_out));

    if rc.sweep_p.is_empty() {
        let (result, _) = run_one(&rc, rc.p, &corpus, val.as_ref(), &model_out, &log_out)?;
        let last = result.history.last().expect("history nonempty");
        emit(&TrainSummary {
            p: rc.p,
            elbo: last.elbo,
            val_metric: last.val_metric,
            relevant_fraction: last.relevant_fraction,
            converged_epoch: result.converged_epoch,
            model: model_out.display().to_string(),
            log: log_out.display().to_string(),
        })
    } else {
        if rc.sweep_p.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            bail!("--sweep-p values must lie in (0, 1]");
        }
        let copts = rc.coherence_options();
        let mut rows = Vec::with_capacity(rc.sweep_p.len());
        for &p in &rc.sweep_p {
            let model_path = suffixed(&model_out, p);
            let log_path = suffixed(&log_out, p);
            let (result, model) =
                run_one(&rc, p, &corpus, val.as_ref(), &model_path, &log_path)?;
            let last = result.history.last().expect("history nonempty");
            let coherence = topic_coherence(&model.params.beta, &corpus, &copts)?;
            rows.push(SweepRow {
                p,
                coherence,
                val_metric: last.val_metric,
                relevant_fraction: last.relevant_fraction,
                model: model_path.display().to_string(),
                log: log_path.display().to_string(),
            });
        }
        emit(&rows)
    }
}
