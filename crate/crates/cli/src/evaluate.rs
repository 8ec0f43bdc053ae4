//! `eval` / `topics` / `predict`: score a trained model on a documents file.
//!
//! `eval` prints a metrics JSON object; `--topics N` additionally writes a
//! plain-text report of the top words per topic (standard error, and
//! optionally a file). `topics` is `eval` with the report switched on.
//! `predict` emits one `{"id", "y_hat"}` JSON line per document.

use std::fmt::Write as _;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use pftopics::corpus::{load_vocab, parse_docs, Corpus, TargetKind};
use pftopics::eval::{
    auc, relevant_fraction, rmse, support_overlap, topic_coherence, topic_report, TopicReport,
};
use pftopics::inference::{infer_corpus, predict, InferOptions};
use pftopics::model::{ModelConfig, TrainedModel};

use crate::config::{emit, RunConfig};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Documents to score (term ids must index the model's vocabulary).
    #[arg(long)]
    pub docs: PathBuf,
    /// Optional vocabulary file cross-checked against the model's.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// JSON run-config file; the flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Reference corpus for coherence (defaults to --docs).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Words per topic entering the coherence score.
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Use normalized PMI.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub npmi: Option<bool>,
    /// Print a plain-text report with this many words per topic.
    #[arg(long)]
    pub topics: Option<usize>,
    /// Also write the plain-text topic report to this file.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Trained model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Documents to predict for (targets, if any, are ignored).
    #[arg(long)]
    pub docs: PathBuf,
    /// Write the JSON lines here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct MetricsOut {
    docs: usize,
    target_kind: String,
    metric_name: Option<&'static str>,
    metric: Option<f64>,
    coherence: f64,
    relevant_fraction: f64,
    support_overlap: f64,
}

#[derive(Serialize)]
struct Prediction<'a> {
    id: &'a str,
    y_hat: f64,
}

/// Parse a documents file against the model's vocabulary.
fn load_docs_for_model(model: &TrainedModel, path: &Path) -> Result<Corpus> {
    let f = std::fs::File::open(path)
        .with_context(|| format!("opening documents file {}", path.display()))?;
    let (docs, target_kind) = parse_docs(BufReader::new(f), &model.vocab, path)?;
    Ok(Corpus {
        vocab: model.vocab.clone(),
        docs,
        target_kind,
    })
}

fn inference_config(model: &TrainedModel) -> Result<ModelConfig> {
    ModelConfig::new(
        model.num_topics(),
        model.p,
        model.alpha.clone(),
        model.target_kind,
        0,
    )
    .context("stored model configuration is invalid")
}

/// Render the report with the strongest positive- and negative-weight topics
/// first, then every topic by descending weight, then the background channel.
fn render_report(report: &TopicReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "most positive topic: #{}   most negative topic: #{}",
        report.most_positive_topic, report.most_negative_topic
    );
    let mut order: Vec<usize> = (0..report.topics.len()).collect();
    order.sort_by(|&a, &b| {
        report.topics[b]
            .eta
            .partial_cmp(&report.topics[a].eta)
            .expect("finite eta")
            .then(a.cmp(&b))
    });
    for &i in &order {
        let t = &report.topics[i];
        let _ = writeln!(out, "\ntopic #{}  eta {:+.4}", t.index, t.eta);
        for w in &t.terms {
            let _ = writeln!(
                out,
                "  {:<24} beta {:>10.6}  relevance {:.3}",
                w.term, w.weight, w.relevance
            );
        }
    }
    let _ = writeln!(out, "\nbackground");
    for w in &report.background {
        let _ = writeln!(
            out,
            "  {:<24} pi   {:>10.6}  relevance {:.3}",
            w.term, w.weight, w.relevance
        );
    }
    out
}

pub fn run_eval(args: EvalArgs) -> Result<()> {
    let mut rc = RunConfig::load(args.config.as_deref())?;
    if args.reference.is_some() {
        rc.reference = args.reference;
    }
    if let Some(v) = args.top_n {
        rc.top_n = v;
    }
    if let Some(v) = args.npmi {
        rc.npmi = v;
    }

    let model = TrainedModel::load(&args.model)?;
    if let Some(vocab_path) = &args.vocab {
        let vocab = load_vocab(vocab_path)?;
        if vocab.terms() != model.vocab.terms() {
            bail!(
                "vocabulary mismatch: {} does not match the model's {} terms",
                vocab_path.display(),
                model.vocab.len()
            );
        }
    }
    let corpus = load_docs_for_model(&model, &args.docs)?;
    let config = inference_config(&model)?;

    let states = infer_corpus(
        &corpus,
        &model.params,
        &config,
        &model.varphi,
        &InferOptions::default(),
    )?;
    let predictions: Vec<f64> = states
        .iter()
        .map(|s| predict(s, &model.params, &config))
        .collect();

    let (metric_name, metric) = match corpus.target_kind {
        TargetKind::None => (None, None),
        kind if kind != model.target_kind => bail!(
            "target kind mismatch: the model predicts {} targets but {} carries {} targets",
            model.target_kind,
            args.docs.display(),
            kind
        ),
        TargetKind::Real => {
            let targets: Vec<f64> = corpus.docs.iter().filter_map(|d| d.target).collect();
            (Some("rmse"), Some(rmse(&predictions, &targets)?))
        }
        TargetKind::Binary => {
            let targets: Vec<f64> = corpus.docs.iter().filter_map(|d| d.target).collect();
            (Some("auc"), Some(auc(&predictions, &targets)?))
        }
    };

    let reference = match &rc.reference {
        Some(p) => Some(load_docs_for_model(&model, p)?),
        None => None,
    };
    let coherence = topic_coherence(
        &model.params.beta,
        reference.as_ref().unwrap_or(&corpus),
        &rc.coherence_options(),
    )?;

    if let Some(n) = args.topics {
        let report = topic_report(&model.vocab, &model.params, &model.varphi, n);
        let text = render_report(&report);
        eprint!("{text}");
        if let Some(path) = &args.report_out {
            std::fs::write(path, &text)
                .with_context(|| format!("writing report to {}", path.display()))?;
        }
    }

    emit(&MetricsOut {
        docs: corpus.num_docs(),
        target_kind: corpus.target_kind.to_string(),
        metric_name,
        metric,
        coherence,
        relevant_fraction: relevant_fraction(&model.varphi, 0.5),
        support_overlap: support_overlap(&model.params.beta, &model.params.pi),
    })
}

pub fn run_predict(args: PredictArgs) -> Result<()> {
    let model = TrainedModel::load(&args.model)?;
    let corpus = load_docs_for_model(&model, &args.docs)?;
    let config = inference_config(&model)?;
    let states = infer_corpus(
        &corpus,
        &model.params,
        &config,
        &model.varphi,
        &InferOptions::default(),
    )?;

    let mut lines = String::new();
    for (doc, state) in corpus.docs.iter().zip(&states) {
        let y_hat = predict(state, &model.params, &config);
        lines.push_str(&serde_json::to_string(&Prediction {
            id: &doc.id,
            y_hat,
        })?);
        lines.push('\n');
    }
    match &args.out {
        Some(path) => std::fs::write(path, lines)
            .with_context(|| format!("writing predictions to {}", path.display()))?,
        None => {
            std::io::stdout().write_all(lines.as_bytes())?;
        }
    }
    Ok(())
}
