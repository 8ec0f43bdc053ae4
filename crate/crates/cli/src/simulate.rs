//! `simulate`: draw a synthetic corpus from ground-truth parameters, keeping
//! every document's latent draws (topic proportions, per-token topic and
//! switch assignments) for recovery experiments.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use pftopics::corpus::{save_docs, save_vocab, TargetKind};
use pftopics::model::{sample_corpus, ModelConfig, ModelParams, SampledLatents};

use crate::config::emit;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Ground-truth JSON: {k, p, alpha, target_kind, beta, pi, eta, delta}.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub num_docs: usize,
    #[arg(long)]
    pub tokens_per_doc: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving vocab.txt, docs.tsv, latents.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// On-disk ground-truth schema. `alpha` may be empty (symmetric 1.0) or a
/// single entry (repeated), mirroring the run-config convention.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruth {
    k: usize,
    p: f64,
    #[serde(default)]
    alpha: Vec<f64>,
    target_kind: TargetKind,
    beta: Vec<Vec<f64>>,
    pi: Vec<f64>,
    eta: Vec<f64>,
    delta: f64,
}

#[derive(Serialize)]
struct LatentsLine<'a> {
    id: &'a str,
    #[serde(flatten)]
    latents: &'a SampledLatents,
}

#[derive(Serialize)]
struct SimulateSummary {
    v: usize,
    docs: usize,
    tokens_per_doc: usize,
    vocab: String,
    docs_file: String,
    latents: String,
}

pub fn run(args: SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.truth)
        .with_context(|| format!("reading ground truth {}", args.truth.display()))?;
    let truth: GroundTruth = serde_json::from_str(&text)
        .with_context(|| format!("parsing ground truth {}", args.truth.display()))?;

    let alpha = match truth.alpha.len() {
        0 => vec![1.0; truth.k],
        1 => vec![truth.alpha[0]; truth.k],
        _ => truth.alpha.clone(),
    };
    let config = ModelConfig::new(truth.k, truth.p, alpha, truth.target_kind, args.seed)?;
    let params = ModelParams {
        beta: truth.beta,
        pi: truth.pi,
        eta: truth.eta,
        delta: truth.delta,
    };
    let (corpus, latents) =
        sample_corpus(&config, &params, args.num_docs, args.tokens_per_doc, args.seed)?;

    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let vocab_path = args.out_dir.join("vocab.txt");
    let docs_path = args.out_dir.join("docs.tsv");
    let latents_path = args.out_dir.join("latents.jsonl");
    save_vocab(&corpus.vocab, &vocab_path)?;
    save_docs(&corpus.docs, &docs_path)?;

    let f = std::fs::File::create(&latents_path)
        .with_context(|| format!("creating {}", latents_path.display()))?;
    let mut w = std::io::BufWriter::new(f);
    for (doc, lat) in corpus.docs.iter().zip(&latents) {
        serde_json::to_writer(
            &mut w,
            &LatentsLine {
                id: &doc.id,
                latents: lat,
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;

    eprintln!(
        "simulate: {} documents × {} tokens over {} terms → {}",
        args.num_docs,
        args.tokens_per_doc,
        corpus.vocab.len(),
        args.out_dir.display(),
    );
    emit(&SimulateSummary {
        v: corpus.vocab.len(),
        docs: corpus.num_docs(),
        tokens_per_doc: args.tokens_per_doc,
        vocab: vocab_path.display().to_string(),
        docs_file: docs_path.display().to_string(),
        latents: latents_path.display().to_string(),
    })
}
