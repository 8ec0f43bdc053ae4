//! Run configuration: one JSON file holding every knob, with each field
//! overridable by a command-line flag of the same name in kebab-case.
//! Flags win over the file; the file wins over the built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use pftopics::corpus::TargetKind;
use pftopics::eval::CoherenceOptions;
use pftopics::inference::TrainOptions;
use pftopics::model::ModelConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Model
    /// Number of relevant topics.
    pub k: usize,
    /// Prior probability that a token is relevant (0 < p ≤ 1).
    pub p: f64,
    /// Dirichlet prior over topic proportions. Empty means symmetric 1.0
    /// across the K topics; a single entry means that value repeated.
    pub alpha: Vec<f64>,

    // Optimization
    pub learning_rate: f64,
    pub epochs: usize,
    /// `null` trains full-batch; a number shuffles documents into batches of
    /// that size each epoch.
    pub batch_size: Option<usize>,
    /// Seeds initialization, batch shuffling, and the corpus split.
    pub seed: u64,
    pub convergence_tol: f64,
    pub gamma_floor: f64,

    // Paths
    pub vocab: Option<PathBuf>,
    pub docs: Option<PathBuf>,
    pub val_docs: Option<PathBuf>,
    pub stoplist: Option<PathBuf>,
    pub model_out: Option<PathBuf>,
    pub log_out: Option<PathBuf>,

    // Preparation
    /// Keep a term only if it appears in at least this many documents.
    pub min_docs: usize,
    /// Keep a term only if it appears in at most this fraction of documents.
    pub max_doc_frac: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,

    // Coherence
    /// Words per topic entering the coherence score and topic reports.
    pub top_n: usize,
    /// Normalize pairwise scores into [−1, 1].
    pub npmi: bool,
    /// Reference corpus for coherence statistics (defaults to the corpus
    /// being evaluated; point it at the training split to mirror training).
    pub reference: Option<PathBuf>,

    // Sweep
    /// Values of p to train in one `train` invocation; empty trains `p` alone.
    pub sweep_p: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainOptions::default();
        let c = CoherenceOptions::default();
        RunConfig {
            k: 10,
            p: 0.2,
            alpha: Vec::new(),
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            convergence_tol: t.convergence_tol,
            gamma_floor: t.gamma_floor,
            vocab: None,
            docs: None,
            val_docs: None,
            stoplist: None,
            model_out: None,
            log_out: None,
            min_docs: 10,
            max_doc_frac: 0.5,
            train_frac: 0.8,
            val_frac: 0.1,
            test_frac: 0.1,
            top_n: c.top_n,
            npmi: c.npmi,
            reference: None,
            sweep_p: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Defaults, or the parsed JSON file when a path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config file {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config file {}", p.display()))
            }
        }
    }

    /// The Dirichlet prior at its declared length: empty → symmetric 1.0,
    /// one entry → that value repeated, K entries → as given.
    pub fn resolved_alpha(&self) -> Result<Vec<f64>> {
        match self.alpha.len() {
            0 => Ok(vec![1.0; self.k]),
            1 => Ok(vec![self.alpha[0]; self.k]),
            n if n == self.k => Ok(self.alpha.clone()),
            n => bail!("alpha has {n} entries but k = {} (give 1 or k values)", self.k),
        }
    }

    pub fn model_config(&self, p: f64, kind: TargetKind) -> Result<ModelConfig> {
        ModelConfig::new(self.k, p, self.resolved_alpha()?, kind, self.seed)
            .context("invalid model configuration")
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            convergence_tol: self.convergence_tol,
            gamma_floor: self.gamma_floor,
        }
    }

    pub fn coherence_options(&self) -> CoherenceOptions {
        CoherenceOptions {
            top_n: self.top_n,
            npmi: self.npmi,
        }
    }
}

/// A required path field, named by its flag for the error message.
pub fn require_path(field: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
    match value {
        Some(p) => {
            if !p.exists() {
                bail!("--{field}: path {} does not exist", p.display());
            }
            Ok(p.clone())
        }
        None => bail!("missing required path: set --{field} or the `{}` config field", field.replace('-', "_")),
    }
}

/// A required output path (parent need not exist yet; nothing is checked).
pub fn require_out_path(field: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
    value.clone().ok_or_else(|| {
        anyhow::anyhow!(
            "missing required path: set --{field} or the `{}` config field",
            field.replace('-', "_")
        )
    })
}

/// Print one compact JSON value to standard output.
pub fn emit<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}
