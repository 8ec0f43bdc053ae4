//! Model definition: configuration, parameters, the generative sampler, and
//! JSON persistence.
//!
//! The generative process per document: θ ~ Dirichlet(α); for each of N
//! tokens draw a topic z ~ Cat(θ) and a relevance switch ξ ~ Bernoulli(p),
//! then emit the word from the topic distribution β_z when ξ = 1 and from the
//! shared background distribution π when ξ = 0. The prediction target is
//! y ~ Normal(η·θ, δ) for real targets or y ~ Bernoulli(σ(η·θ)) for binary
//! targets.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Document, TargetKind, Vocabulary};
use crate::exec;
use crate::special::sigmoid;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported model format version {0} (expected {MODEL_FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

/// Simplex rows must renormalize to 1 within this slack on load.
const SIMPLEX_TOL: f64 = 1e-9;

/// Current on-disk model format.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Fixed hyperparameters of a model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of relevant topics K.
    pub k: usize,
    /// Prior probability p of a token being relevant (0 < p ≤ 1).
    pub p: f64,
    /// Dirichlet prior α over topic proportions, length K, entries > 0.
    pub alpha: Vec<f64>,
    pub target_kind: TargetKind,
    /// Seed for the initialization noise.
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(
        k: usize,
        p: f64,
        alpha: Vec<f64>,
        target_kind: TargetKind,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let cfg = Self {
            k,
            p,
            alpha,
            target_kind,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Symmetric Dirichlet(1) prior, the default in all experiments.
    pub fn with_unit_alpha(
        k: usize,
        p: f64,
        target_kind: TargetKind,
        seed: u64,
    ) -> Result<Self, ModelError> {
        Self::new(k, p, vec![1.0; k], target_kind, seed)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.k == 0 {
            return Err(ModelError::InvalidConfig("k must be ≥ 1".into()));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(ModelError::InvalidConfig(format!(
                "p must lie in (0, 1], got {}",
                self.p
            )));
        }
        if self.alpha.len() != self.k {
            return Err(ModelError::InvalidConfig(format!(
                "alpha has length {} but k = {}",
                self.alpha.len(),
                self.k
            )));
        }
        if self.alpha.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(ModelError::InvalidConfig(
                "alpha entries must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// The special case with the background channel switched off: p = 1 forces
/// every token through its topic distribution, recovering supervised LDA.
pub fn slda_special_case(config: &ModelConfig) -> ModelConfig {
    ModelConfig {
        p: 1.0,
        ..config.clone()
    }
}

/// Learned (or ground-truth) model parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParams {
    /// K rows, each a distribution over the V vocabulary terms.
    pub beta: Vec<Vec<f64>>,
    /// Background distribution over the V vocabulary terms.
    pub pi: Vec<f64>,
    /// Regression weights over topic proportions, length K.
    pub eta: Vec<f64>,
    /// Gaussian target variance (unused for binary targets).
    pub delta: f64,
}

fn check_simplex(name: &str, row: &[f64]) -> Result<(), ModelError> {
    if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(ModelError::InvalidParams(format!(
            "{name} has negative or non-finite entries"
        )));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(ModelError::InvalidParams(format!(
            "{name} sums to {s}, expected 1"
        )));
    }
    Ok(())
}

impl ModelParams {
    pub fn num_topics(&self) -> usize {
        self.beta.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.pi.len()
    }

    pub fn validate(&self, k: usize, v: usize) -> Result<(), ModelError> {
        if self.beta.len() != k {
            return Err(ModelError::InvalidParams(format!(
                "beta has {} rows, expected {k}",
                self.beta.len()
            )));
        }
        for (i, row) in self.beta.iter().enumerate() {
            if row.len() != v {
                return Err(ModelError::InvalidParams(format!(
                    "beta row {i} has length {}, expected {v}",
                    row.len()
                )));
            }
            check_simplex(&format!("beta row {i}"), row)?;
        }
        if self.pi.len() != v {
            return Err(ModelError::InvalidParams(format!(
                "pi has length {}, expected {v}",
                self.pi.len()
            )));
        }
        check_simplex("pi", &self.pi)?;
        if self.eta.len() != k {
            return Err(ModelError::InvalidParams(format!(
                "eta has length {}, expected {k}",
                self.eta.len()
            )));
        }
        if self.eta.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::InvalidParams("eta has non-finite entries".into()));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(ModelError::InvalidParams(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Per-document latent draws kept by the simulator for ground-truth checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampledLatents {
    pub theta: Vec<f64>,
    /// Topic index per token, generation order.
    pub z: Vec<usize>,
    /// Relevance switch per token, generation order.
    pub xi: Vec<bool>,
}

/// Draw from a categorical distribution by inverting the cumulative sum.
fn draw_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}

fn draw_dirichlet<R: Rng>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut theta: Vec<f64> = alpha
        .iter()
        .map(|&a| {
            let g = Gamma::new(a, 1.0).expect("alpha validated positive");
            // Guard the (measure-zero but floating-point-reachable) exact zero.
            g.sample(rng).max(1e-300)
        })
        .collect();
    let s: f64 = theta.iter().sum();
    for t in &mut theta {
        *t /= s;
    }
    theta
}

/// Per-document RNG derived from the run seed and document index, so sampling
/// is reproducible independently of scheduling.
fn doc_rng(seed: u64, doc: usize) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&(doc as u64).to_le_bytes());
    bytes[16] = 0xd0; // stream tag: document sampling
    ChaCha8Rng::from_seed(bytes)
}

/// Sample a synthetic corpus (and its latent assignments) from ground-truth
/// parameters. Documents all contain `tokens_per_doc` tokens; the vocabulary
/// is synthesized as `w000…`-style terms.
pub fn sample_corpus(
    config: &ModelConfig,
    params: &ModelParams,
    num_docs: usize,
    tokens_per_doc: usize,
    rng_seed: u64,
) -> Result<(Corpus, Vec<SampledLatents>), ModelError> {
    config.validate()?;
    let v = params.vocab_size();
    params.validate(config.k, v)?;
    if num_docs == 0 || tokens_per_doc == 0 {
        return Err(ModelError::InvalidConfig(
            "num_docs and tokens_per_doc must be ≥ 1".into(),
        ));
    }

    let width = (v.saturating_sub(1)).to_string().len();
    let vocab = Vocabulary::new((0..v).map(|t| format!("w{t:0width$}")).collect())?;
    let id_width = num_docs.saturating_sub(1).to_string().len();

    let per_doc = exec::chunk_map(num_docs, |range| {
        let mut out = Vec::with_capacity(range.len());
        for d in range {
            let mut rng = doc_rng(rng_seed, d);
            let theta = draw_dirichlet(&config.alpha, &mut rng);
            let mut z = Vec::with_capacity(tokens_per_doc);
            let mut xi = Vec::with_capacity(tokens_per_doc);
            let mut counts = std::collections::BTreeMap::new();
            for _ in 0..tokens_per_doc {
                let topic = draw_categorical(&theta, &mut rng);
                let relevant = rng.random::<f64>() < config.p;
                let word = if relevant {
                    draw_categorical(&params.beta[topic], &mut rng)
                } else {
                    draw_categorical(&params.pi, &mut rng)
                };
                z.push(topic);
                xi.push(relevant);
                *counts.entry(word).or_insert(0u32) += 1;
            }
            let mean: f64 = params
                .eta
                .iter()
                .zip(&theta)
                .map(|(e, t)| e * t)
                .sum();
            let target = match config.target_kind {
                TargetKind::Real => {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    Some(mean + params.delta.sqrt() * n)
                }
                TargetKind::Binary => {
                    Some(if rng.random::<f64>() < sigmoid(mean) { 1.0 } else { 0.0 })
                }
                TargetKind::None => None,
            };
            let doc = Document {
                id: format!("doc{d:0id_width$}"),
                counts: counts.into_iter().collect(),
                target,
            };
            out.push((doc, SampledLatents { theta, z, xi }));
        }
        out
    });

    let mut docs = Vec::with_capacity(num_docs);
    let mut latents = Vec::with_capacity(num_docs);
    for chunk in per_doc {
        for (doc, lat) in chunk {
            docs.push(doc);
            latents.push(lat);
        }
    }
    Ok((
        Corpus {
            vocab,
            docs,
            target_kind: config.target_kind,
        },
        latents,
    ))
}

/// A trained model as persisted to disk: parameters, the word-relevance
/// posterior, and everything needed to score new documents.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub vocab: Vocabulary,
    pub params: ModelParams,
    /// Posterior probability that each vocabulary word is relevant.
    pub varphi: Vec<f64>,
    pub p: f64,
    pub alpha: Vec<f64>,
    pub target_kind: TargetKind,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    k: usize,
    v: usize,
    vocab: Vec<String>,
    beta: Vec<Vec<f64>>,
    pi: Vec<f64>,
    eta: Vec<f64>,
    delta: f64,
    p: f64,
    alpha: Vec<f64>,
    varphi: Vec<f64>,
    target_kind: TargetKind,
}

impl TrainedModel {
    pub fn num_topics(&self) -> usize {
        self.params.num_topics()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let k = self.params.num_topics();
        let v = self.vocab.len();
        self.params.validate(k, v)?;
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(ModelError::InvalidParams(format!("p = {} out of (0, 1]", self.p)));
        }
        if self.alpha.len() != k || self.alpha.iter().any(|&a| !(a > 0.0)) {
            return Err(ModelError::InvalidParams("alpha invalid".into()));
        }
        if self.varphi.len() != v {
            return Err(ModelError::InvalidParams(format!(
                "varphi has length {}, expected {v}",
                self.varphi.len()
            )));
        }
        if self.varphi.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(ModelError::InvalidParams(
                "varphi entries must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Serialize as a single JSON document with full float round-trip
    /// precision. Output is deterministic for identical models.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        self.validate()?;
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            k: self.params.num_topics(),
            v: self.vocab.len(),
            vocab: self.vocab.terms().to_vec(),
            beta: self.params.beta.clone(),
            pi: self.params.pi.clone(),
            eta: self.params.eta.clone(),
            delta: self.params.delta,
            p: self.p,
            alpha: self.alpha.clone(),
            varphi: self.varphi.clone(),
            target_kind: self.target_kind,
        };
        let json = serde_json::to_string(&file).map_err(|e| ModelError::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        std::fs::write(path, json).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| ModelError::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::UnsupportedVersion(file.format_version));
        }
        if file.vocab.len() != file.v {
            return Err(ModelError::InvalidParams(format!(
                "vocab has {} terms but header says {}",
                file.vocab.len(),
                file.v
            )));
        }
        if file.beta.len() != file.k {
            return Err(ModelError::InvalidParams(format!(
                "beta has {} rows but header says {}",
                file.beta.len(),
                file.k
            )));
        }
        let model = TrainedModel {
            vocab: Vocabulary::new(file.vocab)?,
            params: ModelParams {
                beta: file.beta,
                pi: file.pi,
                eta: file.eta,
                delta: file.delta,
            },
            varphi: file.varphi,
            p: file.p,
            alpha: file.alpha,
            target_kind: file.target_kind,
        };
        model.validate()?;
        Ok(model)
    }
}
