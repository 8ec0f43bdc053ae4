//! Training by gradient ascent on the bound, held-out inference, prediction.
//!
//! All parameters — global (topics, background, switch posterior, regression
//! weights, noise) and per-document (Dirichlet γ, responsibilities ϕ) — live
//! in one flat vector of unconstrained reals:
//!
//! * topic and background logits map to simplices through log-softmax,
//! * switch logits map through the sigmoid,
//! * γ goes through softplus plus a small floor,
//! * the noise variance goes through softplus,
//! * regression weights are used directly.
//!
//! Gradients are exact (hand-derived, verified against central differences),
//! accumulated over fixed-size document chunks in a fixed order so results
//! are bit-identical regardless of thread count, and applied with ADAM.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Corpus, Document, TargetKind};
use crate::elbo::{elbo_corpus_breakdown, elbo_document, DocState, ElboBreakdown, ElboError, VariationalState};
use crate::eval::{self, EvalError};
use crate::exec;
use crate::model::{ModelConfig, ModelError, ModelParams};
use crate::special::{digamma, mul_log, sigmoid, softplus, softplus_inv, trigamma};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bound term {term} became non-finite at epoch {epoch}")]
    NonFinite { epoch: usize, term: &'static str },
    #[error("gradient became non-finite at epoch {epoch}")]
    NonFiniteGradient { epoch: usize },
    #[error("invalid training input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Elbo(#[from] ElboError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum InferError {
    #[error("word {term} has zero probability under every topic but positive relevance")]
    ImpossibleWord { term: usize },
    #[error(transparent)]
    Elbo(#[from] ElboError),
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` trains full-batch in corpus order; `Some(b)` shuffles documents
    /// each epoch (seeded by `seed` and the epoch index) into batches of `b`.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Stop when the bound moves by less than this (relative) over a
    /// ten-epoch window.
    pub convergence_tol: f64,
    /// Additive floor keeping γ away from zero under the softplus map.
    pub gamma_floor: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            learning_rate: 0.025,
            epochs: 200,
            batch_size: None,
            seed: 0,
            convergence_tol: 1e-5,
            gamma_floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub elbo: f64,
    pub terms: ElboBreakdown,
    /// RMSE (real targets) or AUC (binary) on the validation corpus.
    pub val_metric: Option<f64>,
    /// Fraction of vocabulary with switch posterior above ½.
    pub relevant_fraction: f64,
    /// Σ_v min(max_k β_kv, π_v): how much the topic and background supports
    /// still overlap. Expected to fall as the switch posterior polarizes.
    pub support_overlap: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: ModelParams,
    pub varphi: Vec<f64>,
    pub state: VariationalState,
    pub history: Vec<EpochRecord>,
    pub converged_epoch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct InferOptions {
    pub max_iters: usize,
    pub convergence_tol: f64,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            max_iters: 1000,
            convergence_tol: 1e-5,
        }
    }
}

/// Switch logit used to pin the posterior at exactly 1 when the prior says
/// every word is relevant: sigmoid(40) rounds to 1.0 in f64, and a finite
/// logit keeps every downstream expression finite.
const PINNED_RELEVANT_LOGIT: f64 = 40.0;
/// Starting switch logit when the prior is interior: undecided (varphi = ½),
/// letting the word-fit evidence route each word from the first epoch.
const UNDECIDED_SWITCH_LOGIT: f64 = 0.0;
/// Threshold for the relevant-word fraction reported in training history.
const RELEVANCE_THRESHOLD: f64 = 0.5;
/// Held-out inference settings used for per-epoch validation tracking
/// (looser than the defaults; final evaluation should use `InferOptions::default`).
const VAL_INFER: InferOptions = InferOptions {
    max_iters: 200,
    convergence_tol: 1e-4,
};

// ---------------------------------------------------------------------------
// Flat parameter layout
// ---------------------------------------------------------------------------

/// Offsets of each block inside the flat parameter vector.
#[derive(Debug, Clone)]
struct Layout {
    k: usize,
    v: usize,
    m: usize,
    beta: usize,
    pi: usize,
    varphi: usize,
    eta: usize,
    delta: usize,
    gamma: usize,
    phi: usize,
    /// Prefix sums of distinct-term counts per document (length m+1); row r
    /// of document d lives at `phi + (doc_rows[d] + r) * k`.
    doc_rows: Vec<usize>,
    total: usize,
}

impl Layout {
    fn new(corpus: &Corpus, k: usize) -> Layout {
        let v = corpus.vocab.len();
        let m = corpus.docs.len();
        let mut doc_rows = Vec::with_capacity(m + 1);
        doc_rows.push(0);
        for d in &corpus.docs {
            doc_rows.push(doc_rows.last().unwrap() + d.num_terms());
        }
        let rows = *doc_rows.last().unwrap();
        let beta = 0;
        let pi = beta + k * v;
        let varphi = pi + v;
        let eta = varphi + v;
        let delta = eta + k;
        let gamma = delta + 1;
        let phi = gamma + m * k;
        let total = phi + rows * k;
        Layout {
            k,
            v,
            m,
            beta,
            pi,
            varphi,
            eta,
            delta,
            gamma,
            phi,
            doc_rows,
            total,
        }
    }

    fn gamma_doc(&self, d: usize) -> std::ops::Range<usize> {
        let s = self.gamma + d * self.k;
        s..s + self.k
    }

    fn phi_doc(&self, d: usize) -> std::ops::Range<usize> {
        let s = self.phi + self.doc_rows[d] * self.k;
        let e = self.phi + self.doc_rows[d + 1] * self.k;
        s..e
    }
}

/// Row-wise log-softmax: writes log-probabilities and probabilities.
fn log_softmax_into(logits: &[f64], log_probs: &mut [f64], probs: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (i, &l) in logits.iter().enumerate() {
        let e = (l - max).exp();
        log_probs[i] = l - max;
        sum += e;
    }
    let lse = sum.ln();
    for (i, lp) in log_probs.iter_mut().enumerate() {
        *lp -= lse;
        probs[i] = lp.exp();
    }
}

/// Transformed global parameters, recomputed once per gradient step.
struct Globals {
    beta: Vec<f64>,
    log_beta: Vec<f64>,
    pi: Vec<f64>,
    log_pi: Vec<f64>,
    varphi: Vec<f64>,
    eta: Vec<f64>,
    delta: f64,
}

fn unpack_globals(x: &[f64], lay: &Layout) -> Globals {
    let (k, v) = (lay.k, lay.v);
    let mut beta = vec![0.0; k * v];
    let mut log_beta = vec![0.0; k * v];
    for kk in 0..k {
        let row = &x[lay.beta + kk * v..lay.beta + (kk + 1) * v];
        log_softmax_into(
            row,
            &mut log_beta[kk * v..(kk + 1) * v],
            &mut beta[kk * v..(kk + 1) * v],
        );
    }
    let mut pi = vec![0.0; v];
    let mut log_pi = vec![0.0; v];
    log_softmax_into(&x[lay.pi..lay.pi + v], &mut log_pi, &mut pi);
    let varphi: Vec<f64> = x[lay.varphi..lay.varphi + v]
        .iter()
        .map(|&s| sigmoid(s))
        .collect();
    Globals {
        beta,
        log_beta,
        pi,
        log_pi,
        varphi,
        eta: x[lay.eta..lay.eta + k].to_vec(),
        delta: softplus(x[lay.delta]),
    }
}

fn doc_gamma(x: &[f64], lay: &Layout, floor: f64, d: usize) -> Vec<f64> {
    x[lay.gamma_doc(d)]
        .iter()
        .map(|&r| softplus(r) + floor)
        .collect()
}

fn doc_phi(x: &[f64], lay: &Layout, d: usize) -> (Vec<f64>, Vec<f64>) {
    let slice = &x[lay.phi_doc(d)];
    let mut probs = vec![0.0; slice.len()];
    let mut logs = vec![0.0; slice.len()];
    for (r, row) in slice.chunks_exact(lay.k).enumerate() {
        log_softmax_into(
            row,
            &mut logs[r * lay.k..(r + 1) * lay.k],
            &mut probs[r * lay.k..(r + 1) * lay.k],
        );
    }
    (probs, logs)
}

fn unpack_params(g: &Globals, lay: &Layout) -> ModelParams {
    ModelParams {
        beta: g.beta.chunks_exact(lay.v).map(|r| r.to_vec()).collect(),
        pi: g.pi.clone(),
        eta: g.eta.clone(),
        delta: g.delta,
    }
}

fn unpack_state(x: &[f64], lay: &Layout, floor: f64, g: &Globals) -> VariationalState {
    let docs = (0..lay.m)
        .map(|d| DocState {
            gamma: doc_gamma(x, lay, floor, d),
            phi_z: doc_phi(x, lay, d).0,
        })
        .collect();
    VariationalState {
        docs,
        varphi: g.varphi.clone(),
    }
}

/// Number of seeded documents blended into each topic row at initialization.
const INIT_DOCS_PER_TOPIC: usize = 3;

/// Deterministic starting point, chosen to break the two symmetries that
/// stall a cold joint ascent:
///
/// * each topic row is seeded from the word counts of a few random documents
///   (the usual topic-model bootstrap — rows start with a genuine topical
///   skew instead of corpus-average noise);
/// * the background starts at the smoothed corpus distribution — its
///   conditional optimum under an undecided switch — so words the topics
///   explain no better than "the corpus at large" lose switch mass
///   immediately, and the row softmax renormalization concentrates the
///   topics on the words that remain.
///
/// The switch itself starts undecided (or pinned fully relevant when p = 1),
/// γ starts at α, and responsibilities start near uniform with a small
/// seeded jitter.
fn init_flat(corpus: &Corpus, config: &ModelConfig, floor: f64, lay: &Layout) -> Vec<f64> {
    use rand::Rng;
    let mut x = vec![0.0; lay.total];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut corpus_counts = vec![0.5; lay.v];
    let mut total_tokens = 0.0;
    for doc in &corpus.docs {
        for &(term, count) in &doc.counts {
            corpus_counts[term] += count as f64;
            total_tokens += count as f64;
        }
    }

    // Seed each topic row with the words its documents use *in excess of*
    // the corpus baseline — the documents' topical signatures — so rows
    // start concentrated where they differ rather than on the (shared)
    // high-frequency bulk that the background is about to claim anyway.
    for kk in 0..lay.k {
        let mut pseudo = vec![0.5; lay.v];
        for _ in 0..INIT_DOCS_PER_TOPIC {
            let doc = &corpus.docs[rng.random_range(0..lay.m)];
            let n = doc.num_tokens() as f64;
            for &(term, count) in &doc.counts {
                let expected = n * corpus_counts[term] / total_tokens;
                pseudo[term] += (count as f64 - expected).max(0.0);
            }
        }
        for (i, &c) in pseudo.iter().enumerate() {
            x[lay.beta + kk * lay.v + i] = c.ln() + 0.1 * (rng.random::<f64>() - 0.5);
        }
    }
    for (i, &c) in corpus_counts.iter().enumerate() {
        x[lay.pi + i] = c.ln() + 0.1 * (rng.random::<f64>() - 0.5);
    }
    let varphi_init = if config.p == 1.0 {
        PINNED_RELEVANT_LOGIT
    } else {
        UNDECIDED_SWITCH_LOGIT
    };
    for i in 0..lay.v {
        x[lay.varphi + i] = varphi_init;
    }
    // eta stays 0; delta starts at 1.
    x[lay.delta] = softplus_inv(1.0);
    for d in 0..lay.m {
        for (j, slot) in x[lay.gamma_doc(d)].iter_mut().enumerate() {
            *slot = softplus_inv((config.alpha[j] - floor).max(1e-9));
        }
    }
    // Small seeded jitter on every per-document block: with all documents at
    // the same symmetric point, topic identities could only separate through
    // the initialization noise in β, which takes the optimizer a very long
    // time to amplify.
    for slot in &mut x[lay.gamma..] {
        *slot += 0.5 * (rng.random::<f64>() - 0.5);
    }
    x
}

// ---------------------------------------------------------------------------
// Gradient of the corpus bound
// ---------------------------------------------------------------------------

/// Per-chunk accumulators. Global blocks are summed across chunks in chunk
/// order; per-document blocks are written to their own slices.
struct ChunkGrad {
    /// Σ_d c_dv · varphi_v · ϕ_dvk, laid out K×V.
    w: Vec<f64>,
    /// Σ_d c_dv · (1 − varphi_v).
    u: Vec<f64>,
    /// Switch-logit accumulator before the sigmoid-derivative factor.
    varphi_acc: Vec<f64>,
    eta: Vec<f64>,
    delta: f64,
    docs: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

#[allow(clippy::too_many_arguments)]
fn doc_gradients(
    doc: &Document,
    d: usize,
    x: &[f64],
    lay: &Layout,
    config: &ModelConfig,
    floor: f64,
    g: &Globals,
    chunk: &mut ChunkGrad,
) {
    let k = lay.k;
    let v = lay.v;
    let gamma = doc_gamma(x, lay, floor, d);
    let (phi, log_phi) = doc_phi(x, lay, d);
    let gamma0: f64 = gamma.iter().sum();
    let psi0 = digamma(gamma0);
    let a: Vec<f64> = gamma.iter().map(|&gm| digamma(gm) - psi0).collect();
    let ln_p = config.p.ln();
    let ln_1mp = (-config.p).ln_1p();
    let pinned = config.p == 1.0;

    // Dirichlet-residual part of the γ gradient: α_k − γ_k + Σ_v c_v ϕ_vk.
    let mut resid: Vec<f64> = (0..k).map(|j| config.alpha[j] - gamma[j]).collect();
    let mut phi_grad = vec![0.0; phi.len()];
    let mut xs = vec![0.0; k];

    for (row_idx, &(term, count)) in doc.counts.iter().enumerate() {
        let c = count as f64;
        let row = &phi[row_idx * k..(row_idx + 1) * k];
        let log_row = &log_phi[row_idx * k..(row_idx + 1) * k];
        let gate = g.varphi[term];

        // Responsibility-row gradient, projected through the row softmax:
        // dL/dlogit_k = ϕ_k (x_k − Σ_j ϕ_j x_j). The −1 from the entropy
        // term is constant across the row and drops out of the projection.
        let mut row_dot = 0.0;
        for j in 0..k {
            resid[j] += c * row[j];
            chunk.w[j * v + term] += c * gate * row[j];
            if row[j] > 0.0 {
                let xj = c * (a[j] + gate * g.log_beta[j * v + term] - log_row[j]);
                xs[j] = xj;
                row_dot += row[j] * xj;
            } else {
                xs[j] = 0.0;
            }
        }
        for j in 0..k {
            phi_grad[row_idx * k + j] = if row[j] > 0.0 {
                row[j] * (xs[j] - row_dot)
            } else {
                0.0
            };
        }

        chunk.u[term] += c * (1.0 - gate);
        if !pinned {
            let mut topic_log = 0.0;
            for j in 0..k {
                topic_log += row[j] * g.log_beta[j * v + term];
            }
            chunk.varphi_acc[term] +=
                c * (ln_p - ln_1mp + topic_log - g.log_pi[term] - x[lay.varphi + term]);
        }
    }

    // Target-term contributions.
    let mut ty_gamma = vec![0.0; k];
    if let Some(y) = doc.target {
        let mvec: Vec<f64> = gamma.iter().map(|&gm| gm / gamma0).collect();
        let u_dot: f64 = g.eta.iter().zip(&mvec).map(|(e, m)| e * m).sum();
        match config.target_kind {
            TargetKind::Real => {
                let delta = g.delta;
                let s2: f64 = g
                    .eta
                    .iter()
                    .zip(&mvec)
                    .map(|(e, m)| e * e * m)
                    .sum();
                let q = (s2 - u_dot * u_dot) / (gamma0 + 1.0) + u_dot * u_dot;
                let e2 = y * y - 2.0 * y * u_dot + q;
                for j in 0..k {
                    let du = (g.eta[j] - u_dot) / gamma0;
                    let dq = ((g.eta[j] * g.eta[j] - s2) - 2.0 * u_dot * (g.eta[j] - u_dot))
                        / (gamma0 * (gamma0 + 1.0))
                        - (s2 - u_dot * u_dot) / ((gamma0 + 1.0) * (gamma0 + 1.0))
                        + 2.0 * u_dot * du;
                    ty_gamma[j] = -(-2.0 * y * du + dq) / (2.0 * delta);
                }
                for i in 0..k {
                    chunk.eta[i] += (mvec[i] / delta)
                        * (y - u_dot - (g.eta[i] - u_dot) / (gamma0 + 1.0));
                }
                chunk.delta += (e2 - delta) / (2.0 * delta * delta);
            }
            TargetKind::Binary => {
                let r = y - sigmoid(u_dot);
                for j in 0..k {
                    ty_gamma[j] = r * (g.eta[j] - u_dot) / gamma0;
                }
                for i in 0..k {
                    chunk.eta[i] += r * mvec[i];
                }
            }
            TargetKind::None => {}
        }
    }

    // γ gradient through the digamma couplings, chained onto softplus.
    let tri0 = trigamma(gamma0);
    let resid_sum: f64 = resid.iter().sum();
    let mut gamma_grad = vec![0.0; k];
    let raw = &x[lay.gamma_doc(d)];
    for j in 0..k {
        let dgamma = trigamma(gamma[j]) * resid[j] - tri0 * resid_sum + ty_gamma[j];
        gamma_grad[j] = dgamma * sigmoid(raw[j]);
    }

    chunk.docs.push((d, gamma_grad, phi_grad));
}

/// Exact gradient of Σ_{d∈batch} bound(d) with respect to every coordinate.
/// Global-block gradients are scaled by m/|batch| so a minibatch step is an
/// unbiased estimate of the full-corpus gradient; per-document blocks are
/// written unscaled (documents outside the batch get zero).
fn gradient(
    x: &[f64],
    lay: &Layout,
    corpus: &Corpus,
    config: &ModelConfig,
    floor: f64,
    g: &Globals,
    batch: &[usize],
) -> Vec<f64> {
    let (k, v) = (lay.k, lay.v);
    let chunks = exec::chunk_map(batch.len(), |range| {
        let mut chunk = ChunkGrad {
            w: vec![0.0; k * v],
            u: vec![0.0; v],
            varphi_acc: vec![0.0; v],
            eta: vec![0.0; k],
            delta: 0.0,
            docs: Vec::with_capacity(range.len()),
        };
        for pos in range {
            let d = batch[pos];
            doc_gradients(&corpus.docs[d], d, x, lay, config, floor, g, &mut chunk);
        }
        chunk
    });

    let mut w = vec![0.0; k * v];
    let mut u = vec![0.0; v];
    let mut varphi_acc = vec![0.0; v];
    let mut eta_acc = vec![0.0; k];
    let mut delta_acc = 0.0;
    let mut grad = vec![0.0; lay.total];
    for chunk in chunks {
        for (dst, src) in w.iter_mut().zip(&chunk.w) {
            *dst += src;
        }
        for (dst, src) in u.iter_mut().zip(&chunk.u) {
            *dst += src;
        }
        for (dst, src) in varphi_acc.iter_mut().zip(&chunk.varphi_acc) {
            *dst += src;
        }
        for (dst, src) in eta_acc.iter_mut().zip(&chunk.eta) {
            *dst += src;
        }
        delta_acc += chunk.delta;
        for (d, gamma_grad, phi_grad) in chunk.docs {
            grad[lay.gamma_doc(d)].copy_from_slice(&gamma_grad);
            grad[lay.phi_doc(d)].copy_from_slice(&phi_grad);
        }
    }

    let scale = lay.m as f64 / batch.len() as f64;
    for kk in 0..k {
        let row = &w[kk * v..(kk + 1) * v];
        let row_sum: f64 = row.iter().sum();
        for (vv, &wv) in row.iter().enumerate() {
            grad[lay.beta + kk * v + vv] = scale * (wv - g.beta[kk * v + vv] * row_sum);
        }
    }
    let u_sum: f64 = u.iter().sum();
    for (vv, &uv) in u.iter().enumerate() {
        grad[lay.pi + vv] = scale * (uv - g.pi[vv] * u_sum);
    }
    if config.p != 1.0 {
        for vv in 0..v {
            let p = g.varphi[vv];
            grad[lay.varphi + vv] = scale * varphi_acc[vv] * p * (1.0 - p);
        }
    }
    for i in 0..k {
        grad[lay.eta + i] = scale * eta_acc[i];
    }
    grad[lay.delta] = scale * delta_acc * sigmoid(x[lay.delta]);
    grad
}

/// Compare the analytic gradient of the corpus bound against central finite
/// differences at a seeded random point away from initialization, over every
/// coordinate of every parameter block. Returns the worst discrepancy
/// |analytic − numeric| / max(1, |analytic|, |numeric|).
pub fn gradient_check(
    corpus: &Corpus,
    config: &ModelConfig,
    seed: u64,
) -> Result<f64, TrainError> {
    use rand::Rng;
    config.validate()?;
    if corpus.docs.is_empty() {
        return Err(TrainError::Invalid("corpus has no documents".into()));
    }
    let floor = TrainOptions::default().gamma_floor;
    let lay = Layout::new(corpus, config.k);
    let mut x = init_flat(corpus, config, floor, &lay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for xi in x.iter_mut() {
        if *xi != PINNED_RELEVANT_LOGIT {
            *xi += rng.random::<f64>() - 0.5;
        }
    }
    let g = unpack_globals(&x, &lay);
    let batch: Vec<usize> = (0..lay.m).collect();
    let grad = gradient(&x, &lay, corpus, config, floor, &g, &batch);

    let objective = |x: &[f64]| -> Result<f64, TrainError> {
        let g = unpack_globals(x, &lay);
        let params = unpack_params(&g, &lay);
        let state = unpack_state(x, &lay, floor, &g);
        Ok(elbo_corpus_breakdown(corpus, &params, config, &state)?.total)
    };

    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut xp = x.clone();
    for i in 0..lay.total {
        xp[i] = x[i] + h;
        let fp = objective(&xp)?;
        xp[i] = x[i] - h;
        let fm = objective(&xp)?;
        xp[i] = x[i];
        let fd = (fp - fm) / (2.0 * h);
        let err = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// ADAM
// ---------------------------------------------------------------------------

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(n: usize, lr: f64) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    /// One ascent step over the whole vector.
    fn step(&mut self, x: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..x.len() {
            let g = grad[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            x[i] += self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

fn validate_train_inputs(
    corpus: &Corpus,
    config: &ModelConfig,
    opts: &TrainOptions,
    val: Option<&Corpus>,
) -> Result<(), TrainError> {
    config.validate()?;
    if corpus.docs.is_empty() {
        return Err(TrainError::Invalid("corpus has no documents".into()));
    }
    if corpus.target_kind != config.target_kind {
        return Err(TrainError::Invalid(format!(
            "corpus targets are {} but the model expects {}",
            corpus.target_kind, config.target_kind
        )));
    }
    if opts.batch_size == Some(0) {
        return Err(TrainError::Invalid("batch size must be positive".into()));
    }
    if !(opts.learning_rate > 0.0) || !opts.learning_rate.is_finite() {
        return Err(TrainError::Invalid(format!(
            "learning rate must be positive and finite, got {}",
            opts.learning_rate
        )));
    }
    if !(opts.gamma_floor > 0.0) {
        return Err(TrainError::Invalid("gamma floor must be positive".into()));
    }
    if let Some(vc) = val {
        if vc.vocab.len() != corpus.vocab.len() {
            return Err(TrainError::Invalid(format!(
                "validation vocabulary has {} terms, training has {}",
                vc.vocab.len(),
                corpus.vocab.len()
            )));
        }
        if vc.target_kind != corpus.target_kind {
            return Err(TrainError::Invalid(format!(
                "validation targets are {} but training targets are {}",
                vc.target_kind, corpus.target_kind
            )));
        }
    }
    Ok(())
}

fn validation_metric(
    val: &Corpus,
    params: &ModelParams,
    config: &ModelConfig,
    varphi: &[f64],
) -> Result<Option<f64>, TrainError> {
    if config.target_kind == TargetKind::None || val.docs.is_empty() {
        return Ok(None);
    }
    let states = infer_corpus(val, params, config, varphi, &VAL_INFER)
        .map_err(|e| TrainError::Invalid(format!("validation inference failed: {e}")))?;
    let preds: Vec<f64> = states
        .iter()
        .map(|s| predict(s, params, config))
        .collect();
    let targets: Vec<f64> = val
        .docs
        .iter()
        .map(|d| d.target.expect("validated target kind"))
        .collect();
    let metric = match config.target_kind {
        TargetKind::Real => eval::rmse(&preds, &targets)?,
        TargetKind::Binary => eval::auc(&preds, &targets)?,
        TargetKind::None => unreachable!(),
    };
    Ok(Some(metric))
}

/// Fit the model to a corpus by full-vector ADAM ascent on the bound.
///
/// Records one [`EpochRecord`] at initialization and one per epoch; stops
/// early when the bound moves less than `convergence_tol` (relative) over a
/// ten-epoch window. When `val` is given, each record carries RMSE (real) or
/// AUC (binary) on it from held-out inference with the current parameters.
pub fn train(
    corpus: &Corpus,
    config: &ModelConfig,
    opts: &TrainOptions,
    val: Option<&Corpus>,
) -> Result<TrainResult, TrainError> {
    validate_train_inputs(corpus, config, opts, val)?;
    let lay = Layout::new(corpus, config.k);
    let floor = opts.gamma_floor;
    let mut x = init_flat(corpus, config, floor, &lay);
    let mut adam = Adam::new(lay.total, opts.learning_rate);

    let evaluate = |epoch: usize, x: &[f64]| -> Result<(EpochRecord, Globals), TrainError> {
        let g = unpack_globals(x, &lay);
        let params = unpack_params(&g, &lay);
        let state = unpack_state(x, &lay, floor, &g);
        let terms = elbo_corpus_breakdown(corpus, &params, config, &state)?;
        if let Some(term) = terms.first_non_finite() {
            return Err(TrainError::NonFinite { epoch, term });
        }
        let val_metric = match val {
            Some(vc) => validation_metric(vc, &params, config, &g.varphi)?,
            None => None,
        };
        let record = EpochRecord {
            epoch,
            elbo: terms.total,
            terms,
            val_metric,
            relevant_fraction: eval::relevant_fraction(&g.varphi, RELEVANCE_THRESHOLD),
            support_overlap: eval::support_overlap(&params.beta, &params.pi),
        };
        Ok((record, g))
    };

    let mut history = Vec::with_capacity(opts.epochs + 1);
    history.push(evaluate(0, &x)?.0);
    let mut converged_epoch = None;

    let full_batch: Vec<usize> = (0..lay.m).collect();
    for epoch in 1..=opts.epochs {
        match opts.batch_size {
            None => {
                let g = unpack_globals(&x, &lay);
                let grad = gradient(&x, &lay, corpus, config, floor, &g, &full_batch);
                if grad.iter().any(|gi| !gi.is_finite()) {
                    return Err(TrainError::NonFiniteGradient { epoch });
                }
                adam.step(&mut x, &grad);
            }
            Some(b) => {
                let mut order = full_batch.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(
                    opts.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                );
                order.shuffle(&mut rng);
                for batch in order.chunks(b) {
                    let g = unpack_globals(&x, &lay);
                    let grad = gradient(&x, &lay, corpus, config, floor, &g, batch);
                    if grad.iter().any(|gi| !gi.is_finite()) {
                        return Err(TrainError::NonFiniteGradient { epoch });
                    }
                    adam.step(&mut x, &grad);
                }
            }
        }
        let (record, _) = evaluate(epoch, &x)?;
        history.push(record);
        if epoch >= 10 {
            let prev = history[epoch - 10].elbo;
            let cur = history[epoch].elbo;
            if (cur - prev).abs() <= opts.convergence_tol * prev.abs().max(1.0) {
                converged_epoch = Some(epoch);
                break;
            }
        }
    }

    let g = unpack_globals(&x, &lay);
    let params = unpack_params(&g, &lay);
    let state = unpack_state(&x, &lay, floor, &g);
    Ok(TrainResult {
        params,
        varphi: g.varphi.clone(),
        state,
        history,
        converged_epoch,
    })
}

// ---------------------------------------------------------------------------
// Held-out inference and prediction
// ---------------------------------------------------------------------------

/// Fit the per-document variational parameters (γ, ϕ) of one held-out
/// document by closed-form block coordinate ascent, holding the global
/// parameters and the switch posterior fixed and omitting the target term.
///
/// Every token counts toward γ regardless of its switch posterior: a topic
/// assignment is drawn for every token under the model, so even a word
/// routed to the background carries its responsibility mass into γ.
pub fn infer_heldout(
    doc: &Document,
    params: &ModelParams,
    config: &ModelConfig,
    varphi: &[f64],
    opts: &InferOptions,
) -> Result<DocState, InferError> {
    let k = config.k;
    let n_tokens = doc.num_tokens() as f64;
    let mut gamma: Vec<f64> = config
        .alpha
        .iter()
        .map(|&a| a + n_tokens / k as f64)
        .collect();
    let t = doc.num_terms();
    let mut phi = vec![1.0 / k as f64; t * k];
    let mut log_row = vec![0.0; k];
    let mut prob_row = vec![0.0; k];
    let mut prev = f64::NEG_INFINITY;

    for _ in 0..opts.max_iters {
        let gamma0: f64 = gamma.iter().sum();
        let psi0 = digamma(gamma0);
        let a: Vec<f64> = gamma.iter().map(|&gm| digamma(gm) - psi0).collect();

        for (row_idx, &(term, _)) in doc.counts.iter().enumerate() {
            let gate = varphi[term];
            let mut logits = vec![0.0; k];
            let mut all_impossible = true;
            for j in 0..k {
                let lb = mul_log(gate, params.beta[j][term].ln());
                logits[j] = a[j] + lb;
                if logits[j] > f64::NEG_INFINITY {
                    all_impossible = false;
                }
            }
            if all_impossible {
                return Err(InferError::ImpossibleWord { term });
            }
            log_softmax_into(&logits, &mut log_row, &mut prob_row);
            phi[row_idx * k..(row_idx + 1) * k].copy_from_slice(&prob_row);
        }

        for (j, slot) in gamma.iter_mut().enumerate() {
            let mut s = config.alpha[j];
            for (row_idx, &(_, count)) in doc.counts.iter().enumerate() {
                s += count as f64 * phi[row_idx * k + j];
            }
            *slot = s;
        }

        let bound = elbo_document(doc, None, params, config, &gamma, &phi, varphi)?.total;
        if (bound - prev).abs() <= opts.convergence_tol * bound.abs().max(1.0) {
            break;
        }
        prev = bound;
    }
    Ok(DocState {
        gamma,
        phi_z: phi,
    })
}

/// Held-out inference over a whole corpus, documents in parallel.
pub fn infer_corpus(
    corpus: &Corpus,
    params: &ModelParams,
    config: &ModelConfig,
    varphi: &[f64],
    opts: &InferOptions,
) -> Result<Vec<DocState>, InferError> {
    let chunks = exec::chunk_map(corpus.docs.len(), |range| {
        range
            .map(|d| infer_heldout(&corpus.docs[d], params, config, varphi, opts))
            .collect::<Result<Vec<_>, _>>()
    });
    let mut out = Vec::with_capacity(corpus.docs.len());
    for chunk in chunks {
        out.extend(chunk?);
    }
    Ok(out)
}

/// Point prediction from an inferred document state: η·E[θ] for real
/// targets (and target-free models), squashed through the sigmoid for
/// binary targets.
pub fn predict(state: &DocState, params: &ModelParams, config: &ModelConfig) -> f64 {
    let gamma0: f64 = state.gamma.iter().sum();
    let u: f64 = params
        .eta
        .iter()
        .zip(&state.gamma)
        .map(|(e, g)| e * g / gamma0)
        .sum();
    match config.target_kind {
        TargetKind::Binary => sigmoid(u),
        _ => u,
    }
}
