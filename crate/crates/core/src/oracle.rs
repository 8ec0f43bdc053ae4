//! Ground-truth reference computations for very small model instances.
//!
//! These are deliberately brute-force and share no algebra with the bound or
//! the trainer: the marginal likelihood integrates the topic mixture over the
//! simplex with a midpoint quadrature rule (each evaluation marginalizes the
//! per-token switches in closed form), and the switch posterior enumerates
//! all 2^N token-switch configurations. Their job is to certify the fast
//! paths — in particular that the variational bound really is a lower bound
//! on the exact log-likelihood — so they trade speed for obviousness.
//!
//! The quadrature covers K ≤ 3 topics via the stick-breaking chart
//! θ = (s₁, (1−s₁)s₂, (1−s₁)(1−s₂)) with Jacobian (1−s₁); every call
//! evaluates at `points_per_dim` and at double that, and refuses to answer if
//! the two grids disagree.

use rand::Rng;

use thiserror::Error;

use crate::corpus::{Document, TargetKind};
use crate::model::{ModelConfig, ModelParams};
use crate::special::{ln_gamma, log_sigmoid, logsumexp, LN_2PI};

/// Grid resolution used when callers do not pick one.
pub const DEFAULT_POINTS_PER_DIM: usize = 320;
/// Maximum disagreement between the n-point and 2n-point grids.
pub const QUADRATURE_TOL: f64 = 2e-5;
/// Hard cap on 2^N switch enumeration.
pub const MAX_ENUMERATED_TOKENS: usize = 20;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("quadrature supports at most 3 topics, got {k}")]
    TooManyTopics { k: usize },
    #[error("switch enumeration supports at most {MAX_ENUMERATED_TOKENS} tokens, got {n}")]
    TooManyTokens { n: usize },
    #[error("quadrature did not converge: {coarse} at n points vs {fine} at 2n")]
    NonConvergent { coarse: f64, fine: f64 },
    #[error("switch posterior did not converge between grids (max difference {max_diff})")]
    PosteriorNonConvergent { max_diff: f64 },
    #[error("every switch configuration has zero probability")]
    Degenerate,
    #[error("malformed instance: {0}")]
    Instance(String),
}

/// A complete tiny model instance: configuration, true parameters, one
/// document as an explicit token sequence, and (optionally) its target.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub tokens: Vec<usize>,
    pub target: Option<f64>,
}

impl TinyInstance {
    pub fn validate(&self) -> Result<(), OracleError> {
        self.config
            .validate()
            .map_err(|e| OracleError::Instance(e.to_string()))?;
        let v = self.params.vocab_size();
        self.params
            .validate(self.config.k, v)
            .map_err(|e| OracleError::Instance(e.to_string()))?;
        if let Some(&t) = self.tokens.iter().find(|&&t| t >= v) {
            return Err(OracleError::Instance(format!(
                "token id {t} out of range for vocabulary of {v}"
            )));
        }
        match (self.target, self.config.target_kind) {
            (Some(_), TargetKind::None) => Err(OracleError::Instance(
                "target supplied under target kind none".into(),
            )),
            (None, TargetKind::Real | TargetKind::Binary) => Err(OracleError::Instance(
                "target missing for a supervised instance".into(),
            )),
            (Some(y), TargetKind::Binary) if y != 0.0 && y != 1.0 => Err(OracleError::Instance(
                format!("binary target must be 0 or 1, got {y}"),
            )),
            _ => Ok(()),
        }
    }

    /// The token sequence folded into a count-vector document.
    pub fn document(&self) -> Document {
        let mut counts: std::collections::BTreeMap<usize, u32> = Default::default();
        for &t in &self.tokens {
            *counts.entry(t).or_insert(0) += 1;
        }
        Document {
            id: "tiny".into(),
            counts: counts.into_iter().collect(),
            target: self.target,
        }
    }
}

/// log p(y | θ) at a specific θ — exact for both target families (the
/// Bernoulli case is only approximate under *expectations*, not pointwise).
fn log_target_density(
    target: Option<f64>,
    kind: TargetKind,
    eta: &[f64],
    delta: f64,
    theta: &[f64],
) -> f64 {
    match (target, kind) {
        (Some(y), TargetKind::Real) => {
            let u: f64 = eta.iter().zip(theta).map(|(e, t)| e * t).sum();
            -0.5 * (LN_2PI + delta.ln()) - (y - u) * (y - u) / (2.0 * delta)
        }
        (Some(y), TargetKind::Binary) => {
            let u: f64 = eta.iter().zip(theta).map(|(e, t)| e * t).sum();
            y * log_sigmoid(u) + (1.0 - y) * log_sigmoid(-u)
        }
        _ => 0.0,
    }
}

/// Midpoint-rule grid over the (K−1)-dimensional simplex interior:
/// `(θ, w)` pairs with w the Dirichlet density times the chart Jacobian and
/// cell volume, so that Σ w·f(θ) ≈ E_{Dir(α)}[f(θ)].
fn dirichlet_grid(alpha: &[f64], points_per_dim: usize) -> Vec<(Vec<f64>, f64)> {
    let k = alpha.len();
    let alpha0: f64 = alpha.iter().sum();
    let mut log_norm = ln_gamma(alpha0);
    for &a in alpha {
        log_norm -= ln_gamma(a);
    }
    let dir_density = |theta: &[f64]| -> f64 {
        let mut l = log_norm;
        for (&a, &t) in alpha.iter().zip(theta) {
            l += (a - 1.0) * t.ln();
        }
        l.exp()
    };
    let n = points_per_dim;
    // Midpoint rule after the endpoint-clustering substitution
    // s = (1 − cos πu)/2, which turns the fractional-power factors s^(α−1)
    // at the simplex boundary into smooth functions of u and restores the
    // rule's O(n⁻²) convergence.
    let node = |i: usize| -> (f64, f64) {
        let u = (i as f64 + 0.5) / n as f64;
        let s = 0.5 * (1.0 - (std::f64::consts::PI * u).cos());
        let ds = 0.5 * std::f64::consts::PI * (std::f64::consts::PI * u).sin() / n as f64;
        (s, ds)
    };
    match k {
        1 => vec![(vec![1.0], 1.0)],
        2 => (0..n)
            .map(|i| {
                let (s, ds) = node(i);
                let theta = vec![s, 1.0 - s];
                let w = dir_density(&theta) * ds;
                (theta, w)
            })
            .collect(),
        3 => {
            let mut grid = Vec::with_capacity(n * n);
            for i in 0..n {
                let (s1, ds1) = node(i);
                for j in 0..n {
                    let (s2, ds2) = node(j);
                    let theta = vec![s1, (1.0 - s1) * s2, (1.0 - s1) * (1.0 - s2)];
                    let w = dir_density(&theta) * (1.0 - s1) * ds1 * ds2;
                    grid.push((theta, w));
                }
            }
            grid
        }
        _ => unreachable!("grid caller enforces k <= 3"),
    }
}

fn log_likelihood_on_grid(inst: &TinyInstance, points_per_dim: usize) -> f64 {
    let grid = dirichlet_grid(&inst.config.alpha, points_per_dim);
    let p = inst.config.p;
    let mut log_terms = Vec::with_capacity(grid.len());
    for (theta, w) in &grid {
        let mut l = w.ln()
            + log_target_density(
                inst.target,
                inst.config.target_kind,
                &inst.params.eta,
                inst.params.delta,
                theta,
            );
        for &token in &inst.tokens {
            let topic_channel: f64 = theta
                .iter()
                .enumerate()
                .map(|(kk, &t)| t * inst.params.beta[kk][token])
                .sum();
            l += (p * topic_channel + (1.0 - p) * inst.params.pi[token]).ln();
        }
        log_terms.push(l);
    }
    logsumexp(&log_terms)
}

/// Exact marginal log-likelihood log p(w, y) of a tiny instance, with the
/// per-token switches and the topic proportions both marginalized out.
///
/// Evaluated on two grids (n and 2n points per dimension); disagreement
/// beyond [`QUADRATURE_TOL`] is refused rather than returned. The single-
/// topic case is closed-form and needs no grid.
pub fn exact_log_likelihood(
    inst: &TinyInstance,
    points_per_dim: usize,
) -> Result<f64, OracleError> {
    inst.validate()?;
    let k = inst.config.k;
    if k > 3 {
        return Err(OracleError::TooManyTopics { k });
    }
    if k == 1 {
        let theta = [1.0];
        let mut l = log_target_density(
            inst.target,
            inst.config.target_kind,
            &inst.params.eta,
            inst.params.delta,
            &theta,
        );
        let p = inst.config.p;
        for &token in &inst.tokens {
            l += (p * inst.params.beta[0][token] + (1.0 - p) * inst.params.pi[token]).ln();
        }
        return Ok(l);
    }
    let coarse = log_likelihood_on_grid(inst, points_per_dim);
    let fine = log_likelihood_on_grid(inst, points_per_dim * 2);
    if coarse == f64::NEG_INFINITY && fine == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if (coarse - fine).abs() > QUADRATURE_TOL {
        return Err(OracleError::NonConvergent { coarse, fine });
    }
    Ok(fine)
}

/// Subset weights over switch configurations on one grid. Returns
/// (per-token posterior, total weight).
fn switch_posterior_on_grid(
    inst: &TinyInstance,
    points_per_dim: usize,
) -> Result<Vec<f64>, OracleError> {
    let n = inst.tokens.len();
    let grid = dirichlet_grid(&inst.config.alpha, points_per_dim);
    let p = inst.config.p;

    // Per grid point: base = w · p(y|θ); per token: the topic-channel factor.
    let mut base = Vec::with_capacity(grid.len());
    let mut topic_factor = vec![Vec::with_capacity(grid.len()); n];
    for (theta, w) in &grid {
        base.push(
            w * log_target_density(
                inst.target,
                inst.config.target_kind,
                &inst.params.eta,
                inst.params.delta,
                theta,
            )
            .exp(),
        );
        for (slot, &token) in inst.tokens.iter().enumerate() {
            let a: f64 = theta
                .iter()
                .enumerate()
                .map(|(kk, &t)| t * inst.params.beta[kk][token])
                .sum();
            topic_factor[slot].push(a);
        }
    }

    let mut numerator = vec![0.0f64; n];
    let mut total = 0.0f64;
    for subset in 0u32..(1u32 << n) {
        // Switch-off tokens contribute exact literal factors, so impossible
        // configurations carry weight exactly 0.0.
        let mut outside = 1.0f64;
        for (slot, &token) in inst.tokens.iter().enumerate() {
            if subset & (1 << slot) == 0 {
                outside *= (1.0 - p) * inst.params.pi[token];
            } else {
                outside *= p;
            }
        }
        let mut integral = 0.0f64;
        for g in 0..base.len() {
            let mut f = base[g];
            for (slot, tf) in topic_factor.iter().enumerate() {
                if subset & (1 << slot) != 0 {
                    f *= tf[g];
                }
            }
            integral += f;
        }
        let weight = outside * integral;
        total += weight;
        for slot in 0..n {
            if subset & (1 << slot) != 0 {
                numerator[slot] += weight;
            }
        }
    }
    if total == 0.0 {
        return Err(OracleError::Degenerate);
    }
    Ok(numerator.into_iter().map(|x| x / total).collect())
}

/// Exact posterior probability that each token was routed through the topic
/// channel, P(ξ_n = 1 | w, y), by enumerating all 2^N switch configurations
/// and integrating θ out on the quadrature grid.
///
/// Structural zeros survive exactly: a token whose word has zero background
/// probability gets posterior exactly 1.0, and one invisible to every topic
/// gets exactly 0.0.
pub fn exact_switch_posterior(
    inst: &TinyInstance,
    points_per_dim: usize,
) -> Result<Vec<f64>, OracleError> {
    inst.validate()?;
    let k = inst.config.k;
    if k > 3 {
        return Err(OracleError::TooManyTopics { k });
    }
    let n = inst.tokens.len();
    if n > MAX_ENUMERATED_TOKENS {
        return Err(OracleError::TooManyTokens { n });
    }
    if n == 0 {
        return Ok(vec![]);
    }
    if k == 1 {
        // θ is a point mass; a single shared grid cell is already exact.
        return switch_posterior_on_grid(inst, 1);
    }
    let coarse = switch_posterior_on_grid(inst, points_per_dim)?;
    let fine = switch_posterior_on_grid(inst, points_per_dim * 2)?;
    let max_diff = coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    if max_diff > QUADRATURE_TOL {
        return Err(OracleError::PosteriorNonConvergent { max_diff });
    }
    Ok(fine)
}

/// Monte Carlo estimate of the marginal log-likelihood with a delta-method
/// standard error on the log scale. Used to cross-check the quadrature.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub log_likelihood: f64,
    pub se_log: f64,
}

pub fn mc_log_likelihood<R: Rng>(
    inst: &TinyInstance,
    draws: usize,
    rng: &mut R,
) -> Result<McEstimate, OracleError> {
    use rand_distr::{Distribution, Gamma};
    inst.validate()?;
    let k = inst.config.k;
    let dists: Vec<Gamma<f64>> = inst
        .config
        .alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("validated alpha"))
        .collect();
    let p = inst.config.p;
    let mut logs = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mut theta: Vec<f64> = dists
            .iter()
            .map(|d| d.sample(rng).max(1e-300))
            .collect();
        let s: f64 = theta.iter().sum();
        for t in &mut theta {
            *t /= s;
        }
        let mut l = log_target_density(
            inst.target,
            inst.config.target_kind,
            &inst.params.eta,
            inst.params.delta,
            &theta,
        );
        for &token in &inst.tokens {
            let a: f64 = (0..k).map(|kk| theta[kk] * inst.params.beta[kk][token]).sum();
            l += (p * a + (1.0 - p) * inst.params.pi[token]).ln();
        }
        logs.push(l);
    }
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Ok(McEstimate {
            log_likelihood: f64::NEG_INFINITY,
            se_log: 0.0,
        });
    }
    let weights: Vec<f64> = logs.iter().map(|&l| (l - m).exp()).collect();
    let mean: f64 = weights.iter().sum::<f64>() / draws as f64;
    let var: f64 = weights.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>()
        / (draws as f64 * (draws as f64 - 1.0));
    Ok(McEstimate {
        log_likelihood: m + mean.ln(),
        se_log: var.sqrt() / mean,
    })
}

/// A random tiny instance: K ≤ 3 topics, V ≤ 6 words, N ≤ 6 tokens, with
/// strictly positive word distributions, interior switch prior, and
/// α ∈ [1, 3] so the Dirichlet density stays bounded on the grid.
pub fn random_tiny_instance<R: Rng>(rng: &mut R, kinds: &[TargetKind]) -> TinyInstance {
    let k = rng.random_range(1..=3usize);
    let v = rng.random_range(2..=6usize);
    let n = rng.random_range(1..=6usize);
    let simplex = |rng: &mut R, len: usize| -> Vec<f64> {
        let mut x: Vec<f64> = (0..len)
            .map(|_| -(1.0 - rng.random::<f64>()).ln().max(1e-12))
            .collect();
        let s: f64 = x.iter().sum();
        for xi in &mut x {
            *xi /= s;
        }
        x
    };
    let alpha: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 2.0 + 1.0).collect();
    let p = rng.random::<f64>() * 0.9 + 0.05;
    let kind = kinds[rng.random_range(0..kinds.len())];
    let config = ModelConfig::new(k, p, alpha, kind, 0).expect("generated config is valid");
    let params = ModelParams {
        beta: (0..k).map(|_| simplex(rng, v)).collect(),
        pi: simplex(rng, v),
        eta: (0..k).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
        delta: rng.random::<f64>() * 1.2 + 0.3,
    };
    let tokens: Vec<usize> = (0..n).map(|_| rng.random_range(0..v)).collect();
    let target = match kind {
        TargetKind::Real => Some(rng.random::<f64>() * 4.0 - 2.0),
        TargetKind::Binary => Some(if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 }),
        TargetKind::None => None,
    };
    TinyInstance {
        config,
        params,
        tokens,
        target,
    }
}

/// A random well-formed variational state for a document:
/// (γ, flattened ϕ rows, varphi), all strictly interior.
pub fn random_state<R: Rng>(
    rng: &mut R,
    doc: &Document,
    k: usize,
    v: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let simplex = |rng: &mut R, len: usize| -> Vec<f64> {
        let mut x: Vec<f64> = (0..len)
            .map(|_| -(1.0 - rng.random::<f64>()).ln().max(1e-12))
            .collect();
        let s: f64 = x.iter().sum();
        for xi in &mut x {
            *xi /= s;
        }
        x
    };
    let gamma: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 4.0 + 0.2).collect();
    let mut phi = Vec::with_capacity(doc.num_terms() * k);
    for _ in 0..doc.num_terms() {
        phi.extend(simplex(rng, k));
    }
    let varphi: Vec<f64> = (0..v)
        .map(|_| rng.random::<f64>() * 0.98 + 0.01)
        .collect();
    (gamma, phi, varphi)
}
