//! The evidence lower bound, term by term.
//!
//! For a document with tokens w, topic responsibilities ϕ (one K-simplex per
//! distinct term), Dirichlet posterior q(θ|γ), and a per-vocabulary-word
//! switch posterior q(ξ_w) = Bernoulli(varphi_w), the bound decomposes into
//! five model terms and three variational terms:
//!
//! ```text
//! total =   E[log p(θ|α)] + E[log p(z|θ)] + E[log p(y|θ,η,δ)]
//!         + E[log p(ξ|p)] + E[log p(w|z,ξ,β,π)]
//!         − E[log q(θ|γ)] − E[log q(z|ϕ)] − E[log q(ξ|varphi)]
//! ```
//!
//! The h-fields of [`ElboBreakdown`] store the E[log q] values with exactly
//! that sign, so `total` is the literal sum above; the discrete entropies are
//! the negations (see [`ElboBreakdown::z_entropy`]). Per-token sums collapse
//! to per-distinct-term sums weighted by counts, which is an exact identity
//! because tokens of the same term share their responsibilities and their
//! switch. Contributions whose gating weight is exactly zero are defined as
//! zero, so hard switch assignments (varphi ∈ {0, 1}) are representable
//! without producing NaNs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Document, TargetKind};
use crate::exec;
use crate::model::{ModelConfig, ModelParams};
use crate::special::{digamma, ln_gamma, log_sigmoid, mul_log, xlogx, LN_2PI};

#[derive(Debug, Error)]
pub enum ElboError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid variational state: {0}")]
    InvalidState(String),
    #[error("log of zero in beta[{topic}][{term}] with interior gating weight")]
    LogZeroBeta { topic: usize, term: usize },
    #[error("log of zero in pi[{term}] with interior gating weight")]
    LogZeroPi { term: usize },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Simplex rows of ϕ must sum to 1 within this slack.
const PHI_ROW_TOL: f64 = 1e-9;


/// The eight terms of the bound for one document (or summed over a corpus),
/// plus their combination.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    /// E[log p(θ|α)]
    pub t_theta_prior: f64,
    /// E[log p(z|θ)]
    pub t_z_given_theta: f64,
    /// E[log p(y|θ,η,δ)] (0 when the target is absent)
    pub t_y: f64,
    /// E[log p(ξ|p)]
    pub t_xi_prior: f64,
    /// E[log p(w|z,ξ,β,π)]
    pub t_words: f64,
    /// E[log q(θ|γ)]
    pub h_theta: f64,
    /// E[log q(z|ϕ)] (≤ 0; negation is the z entropy)
    pub h_z: f64,
    /// E[log q(ξ|varphi)] (≤ 0; negation is the switch entropy)
    pub h_xi: f64,
    /// Sum of the five t-terms minus the three h-terms.
    pub total: f64,
}

impl ElboBreakdown {
    /// Recombine the stored terms; equals `total` up to float associativity.
    pub fn recombined(&self) -> f64 {
        self.t_theta_prior + self.t_z_given_theta + self.t_y + self.t_xi_prior + self.t_words
            - self.h_theta
            - self.h_z
            - self.h_xi
    }

    /// Entropy of the topic assignments, −E[log q(z|ϕ)] ≥ 0.
    pub fn z_entropy(&self) -> f64 {
        -self.h_z
    }

    /// Entropy of the relevance switches, −E[log q(ξ|varphi)] ≥ 0.
    pub fn xi_entropy(&self) -> f64 {
        -self.h_xi
    }

    /// Name of the first non-finite term, if any (for abort diagnostics).
    pub fn first_non_finite(&self) -> Option<&'static str> {
        let fields = [
            ("t_theta_prior", self.t_theta_prior),
            ("t_z_given_theta", self.t_z_given_theta),
            ("t_y", self.t_y),
            ("t_xi_prior", self.t_xi_prior),
            ("t_words", self.t_words),
            ("h_theta", self.h_theta),
            ("h_z", self.h_z),
            ("h_xi", self.h_xi),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Some(name);
            }
        }
        None
    }
}

impl std::ops::AddAssign for ElboBreakdown {
    fn add_assign(&mut self, rhs: Self) {
        self.t_theta_prior += rhs.t_theta_prior;
        self.t_z_given_theta += rhs.t_z_given_theta;
        self.t_y += rhs.t_y;
        self.t_xi_prior += rhs.t_xi_prior;
        self.t_words += rhs.t_words;
        self.h_theta += rhs.h_theta;
        self.h_z += rhs.h_z;
        self.h_xi += rhs.h_xi;
        self.total += rhs.total;
    }
}

/// Per-document variational parameters: Dirichlet γ over topics, and one
/// K-simplex of topic responsibilities per distinct term, flattened row-major
/// in the order of the document's `counts`.
#[derive(Debug, Clone, PartialEq)]
pub struct DocState {
    pub gamma: Vec<f64>,
    pub phi_z: Vec<f64>,
}

/// Variational state for a whole corpus. `varphi` is indexed by vocabulary
/// word — the switch posterior is shared across documents, which is what
/// couples word relevance globally.
#[derive(Debug, Clone)]
pub struct VariationalState {
    pub docs: Vec<DocState>,
    pub varphi: Vec<f64>,
}

impl VariationalState {
    /// The neutral state: γ = α, uniform responsibilities, varphi = 1/2.
    pub fn uniform(corpus: &Corpus, config: &ModelConfig) -> Self {
        let k = config.k;
        let docs = corpus
            .docs
            .iter()
            .map(|d| DocState {
                gamma: config.alpha.clone(),
                phi_z: vec![1.0 / k as f64; d.num_terms() * k],
            })
            .collect();
        VariationalState {
            docs,
            varphi: vec![0.5; corpus.vocab.len()],
        }
    }
}

/// E[log θ_k] under Dirichlet(γ): ψ(γ_k) − ψ(Σγ).
pub fn dirichlet_expected_log(gamma: &[f64]) -> Vec<f64> {
    assert!(
        gamma.iter().all(|&g| g > 0.0 && g.is_finite()),
        "gamma must be strictly positive"
    );
    let g0: f64 = gamma.iter().sum();
    let d0 = digamma(g0);
    gamma.iter().map(|&g| digamma(g) - d0).collect()
}

/// First and second moments of Dirichlet(γ): E[θ] and E[θθᵀ], where
/// E[θ_iθ_j] = γ̃_i(δ_ij − γ̃_j)/(γ₀+1) + γ̃_iγ̃_j with γ̃ = γ/γ₀.
pub fn dirichlet_moments(gamma: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert!(
        gamma.iter().all(|&g| g > 0.0 && g.is_finite()),
        "gamma must be strictly positive"
    );
    let g0: f64 = gamma.iter().sum();
    let mean: Vec<f64> = gamma.iter().map(|&g| g / g0).collect();
    let k = gamma.len();
    let mut outer = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            let kron = if i == j { 1.0 } else { 0.0 };
            outer[i][j] = mean[i] * (kron - mean[j]) / (g0 + 1.0) + mean[i] * mean[j];
        }
    }
    (mean, outer)
}

/// E[log N(y | η·θ, δ)] under q(θ): the expectation is exact because the
/// log-density is quadratic in θ.
pub fn gaussian_target_term(
    y: f64,
    eta: &[f64],
    delta: f64,
    e_theta: &[f64],
    e_outer: &[Vec<f64>],
) -> f64 {
    let u: f64 = eta.iter().zip(e_theta).map(|(e, m)| e * m).sum();
    let mut quad = 0.0;
    for (i, &ei) in eta.iter().enumerate() {
        for (j, &ej) in eta.iter().enumerate() {
            quad += ei * ej * e_outer[i][j];
        }
    }
    -0.5 * (LN_2PI + delta.ln()) - (y * y - 2.0 * y * u + quad) / (2.0 * delta)
}

/// Plug-in approximation of E[log Bernoulli(y | σ(η·θ))]: the expectation is
/// evaluated at E[θ] rather than integrated (log σ has no closed form under a
/// Dirichlet). Kept behind this single function so a tighter approximation
/// can replace it in one place.
pub fn binary_target_term(y: f64, eta: &[f64], e_theta: &[f64]) -> f64 {
    let u: f64 = eta.iter().zip(e_theta).map(|(e, m)| e * m).sum();
    y * log_sigmoid(u) + (1.0 - y) * log_sigmoid(-u)
}

fn validate_document_inputs(
    doc: &Document,
    target: Option<f64>,
    params: &ModelParams,
    config: &ModelConfig,
    gamma: &[f64],
    phi_z: &[f64],
    varphi: &[f64],
) -> Result<(), ElboError> {
    let k = config.k;
    let v = params.vocab_size();
    if params.num_topics() != k {
        return Err(ElboError::DimMismatch(format!(
            "params have {} topics, config says {k}",
            params.num_topics()
        )));
    }
    if params.eta.len() != k {
        return Err(ElboError::DimMismatch(format!(
            "eta has length {}, expected {k}",
            params.eta.len()
        )));
    }
    if gamma.len() != k {
        return Err(ElboError::DimMismatch(format!(
            "gamma has length {}, expected {k}",
            gamma.len()
        )));
    }
    if phi_z.len() != doc.num_terms() * k {
        return Err(ElboError::DimMismatch(format!(
            "phi_z has length {}, expected {} terms × {k}",
            phi_z.len(),
            doc.num_terms()
        )));
    }
    if varphi.len() != v {
        return Err(ElboError::DimMismatch(format!(
            "varphi has length {}, expected vocabulary size {v}",
            varphi.len()
        )));
    }
    if gamma.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
        return Err(ElboError::InvalidState(
            "gamma entries must be strictly positive".into(),
        ));
    }
    for (row_idx, row) in phi_z.chunks_exact(k).enumerate() {
        if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(ElboError::InvalidState(format!(
                "phi_z row {row_idx} has negative or non-finite entries"
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > PHI_ROW_TOL {
            return Err(ElboError::InvalidState(format!(
                "phi_z row {row_idx} sums to {s}, expected 1"
            )));
        }
    }
    if varphi.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(ElboError::InvalidState(
            "varphi entries must lie in [0, 1]".into(),
        ));
    }
    for &(t, _) in &doc.counts {
        if t >= v {
            return Err(ElboError::DimMismatch(format!(
                "document references term {t} but vocabulary has {v} terms"
            )));
        }
    }
    match (target, config.target_kind) {
        (Some(_), TargetKind::None) => Err(ElboError::InvalidState(
            "target supplied but target kind is none".into(),
        )),
        (Some(y), TargetKind::Binary) if y != 0.0 && y != 1.0 => Err(ElboError::InvalidState(
            format!("binary target must be 0 or 1, got {y}"),
        )),
        (Some(y), _) if !y.is_finite() => {
            Err(ElboError::InvalidState(format!("non-finite target {y}")))
        }
        _ => Ok(()),
    }
}

/// The bound for a single document at the given variational state.
///
/// `phi_z` is the flattened T×K responsibility matrix aligned with
/// `doc.counts`; `varphi` is the global per-vocabulary-word switch posterior.
/// Passing `target: None` drops the target term, which is how held-out
/// documents are scored.
pub fn elbo_document(
    doc: &Document,
    target: Option<f64>,
    params: &ModelParams,
    config: &ModelConfig,
    gamma: &[f64],
    phi_z: &[f64],
    varphi: &[f64],
) -> Result<ElboBreakdown, ElboError> {
    validate_document_inputs(doc, target, params, config, gamma, phi_z, varphi)?;
    let k = config.k;

    let gamma0: f64 = gamma.iter().sum();
    let e_log_theta = dirichlet_expected_log(gamma);

    let alpha0: f64 = config.alpha.iter().sum();
    let mut t_theta_prior = ln_gamma(alpha0);
    for (&a, &el) in config.alpha.iter().zip(&e_log_theta) {
        t_theta_prior += -ln_gamma(a) + (a - 1.0) * el;
    }
    let mut h_theta = ln_gamma(gamma0);
    for (&g, &el) in gamma.iter().zip(&e_log_theta) {
        h_theta += -ln_gamma(g) + (g - 1.0) * el;
    }

    let ln_p = config.p.ln();
    let ln_1mp = (-config.p).ln_1p();

    let mut t_z_given_theta = 0.0;
    let mut t_xi_prior = 0.0;
    let mut t_words = 0.0;
    let mut h_z = 0.0;
    let mut h_xi = 0.0;

    for (row_idx, &(term, count)) in doc.counts.iter().enumerate() {
        let row = &phi_z[row_idx * k..(row_idx + 1) * k];
        let c = count as f64;
        let gate = varphi[term];
        let bg = 1.0 - gate;

        for (kk, &phi) in row.iter().enumerate() {
            t_z_given_theta += c * phi * e_log_theta[kk];
            h_z += c * xlogx(phi);
            let w = gate * phi;
            if w > 0.0 {
                let b = params.beta[kk][term];
                if b == 0.0 {
                    return Err(ElboError::LogZeroBeta { topic: kk, term });
                }
                t_words += c * w * b.ln();
            }
        }
        if bg > 0.0 {
            let p_bg = params.pi[term];
            if p_bg == 0.0 {
                return Err(ElboError::LogZeroPi { term });
            }
            t_words += c * bg * p_bg.ln();
        }

        t_xi_prior += c * (mul_log(gate, ln_p) + mul_log(bg, ln_1mp));
        h_xi += c * (xlogx(gate) + xlogx(bg));
    }

    let t_y = match (target, config.target_kind) {
        (Some(y), TargetKind::Real) => {
            let (e_theta, e_outer) = dirichlet_moments(gamma);
            gaussian_target_term(y, &params.eta, params.delta, &e_theta, &e_outer)
        }
        (Some(y), TargetKind::Binary) => {
            let (e_theta, _) = dirichlet_moments(gamma);
            binary_target_term(y, &params.eta, &e_theta)
        }
        _ => 0.0,
    };

    let total =
        t_theta_prior + t_z_given_theta + t_y + t_xi_prior + t_words - h_theta - h_z - h_xi;
    Ok(ElboBreakdown {
        t_theta_prior,
        t_z_given_theta,
        t_y,
        t_xi_prior,
        t_words,
        h_theta,
        h_z,
        h_xi,
        total,
    })
}

fn corpus_breakdown_with<M>(
    corpus: &Corpus,
    params: &ModelParams,
    config: &ModelConfig,
    state: &VariationalState,
    map: M,
) -> Result<ElboBreakdown, ElboError>
where
    M: Fn(
        usize,
        &(dyn Fn(std::ops::Range<usize>) -> Result<ElboBreakdown, ElboError> + Sync + Send),
    ) -> Vec<Result<ElboBreakdown, ElboError>>,
{
    if state.docs.len() != corpus.docs.len() {
        return Err(ElboError::DimMismatch(format!(
            "state has {} documents, corpus has {}",
            state.docs.len(),
            corpus.docs.len()
        )));
    }
    let per_chunk = |range: std::ops::Range<usize>| -> Result<ElboBreakdown, ElboError> {
        let mut sum = ElboBreakdown::default();
        for d in range {
            let doc = &corpus.docs[d];
            let ds = &state.docs[d];
            let b = elbo_document(
                doc,
                doc.target,
                params,
                config,
                &ds.gamma,
                &ds.phi_z,
                &state.varphi,
            )?;
            sum += b;
        }
        Ok(sum)
    };
    let mut total = ElboBreakdown::default();
    for chunk in map(corpus.docs.len(), &per_chunk) {
        total += chunk?;
    }
    Ok(total)
}

/// Term-by-term bound summed over a corpus (documents score their own
/// targets). Empty corpus sums to zero.
pub fn elbo_corpus_breakdown(
    corpus: &Corpus,
    params: &ModelParams,
    config: &ModelConfig,
    state: &VariationalState,
) -> Result<ElboBreakdown, ElboError> {
    corpus_breakdown_with(corpus, params, config, state, |n, f| exec::chunk_map(n, f))
}

/// Corpus bound via the default execution path (parallel when the `parallel`
/// feature is enabled).
pub fn elbo_corpus(
    corpus: &Corpus,
    params: &ModelParams,
    config: &ModelConfig,
    state: &VariationalState,
) -> Result<f64, ElboError> {
    elbo_corpus_breakdown(corpus, params, config, state).map(|b| b.total)
}

/// Sequential corpus bound. Bit-identical to [`elbo_corpus`]; exists so the
/// two execution paths can be benchmarked and cross-checked against each
/// other.
pub fn elbo_corpus_seq(
    corpus: &Corpus,
    params: &ModelParams,
    config: &ModelConfig,
    state: &VariationalState,
) -> Result<f64, ElboError> {
    corpus_breakdown_with(corpus, params, config, state, |n, f| {
        exec::chunk_map_seq(n, f)
    })
    .map(|b| b.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Document, TargetKind, Vocabulary};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma};

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn expected_log_matches_hand_computed_psi_differences() {
        let e = dirichlet_expected_log(&[1.0, 1.0]);
        close(e[0], -1.0, 1e-12);
        close(e[1], -1.0, 1e-12);
        let e = dirichlet_expected_log(&[2.0, 2.0]);
        close(e[0], -(0.5 + 1.0 / 3.0), 1e-12);
        let e = dirichlet_expected_log(&[1.0, 2.0, 3.0]);
        close(e[0], -(1.0 + 0.5 + 1.0 / 3.0 + 0.25 + 0.2), 1e-12); // −137/60
        close(e[1], -(0.5 + 1.0 / 3.0 + 0.25 + 0.2), 1e-12); // −77/60
        close(e[2], -(1.0 / 3.0 + 0.25 + 0.2), 1e-12); // −47/60
    }

    #[test]
    fn moments_match_hand_computed_values() {
        let (m, o) = dirichlet_moments(&[1.0, 1.0]);
        close(m[0], 0.5, 1e-15);
        close(o[0][0], 1.0 / 3.0, 1e-12);
        close(o[0][1], 1.0 / 6.0, 1e-12);
        close(o[1][1], 1.0 / 3.0, 1e-12);
        let (m, o) = dirichlet_moments(&[3.0, 1.0]);
        close(m[0], 0.75, 1e-15);
        close(o[0][0], 0.6, 1e-12);

        // Rows of E[θθᵀ] sum to E[θ]; the grand sum is 1 (since Σθ = 1).
        let (m, o) = dirichlet_moments(&[0.7, 2.2, 5.1]);
        for i in 0..3 {
            let row: f64 = o[i].iter().sum();
            close(row, m[i], 1e-12);
        }
        let grand: f64 = o.iter().flatten().sum();
        close(grand, 1.0, 1e-12);
    }

    #[test]
    fn moments_match_monte_carlo_within_three_se() {
        let gamma = [1.3, 2.1, 0.7];
        let n = 100_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let dists: Vec<Gamma<f64>> = gamma.iter().map(|&g| Gamma::new(g, 1.0).unwrap()).collect();
        let (mean, outer) = dirichlet_moments(&gamma);
        let mut acc = vec![vec![0.0f64; 3]; 3];
        let mut acc2 = vec![vec![0.0f64; 3]; 3];
        let mut mean_acc = [0.0f64; 3];
        for _ in 0..n {
            let draws: Vec<f64> = dists.iter().map(|d| d.sample(&mut rng).max(1e-300)).collect();
            let s: f64 = draws.iter().sum();
            let theta: Vec<f64> = draws.iter().map(|x| x / s).collect();
            for i in 0..3 {
                mean_acc[i] += theta[i];
                for j in 0..3 {
                    let p = theta[i] * theta[j];
                    acc[i][j] += p;
                    acc2[i][j] += p * p;
                }
            }
        }
        for i in 0..3 {
            let emp_mean = mean_acc[i] / n as f64;
            assert!((emp_mean - mean[i]).abs() < 0.01);
            for j in 0..3 {
                let emp = acc[i][j] / n as f64;
                let var = acc2[i][j] / n as f64 - emp * emp;
                let se = (var / n as f64).sqrt();
                assert!(
                    (emp - outer[i][j]).abs() <= 3.0 * se,
                    "moment [{i}][{j}]: {emp} vs {} (3se {})",
                    outer[i][j],
                    3.0 * se
                );
            }
        }
    }

    #[test]
    fn gaussian_term_hand_examples() {
        // δ = 1/(2π), y = 0, η = 0: the normalizer and the quadratic cancel.
        let (m, o) = dirichlet_moments(&[1.0, 1.0]);
        let t = gaussian_target_term(0.0, &[0.0, 0.0], 1.0 / LN_2PI.exp(), &m, &o);
        close(t, 0.0, 1e-12);
        // y = 1, η = 0, δ = 1: −½ln(2π) − ½.
        let t = gaussian_target_term(1.0, &[0.0, 0.0], 1.0, &m, &o);
        close(t, -0.5 * LN_2PI - 0.5, 1e-12);
        // γ = (1,1), η = (1,−1), y = 0, δ = 1: quadratic form is
        // 1/3 − 2·(1/6) + 1/3 = 1/3.
        let t = gaussian_target_term(0.0, &[1.0, -1.0], 1.0, &m, &o);
        close(t, -0.5 * LN_2PI - 1.0 / 6.0, 1e-12);
    }

    #[test]
    fn binary_term_hand_example() {
        // γ = (1,1) → E[θ] = (½,½); η = (2,0) → η·E[θ] = 1; y = 1 → ln σ(1).
        let (m, _) = dirichlet_moments(&[1.0, 1.0]);
        let t = binary_target_term(1.0, &[2.0, 0.0], &m);
        close(t, -0.313_261_687_518_222_84, 1e-12);
        // And the complementary label.
        let t0 = binary_target_term(0.0, &[2.0, 0.0], &m);
        close(t0, (1.0 - crate::special::sigmoid(1.0)).ln(), 1e-12);
    }

    // ---- document-level fixtures ----

    fn tiny_corpus(v: usize, docs: &[(&[(usize, u32)], Option<f64>)]) -> Corpus {
        let vocab = Vocabulary::new((0..v).map(|i| format!("w{i}")).collect()).unwrap();
        let kind = if docs.iter().all(|(_, t)| t.is_none()) {
            TargetKind::None
        } else if docs
            .iter()
            .all(|(_, t)| matches!(t, Some(y) if *y == 0.0 || *y == 1.0))
        {
            TargetKind::Binary
        } else {
            TargetKind::Real
        };
        Corpus {
            vocab,
            docs: docs
                .iter()
                .enumerate()
                .map(|(i, (counts, target))| Document {
                    id: format!("d{i}"),
                    counts: counts.to_vec(),
                    target: *target,
                })
                .collect(),
            target_kind: kind,
        }
    }

    fn uniform_params(k: usize, v: usize) -> ModelParams {
        ModelParams {
            beta: vec![vec![1.0 / v as f64; v]; k],
            pi: vec![1.0 / v as f64; v],
            eta: vec![0.0; k],
            delta: 1.0,
        }
    }

    fn random_simplex<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
        let mut x: Vec<f64> = (0..n)
            .map(|_| -(1.0 - rng.random::<f64>()).ln().max(1e-12))
            .collect();
        let s: f64 = x.iter().sum();
        for xi in &mut x {
            *xi /= s;
        }
        x
    }

    #[test]
    fn switch_terms_hand_example() {
        // Three tokens, varphi ≡ 1, p = ½: t_xi = 3 ln ½, h_xi = 0.
        let corpus = tiny_corpus(3, &[(&[(0, 2), (2, 1)], None)]);
        let config = ModelConfig::with_unit_alpha(2, 0.5, TargetKind::None, 0).unwrap();
        let params = uniform_params(2, 3);
        let phi = vec![0.5; 2 * 2];
        let b = elbo_document(
            &corpus.docs[0],
            None,
            &params,
            &config,
            &[1.0, 1.0],
            &phi,
            &[1.0, 1.0, 1.0],
        )
        .unwrap();
        close(b.t_xi_prior, 3.0 * 0.5f64.ln(), 1e-12);
        assert_eq!(b.h_xi, 0.0);
        // p = 1 with varphi ≡ 1: both switch terms vanish exactly.
        let config1 = ModelConfig::with_unit_alpha(2, 1.0, TargetKind::None, 0).unwrap();
        let b1 = elbo_document(
            &corpus.docs[0],
            None,
            &params,
            &config1,
            &[1.0, 1.0],
            &phi,
            &[1.0, 1.0, 1.0],
        )
        .unwrap();
        assert_eq!(b1.t_xi_prior, 0.0);
        assert_eq!(b1.h_xi, 0.0);
    }

    #[test]
    fn single_topic_zeroes_theta_terms() {
        let corpus = tiny_corpus(3, &[(&[(0, 2), (1, 3)], None)]);
        let config = ModelConfig::with_unit_alpha(1, 0.5, TargetKind::None, 0).unwrap();
        let params = uniform_params(1, 3);
        let phi = vec![1.0; 2];
        let b = elbo_document(
            &corpus.docs[0],
            None,
            &params,
            &config,
            &[1.7],
            &phi,
            &[0.4, 0.6, 0.5],
        )
        .unwrap();
        assert_eq!(b.t_z_given_theta, 0.0);
        assert_eq!(b.t_theta_prior, 0.0);
        assert_eq!(b.h_theta, 0.0);
        assert_eq!(b.h_z, 0.0);
    }

    #[test]
    fn p_one_with_interior_varphi_is_negative_infinity() {
        let corpus = tiny_corpus(2, &[(&[(0, 1)], None)]);
        let config = ModelConfig::with_unit_alpha(1, 1.0, TargetKind::None, 0).unwrap();
        let params = uniform_params(1, 2);
        let b = elbo_document(
            &corpus.docs[0],
            None,
            &params,
            &config,
            &[1.0],
            &[1.0],
            &[0.5, 0.5],
        )
        .unwrap();
        assert_eq!(b.t_xi_prior, f64::NEG_INFINITY);
        assert_eq!(b.total, f64::NEG_INFINITY);
        assert_eq!(b.first_non_finite(), Some("t_xi_prior"));
    }

    #[test]
    fn with_switch_pinned_on_background_is_irrelevant() {
        // varphi ≡ 1 routes nothing to π: its value cannot change the bound.
        let corpus = tiny_corpus(3, &[(&[(0, 1), (1, 2)], Some(0.3))]);
        let config = ModelConfig::with_unit_alpha(2, 1.0, TargetKind::Real, 0).unwrap();
        let mut params = uniform_params(2, 3);
        let phi = vec![0.5; 4];
        let varphi = vec![1.0; 3];
        let b1 = elbo_document(
            &corpus.docs[0],
            Some(0.3),
            &params,
            &config,
            &[1.2, 0.8],
            &phi,
            &varphi,
        )
        .unwrap();
        params.pi = vec![0.9, 0.05, 0.05];
        let b2 = elbo_document(
            &corpus.docs[0],
            Some(0.3),
            &params,
            &config,
            &[1.2, 0.8],
            &phi,
            &varphi,
        )
        .unwrap();
        assert_eq!(b1.total, b2.total);
        assert_eq!(b1.t_words, b2.t_words);
    }

    #[test]
    fn entropy_signs_and_negative_kl_on_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..50 {
            let k = rng.random_range(1..=3usize);
            let v = rng.random_range(2..=6usize);
            let mut counts: Vec<(usize, u32)> = Vec::new();
            for t in 0..v {
                if rng.random::<f64>() < 0.7 {
                    counts.push((t, rng.random_range(1..=3u32)));
                }
            }
            if counts.is_empty() {
                continue;
            }
            let corpus = tiny_corpus(v, &[(&counts, None)]);
            let config = ModelConfig::with_unit_alpha(k, 0.4, TargetKind::None, 0).unwrap();
            let mut params = uniform_params(k, v);
            for row in &mut params.beta {
                *row = random_simplex(v, &mut rng);
            }
            params.pi = random_simplex(v, &mut rng);
            let gamma: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 4.0 + 0.2).collect();
            let mut phi = Vec::new();
            for _ in 0..counts.len() {
                phi.extend(random_simplex(k, &mut rng));
            }
            let varphi: Vec<f64> = (0..v).map(|_| rng.random()).collect();
            let b = elbo_document(
                &corpus.docs[0],
                None,
                &params,
                &config,
                &gamma,
                &phi,
                &varphi,
            )
            .unwrap();
            assert!(b.z_entropy() >= 0.0, "trial {trial}: h_z sign");
            assert!(b.xi_entropy() >= 0.0, "trial {trial}: h_xi sign");
            // −KL(q(θ)‖p(θ)) ≤ 0, with a hair of float slack at equality.
            assert!(
                b.t_theta_prior - b.h_theta <= 1e-12,
                "trial {trial}: negative KL violated: {}",
                b.t_theta_prior - b.h_theta
            );
            // Combination identity.
            let rel = (b.total - b.recombined()).abs() / b.total.abs().max(1.0);
            assert!(rel <= 1e-10, "trial {trial}: identity off by {rel}");
        }
    }

    /// Literal per-token transcription of the bound, kept deliberately
    /// independent of the production code path: counts are expanded into a
    /// token list and every sum runs over tokens.
    fn reference_elbo_per_token(
        doc: &Document,
        target: Option<f64>,
        params: &ModelParams,
        config: &ModelConfig,
        gamma: &[f64],
        phi_z: &[f64],
        varphi: &[f64],
    ) -> ElboBreakdown {
        let k = config.k;
        let mut tokens: Vec<(usize, usize)> = Vec::new(); // (term, row index)
        for (row, &(t, c)) in doc.counts.iter().enumerate() {
            for _ in 0..c {
                tokens.push((t, row));
            }
        }
        let g0: f64 = gamma.iter().sum();
        let a: Vec<f64> = gamma.iter().map(|&g| digamma(g) - digamma(g0)).collect();

        let a0: f64 = config.alpha.iter().sum();
        let mut t_theta = ln_gamma(a0);
        for i in 0..k {
            t_theta -= ln_gamma(config.alpha[i]);
            t_theta += (config.alpha[i] - 1.0) * a[i];
        }
        let mut h_theta = ln_gamma(g0);
        for i in 0..k {
            h_theta -= ln_gamma(gamma[i]);
            h_theta += (gamma[i] - 1.0) * a[i];
        }

        let mut t_z = 0.0;
        let mut h_z = 0.0;
        let mut t_words = 0.0;
        let mut t_xi = 0.0;
        let mut h_xi = 0.0;
        for &(term, row) in &tokens {
            let phi = &phi_z[row * k..(row + 1) * k];
            let g = varphi[term];
            for i in 0..k {
                t_z += phi[i] * a[i];
                h_z += xlogx(phi[i]);
                t_words += mul_log(g * phi[i], params.beta[i][term].ln());
            }
            t_words += mul_log(1.0 - g, params.pi[term].ln());
            t_xi += mul_log(g, config.p.ln()) + mul_log(1.0 - g, (1.0 - config.p).ln());
            h_xi += xlogx(g) + xlogx(1.0 - g);
        }

        let t_y = match (target, config.target_kind) {
            (Some(y), TargetKind::Real) => {
                let (m, o) = dirichlet_moments(gamma);
                gaussian_target_term(y, &params.eta, params.delta, &m, &o)
            }
            (Some(y), TargetKind::Binary) => {
                let (m, _) = dirichlet_moments(gamma);
                binary_target_term(y, &params.eta, &m)
            }
            _ => 0.0,
        };
        ElboBreakdown {
            t_theta_prior: t_theta,
            t_z_given_theta: t_z,
            t_y,
            t_xi_prior: t_xi,
            t_words,
            h_theta,
            h_z,
            h_xi,
            total: t_theta + t_z + t_y + t_xi + t_words - h_theta - h_z - h_xi,
        }
    }

    #[test]
    fn per_term_collapse_matches_per_token_transcription() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for trial in 0..200 {
            let k = rng.random_range(1..=3usize);
            let v = rng.random_range(2..=6usize);
            let n_terms = rng.random_range(1..=v);
            let mut term_ids: Vec<usize> = (0..v).collect();
            for i in (1..term_ids.len()).rev() {
                let j = rng.random_range(0..=i);
                term_ids.swap(i, j);
            }
            let counts: Vec<(usize, u32)> = {
                let mut c: Vec<(usize, u32)> = term_ids[..n_terms]
                    .iter()
                    .map(|&t| (t, rng.random_range(1..=3u32)))
                    .collect();
                c.sort_unstable();
                c
            };
            let kind = match trial % 3 {
                0 => TargetKind::Real,
                1 => TargetKind::Binary,
                _ => TargetKind::None,
            };
            let target = match kind {
                TargetKind::Real => Some(rng.random::<f64>() * 4.0 - 2.0),
                TargetKind::Binary => Some(if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 }),
                TargetKind::None => None,
            };
            let corpus = tiny_corpus(v, &[(&counts, target)]);
            let config = ModelConfig::with_unit_alpha(
                k,
                rng.random::<f64>() * 0.9 + 0.05,
                kind,
                0,
            )
            .unwrap();
            let mut params = uniform_params(k, v);
            for row in &mut params.beta {
                *row = random_simplex(v, &mut rng);
            }
            params.pi = random_simplex(v, &mut rng);
            params.eta = (0..k).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            params.delta = rng.random::<f64>() * 1.5 + 0.3;
            let gamma: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 4.0 + 0.2).collect();
            let mut phi = Vec::new();
            for _ in 0..counts.len() {
                phi.extend(random_simplex(k, &mut rng));
            }
            let varphi: Vec<f64> = (0..v).map(|_| rng.random()).collect();

            let fast = elbo_document(
                &corpus.docs[0],
                target,
                &params,
                &config,
                &gamma,
                &phi,
                &varphi,
            )
            .unwrap();
            let slow = reference_elbo_per_token(
                &corpus.docs[0],
                target,
                &params,
                &config,
                &gamma,
                &phi,
                &varphi,
            );
            let pairs = [
                (fast.t_theta_prior, slow.t_theta_prior),
                (fast.t_z_given_theta, slow.t_z_given_theta),
                (fast.t_y, slow.t_y),
                (fast.t_xi_prior, slow.t_xi_prior),
                (fast.t_words, slow.t_words),
                (fast.h_theta, slow.h_theta),
                (fast.h_z, slow.h_z),
                (fast.h_xi, slow.h_xi),
                (fast.total, slow.total),
            ];
            for (i, (a, b)) in pairs.iter().enumerate() {
                let tol = 1e-10 * a.abs().max(1.0);
                assert!(
                    (a - b).abs() <= tol,
                    "trial {trial} field {i}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn corpus_bound_is_additive_and_empty_is_zero() {
        let corpus = tiny_corpus(3, &[(&[(0, 1), (2, 2)], Some(0.7))]);
        let config = ModelConfig::with_unit_alpha(2, 0.3, TargetKind::Real, 0).unwrap();
        let params = uniform_params(2, 3);
        let state = VariationalState::uniform(&corpus, &config);

        let single = elbo_corpus(&corpus, &params, &config, &state).unwrap();
        let doc_b = elbo_document(
            &corpus.docs[0],
            Some(0.7),
            &params,
            &config,
            &state.docs[0].gamma,
            &state.docs[0].phi_z,
            &state.varphi,
        )
        .unwrap();
        assert_eq!(single, doc_b.total);

        // Two identical documents: exactly twice the single-document value.
        let doubled = tiny_corpus(
            3,
            &[(&[(0, 1), (2, 2)], Some(0.7)), (&[(0, 1), (2, 2)], Some(0.7))],
        );
        let state2 = VariationalState::uniform(&doubled, &config);
        let two = elbo_corpus(&doubled, &params, &config, &state2).unwrap();
        assert_eq!(two, 2.0 * single);

        let empty = Corpus {
            vocab: corpus.vocab.clone(),
            docs: vec![],
            target_kind: TargetKind::Real,
        };
        let empty_state = VariationalState {
            docs: vec![],
            varphi: vec![0.5; 3],
        };
        assert_eq!(
            elbo_corpus(&empty, &params, &config, &empty_state).unwrap(),
            0.0
        );
    }

    #[test]
    fn parallel_and_sequential_corpus_bounds_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = 12;
        let k = 3;
        let docs: Vec<(Vec<(usize, u32)>, Option<f64>)> = (0..300)
            .map(|_| {
                let n = rng.random_range(1..=6usize);
                let mut c: Vec<(usize, u32)> = (0..n)
                    .map(|_| (rng.random_range(0..v), rng.random_range(1..=4u32)))
                    .collect();
                c.sort_unstable();
                c.dedup_by(|a, b| {
                    if a.0 == b.0 {
                        b.1 += a.1;
                        true
                    } else {
                        false
                    }
                });
                (c, Some(rng.random::<f64>()))
            })
            .collect();
        let doc_refs: Vec<(&[(usize, u32)], Option<f64>)> =
            docs.iter().map(|(c, t)| (c.as_slice(), *t)).collect();
        let corpus = tiny_corpus(v, &doc_refs);
        let config = ModelConfig::with_unit_alpha(k, 0.25, TargetKind::Real, 0).unwrap();
        let mut params = uniform_params(k, v);
        for row in &mut params.beta {
            *row = random_simplex(v, &mut rng);
        }
        params.pi = random_simplex(v, &mut rng);
        let state = VariationalState::uniform(&corpus, &config);
        let a = elbo_corpus(&corpus, &params, &config, &state).unwrap();
        let b = elbo_corpus_seq(&corpus, &params, &config, &state).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn input_validation_catches_bad_states() {
        let corpus = tiny_corpus(3, &[(&[(0, 1)], None)]);
        let config = ModelConfig::with_unit_alpha(2, 0.5, TargetKind::None, 0).unwrap();
        let params = uniform_params(2, 3);
        let ok_phi = vec![0.5, 0.5];
        // Wrong gamma length.
        assert!(matches!(
            elbo_document(&corpus.docs[0], None, &params, &config, &[1.0], &ok_phi, &[0.5; 3]),
            Err(ElboError::DimMismatch(_))
        ));
        // Nonpositive gamma.
        assert!(matches!(
            elbo_document(
                &corpus.docs[0],
                None,
                &params,
                &config,
                &[1.0, 0.0],
                &ok_phi,
                &[0.5; 3]
            ),
            Err(ElboError::InvalidState(_))
        ));
        // phi row not a simplex.
        assert!(matches!(
            elbo_document(
                &corpus.docs[0],
                None,
                &params,
                &config,
                &[1.0, 1.0],
                &[0.9, 0.3],
                &[0.5; 3]
            ),
            Err(ElboError::InvalidState(_))
        ));
        // varphi out of range.
        assert!(matches!(
            elbo_document(
                &corpus.docs[0],
                None,
                &params,
                &config,
                &[1.0, 1.0],
                &ok_phi,
                &[1.5, 0.5, 0.5]
            ),
            Err(ElboError::InvalidState(_))
        ));
        // Target against a none-target model.
        assert!(matches!(
            elbo_document(
                &corpus.docs[0],
                Some(1.0),
                &params,
                &config,
                &[1.0, 1.0],
                &ok_phi,
                &[0.5; 3]
            ),
            Err(ElboError::InvalidState(_))
        ));
    }

    #[test]
    fn log_zero_with_interior_gate_is_an_error() {
        let corpus = tiny_corpus(2, &[(&[(0, 1)], None)]);
        let config = ModelConfig::with_unit_alpha(1, 0.5, TargetKind::None, 0).unwrap();
        let mut params = uniform_params(1, 2);
        params.beta[0] = vec![0.0, 1.0];
        let err = elbo_document(
            &corpus.docs[0],
            None,
            &params,
            &config,
            &[1.0],
            &[1.0],
            &[0.5, 0.5],
        )
        .unwrap_err();
        assert!(matches!(err, ElboError::LogZeroBeta { topic: 0, term: 0 }));
        // Gate exactly 0 on the topic channel: the zero is never touched.
        let b = elbo_document(
            &corpus.docs[0],
            None,
            &params,
            &config,
            &[1.0],
            &[1.0],
            &[0.0, 0.5],
        )
        .unwrap();
        assert!(b.total.is_finite());

        let mut params = uniform_params(1, 2);
        params.pi = vec![0.0, 1.0];
        let err = elbo_document(
            &corpus.docs[0],
            None,
            &params,
            &config,
            &[1.0],
            &[1.0],
            &[0.5, 0.5],
        )
        .unwrap_err();
        assert!(matches!(err, ElboError::LogZeroPi { term: 0 }));
        // Gate exactly 1: background zero is never touched.
        let b = elbo_document(
            &corpus.docs[0],
            None,
            &params,
            &config,
            &[1.0],
            &[1.0],
            &[1.0, 0.5],
        )
        .unwrap();
        assert!(b.total.is_finite());
    }
}
