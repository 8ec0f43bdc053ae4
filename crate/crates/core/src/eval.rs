//! Prediction metrics, topic-quality scores, and human-readable reports.

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Corpus, Vocabulary};
use crate::model::ModelParams;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("labels must be 0 or 1, got {0}")]
    BadLabel(f64),
    #[error("AUC needs both classes, got only label {0}")]
    SingleClass(f64),
    #[error("no topic had two or more scoreable words")]
    NoScoreableTopics,
    #[error("top_n must be at least 2")]
    BadTopN,
}

/// Root mean squared error.
pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64, EvalError> {
    if predictions.len() != targets.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), targets.len()));
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sum / predictions.len() as f64).sqrt())
}

/// Area under the ROC curve via the Mann–Whitney statistic with average
/// ranks, so tied scores contribute half a concordant pair.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
        return Err(EvalError::BadLabel(bad));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass(if n_pos == 0 { 0.0 } else { 1.0 }));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    // Average ranks over tie groups (ranks are 1-based).
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1.0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Fraction of vocabulary words whose switch posterior is strictly above the
/// threshold.
pub fn relevant_fraction(varphi: &[f64], threshold: f64) -> f64 {
    if varphi.is_empty() {
        return 0.0;
    }
    varphi.iter().filter(|&&x| x > threshold).count() as f64 / varphi.len() as f64
}

/// Σ_w min(max_k β_kw, π_w): how much probability mass the topic and
/// background channels place on the same words. 0 means perfectly separated
/// supports; it shrinks as the switch prior pushes the channels apart.
pub fn support_overlap(beta: &[Vec<f64>], pi: &[f64]) -> f64 {
    pi.iter()
        .enumerate()
        .map(|(w, &pw)| {
            let top = beta.iter().map(|row| row[w]).fold(0.0f64, f64::max);
            top.min(pw)
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct CoherenceOptions {
    /// Words per topic entering the score.
    pub top_n: usize,
    /// Normalize each pair's score by −ln p(both), mapping it into [−1, 1].
    pub npmi: bool,
}

impl Default for CoherenceOptions {
    fn default() -> Self {
        CoherenceOptions {
            top_n: 50,
            npmi: false,
        }
    }
}

const COHERENCE_EPS: f64 = 1e-12;

/// Document-frequency bitsets: one bit per reference document, per word.
fn presence_bitsets(reference: &Corpus) -> Vec<Vec<u64>> {
    let v = reference.vocab.len();
    let blocks = reference.docs.len().div_ceil(64);
    let mut bits = vec![vec![0u64; blocks]; v];
    for (d, doc) in reference.docs.iter().enumerate() {
        for &(t, _) in &doc.counts {
            bits[t][d / 64] |= 1u64 << (d % 64);
        }
    }
    bits
}

fn popcount(bits: &[u64]) -> u32 {
    bits.iter().map(|b| b.count_ones()).sum()
}

fn co_popcount(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones()).sum()
}

/// Mean pairwise PMI (or NPMI) of each topic's top words, measured on a
/// reference corpus, averaged over topics.
///
/// Per topic the `top_n` highest-β words are taken (ties broken toward the
/// lower vocabulary index); words absent from every reference document are
/// skipped, pairs of present words are scored, and the sum is normalized by
/// the number of taken pairs. Topics with fewer than two present words are
/// skipped; if every topic is skipped that is an error.
pub fn topic_coherence(
    beta: &[Vec<f64>],
    reference: &Corpus,
    opts: &CoherenceOptions,
) -> Result<f64, EvalError> {
    if opts.top_n < 2 {
        return Err(EvalError::BadTopN);
    }
    if reference.docs.is_empty() {
        return Err(EvalError::Empty);
    }
    let n_docs = reference.docs.len() as f64;
    let bits = presence_bitsets(reference);
    let df: Vec<u32> = bits.iter().map(|b| popcount(b)).collect();

    let mut topic_scores = Vec::new();
    for row in beta {
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .expect("finite beta")
                .then(a.cmp(&b))
        });
        let taken = &idx[..opts.top_n.min(idx.len())];
        let scoreable: Vec<usize> = taken.iter().copied().filter(|&w| df[w] > 0).collect();
        if scoreable.len() < 2 {
            continue;
        }
        let mut sum = 0.0;
        for (a, &wi) in scoreable.iter().enumerate() {
            for &wj in &scoreable[a + 1..] {
                let p_i = df[wi] as f64 / n_docs;
                let p_j = df[wj] as f64 / n_docs;
                let p_ij = co_popcount(&bits[wi], &bits[wj]) as f64 / n_docs;
                let pmi = ((p_ij + COHERENCE_EPS) / (p_i * p_j)).ln();
                sum += if opts.npmi {
                    let denom = -(p_ij + COHERENCE_EPS).ln();
                    if denom <= 0.0 {
                        0.0
                    } else {
                        pmi / denom
                    }
                } else {
                    pmi
                };
            }
        }
        let n = taken.len() as f64;
        topic_scores.push(sum * 2.0 / (n * (n - 1.0)));
    }
    if topic_scores.is_empty() {
        return Err(EvalError::NoScoreableTopics);
    }
    Ok(topic_scores.iter().sum::<f64>() / topic_scores.len() as f64)
}

/// One weighted vocabulary entry in a report.
#[derive(Debug, Clone, Serialize)]
pub struct TermWeight {
    pub term: String,
    pub weight: f64,
    pub relevance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TopicSummary {
    pub index: usize,
    pub eta: f64,
    pub terms: Vec<TermWeight>,
}

/// Top words per topic and for the background channel, with each word's
/// switch posterior, plus which topics push the target up and down hardest.
#[derive(Debug, Clone, Serialize)]
pub struct TopicReport {
    pub topics: Vec<TopicSummary>,
    pub background: Vec<TermWeight>,
    pub most_positive_topic: usize,
    pub most_negative_topic: usize,
}

fn top_indices(weights: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| {
        weights[b]
            .partial_cmp(&weights[a])
            .expect("finite weights")
            .then(a.cmp(&b))
    });
    idx.truncate(n);
    idx
}

pub fn topic_report(
    vocab: &Vocabulary,
    params: &ModelParams,
    varphi: &[f64],
    top_n: usize,
) -> TopicReport {
    let describe = |weights: &[f64]| -> Vec<TermWeight> {
        top_indices(weights, top_n)
            .into_iter()
            .map(|w| TermWeight {
                term: vocab.terms()[w].clone(),
                weight: weights[w],
                relevance: varphi[w],
            })
            .collect()
    };
    let topics: Vec<TopicSummary> = params
        .beta
        .iter()
        .enumerate()
        .map(|(index, row)| TopicSummary {
            index,
            eta: params.eta[index],
            terms: describe(row),
        })
        .collect();
    let most_positive_topic = params
        .eta
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite eta"))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let most_negative_topic = params
        .eta
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite eta"))
        .map(|(i, _)| i)
        .unwrap_or(0);
    TopicReport {
        topics,
        background: describe(&params.pi),
        most_positive_topic,
        most_negative_topic,
    }
}

impl std::fmt::Display for TopicReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for t in &self.topics {
            writeln!(f, "topic {:>3}  (eta {:+.4})", t.index, t.eta)?;
            for tw in &t.terms {
                writeln!(
                    f,
                    "    {:<24} beta {:.5}  relevance {:.3}",
                    tw.term, tw.weight, tw.relevance
                )?;
            }
        }
        writeln!(f, "background")?;
        for tw in &self.background {
            writeln!(
                f,
                "    {:<24} pi   {:.5}  relevance {:.3}",
                tw.term, tw.weight, tw.relevance
            )?;
        }
        writeln!(
            f,
            "target pushed up hardest by topic {}, down hardest by topic {}",
            self.most_positive_topic, self.most_negative_topic
        )
    }
}
