//! Corpus ingestion and preprocessing.
//!
//! On-disk layout is two plain-text files:
//!
//! * vocabulary — one term per line, the line number (0-based) is the term id;
//! * documents — one document per line, `doc_id<TAB>target<TAB>id:count id:count …`
//!   where `target` is a decimal number or `-` when absent.
//!
//! The target kind of a corpus is inferred at load time: absent everywhere →
//! no targets, all present and exactly 0/1 → binary, all present otherwise →
//! real. A mix of present and absent targets is rejected.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("vocabulary line {line}: duplicate term {term:?}")]
    DuplicateTerm { line: usize, term: String },
    #[error("vocabulary line {line}: empty term")]
    EmptyTerm { line: usize },
    #[error("documents line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("documents line {line}: term id {id} out of range (vocabulary has {vocab} terms)")]
    TermOutOfRange { line: usize, id: usize, vocab: usize },
    #[error("documents line {line}: count must be ≥ 1")]
    NonPositiveCount { line: usize },
    #[error(
        "mixed target kinds: line {present_line} has a target but line {absent_line} does not"
    )]
    MixedTargets {
        present_line: usize,
        absent_line: usize,
    },
    #[error("invalid split fractions {0:?}: must be positive and sum to 1")]
    BadSplit((f64, f64, f64)),
    #[error("invalid pruning bounds: min_docs {min_docs}, max_doc_frac {max_doc_frac}")]
    BadPruneBounds { min_docs: usize, max_doc_frac: f64 },
    #[error("pruning removed every document")]
    Emptied,
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Whether documents carry real-valued targets, binary targets, or none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Real,
    Binary,
    None,
}

impl std::fmt::Display for TargetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TargetKind::Real => write!(f, "real"),
            TargetKind::Binary => write!(f, "binary"),
            TargetKind::None => write!(f, "none"),
        }
    }
}

/// Term list where the position in the list is the term id.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(terms: Vec<String>) -> Result<Self, CorpusError> {
        if terms.is_empty() {
            return Err(CorpusError::EmptyVocabulary);
        }
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if t.is_empty() {
                return Err(CorpusError::EmptyTerm { line: i + 1 });
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(CorpusError::DuplicateTerm {
                    line: i + 1,
                    term: t.clone(),
                });
            }
        }
        Ok(Self { terms, index })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term(&self, id: usize) -> &str {
        &self.terms[id]
    }

    pub fn id(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }
}

/// A bag-of-words document: distinct term ids with positive counts, sorted by
/// term id, plus an optional prediction target.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    /// `(term_id, count)` pairs, strictly increasing in term id, counts ≥ 1.
    pub counts: Vec<(usize, u32)>,
    pub target: Option<f64>,
}

impl Document {
    /// Total token count N.
    pub fn num_tokens(&self) -> u64 {
        self.counts.iter().map(|&(_, c)| c as u64).sum()
    }

    /// Number of distinct terms.
    pub fn num_terms(&self) -> usize {
        self.counts.len()
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub docs: Vec<Document>,
    pub target_kind: TargetKind,
}

/// Result of a vocabulary-reducing pass (`prune_vocabulary`,
/// `remove_stopwords`): the rebuilt corpus plus what fell away.
#[derive(Debug)]
pub struct PruneOutcome {
    pub corpus: Corpus,
    pub removed_terms: usize,
    pub dropped_docs: usize,
}

impl Corpus {
    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn num_terms(&self) -> usize {
        self.vocab.len()
    }

    /// Document frequency of every term: number of documents the term occurs in.
    pub fn document_frequencies(&self) -> Vec<usize> {
        let mut df = vec![0usize; self.vocab.len()];
        for d in &self.docs {
            for &(t, _) in &d.counts {
                df[t] += 1;
            }
        }
        df
    }
}

/// Read a vocabulary file (one term per line; line number = id).
pub fn load_vocab(path: &Path) -> Result<Vocabulary, CorpusError> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    parse_vocab(BufReader::new(f), path)
}

fn parse_vocab<R: BufRead>(reader: R, path: &Path) -> Result<Vocabulary, CorpusError> {
    let mut terms = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| io_err(path, e))?;
        terms.push(line.trim_end_matches('\r').to_string());
    }
    Vocabulary::new(terms)
}

/// Load a corpus from a vocabulary file and a documents file.
pub fn load_corpus(vocab_path: &Path, docs_path: &Path) -> Result<Corpus, CorpusError> {
    let vocab = load_vocab(vocab_path)?;
    let f = fs::File::open(docs_path).map_err(|e| io_err(docs_path, e))?;
    let (docs, target_kind) = parse_docs(BufReader::new(f), &vocab, docs_path)?;
    Ok(Corpus {
        vocab,
        docs,
        target_kind,
    })
}

/// Parse the documents format against a fixed vocabulary; infers target kind.
pub fn parse_docs<R: BufRead>(
    reader: R,
    vocab: &Vocabulary,
    path: &Path,
) -> Result<(Vec<Document>, TargetKind), CorpusError> {
    let v = vocab.len();
    let mut docs = Vec::new();
    let mut first_present: Option<usize> = None;
    let mut first_absent: Option<usize> = None;
    let mut all_binary = true;

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            return Err(CorpusError::Malformed {
                line: lineno,
                msg: "empty line".into(),
            });
        }
        let mut fields = line.splitn(3, '\t');
        let (id, target_str, rest) = match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(CorpusError::Malformed {
                    line: lineno,
                    msg: "expected doc_id<TAB>target<TAB>term:count …".into(),
                })
            }
        };
        if id.is_empty() {
            return Err(CorpusError::Malformed {
                line: lineno,
                msg: "empty document id".into(),
            });
        }

        let target = if target_str == "-" {
            first_absent.get_or_insert(lineno);
            None
        } else {
            let y: f64 = target_str.parse().map_err(|_| CorpusError::Malformed {
                line: lineno,
                msg: format!("unparseable target {target_str:?}"),
            })?;
            if !y.is_finite() {
                return Err(CorpusError::Malformed {
                    line: lineno,
                    msg: format!("non-finite target {target_str:?}"),
                });
            }
            first_present.get_or_insert(lineno);
            if y != 0.0 && y != 1.0 {
                all_binary = false;
            }
            Some(y)
        };

        if let (Some(p), Some(a)) = (first_present, first_absent) {
            return Err(CorpusError::MixedTargets {
                present_line: p,
                absent_line: a,
            });
        }

        let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
        for pair in rest.split_whitespace() {
            let (t, c) = pair.split_once(':').ok_or_else(|| CorpusError::Malformed {
                line: lineno,
                msg: format!("expected term:count, got {pair:?}"),
            })?;
            let t: usize = t.parse().map_err(|_| CorpusError::Malformed {
                line: lineno,
                msg: format!("unparseable term id {t:?}"),
            })?;
            let c: u64 = c.parse().map_err(|_| CorpusError::Malformed {
                line: lineno,
                msg: format!("unparseable count {c:?}"),
            })?;
            if t >= v {
                return Err(CorpusError::TermOutOfRange {
                    line: lineno,
                    id: t,
                    vocab: v,
                });
            }
            if c == 0 {
                return Err(CorpusError::NonPositiveCount { line: lineno });
            }
            *counts.entry(t).or_insert(0) += c;
        }
        if counts.is_empty() {
            return Err(CorpusError::Malformed {
                line: lineno,
                msg: "document has no tokens".into(),
            });
        }
        let counts: Vec<(usize, u32)> = counts
            .into_iter()
            .map(|(t, c)| {
                u32::try_from(c)
                    .map(|c| (t, c))
                    .map_err(|_| CorpusError::Malformed {
                        line: lineno,
                        msg: format!("count for term {t} overflows"),
                    })
            })
            .collect::<Result<_, _>>()?;

        docs.push(Document {
            id: id.to_string(),
            counts,
            target,
        });
    }

    let target_kind = if first_present.is_some() {
        if all_binary {
            TargetKind::Binary
        } else {
            TargetKind::Real
        }
    } else {
        TargetKind::None
    };
    Ok((docs, target_kind))
}

/// Write the vocabulary file (one term per line).
pub fn save_vocab(vocab: &Vocabulary, path: &Path) -> Result<(), CorpusError> {
    let mut out = String::new();
    for t in vocab.terms() {
        out.push_str(t);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Write the documents file. Targets use Rust's shortest round-trip float
/// formatting, so `load → save → load` reproduces counts and targets exactly.
pub fn save_docs(docs: &[Document], path: &Path) -> Result<(), CorpusError> {
    let f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for d in docs {
        let target = match d.target {
            Some(y) => format!("{y}"),
            None => "-".to_string(),
        };
        write!(w, "{}\t{}\t", d.id, target).map_err(|e| io_err(path, e))?;
        for (i, &(t, c)) in d.counts.iter().enumerate() {
            if i > 0 {
                w.write_all(b" ").map_err(|e| io_err(path, e))?;
            }
            write!(w, "{t}:{c}").map_err(|e| io_err(path, e))?;
        }
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Rebuild a corpus keeping only the term ids in `keep` (sorted ascending).
/// Documents left without tokens are dropped and counted.
fn project_vocabulary(corpus: &Corpus, keep: &[usize]) -> Result<PruneOutcome, CorpusError> {
    let mut remap = vec![usize::MAX; corpus.vocab.len()];
    let mut terms = Vec::with_capacity(keep.len());
    for (new_id, &old_id) in keep.iter().enumerate() {
        remap[old_id] = new_id;
        terms.push(corpus.vocab.term(old_id).to_string());
    }
    let vocab = Vocabulary::new(terms)?;
    let mut docs = Vec::with_capacity(corpus.docs.len());
    let mut dropped = 0usize;
    for d in &corpus.docs {
        let counts: Vec<(usize, u32)> = d
            .counts
            .iter()
            .filter(|&&(t, _)| remap[t] != usize::MAX)
            .map(|&(t, c)| (remap[t], c))
            .collect();
        if counts.is_empty() {
            dropped += 1;
        } else {
            docs.push(Document {
                id: d.id.clone(),
                counts,
                target: d.target,
            });
        }
    }
    if docs.is_empty() {
        return Err(CorpusError::Emptied);
    }
    Ok(PruneOutcome {
        corpus: Corpus {
            vocab,
            docs,
            target_kind: corpus.target_kind,
        },
        removed_terms: corpus.vocab.len() - keep.len(),
        dropped_docs: dropped,
    })
}

/// Remove terms by document frequency: a term survives iff
/// `min_docs ≤ df ≤ max_doc_frac·M` (boundary equality keeps the term).
/// Dropping emptied documents shrinks M, which can disqualify further terms,
/// so the pass iterates to a fixed point; the returned corpus is invariant
/// under a second prune with the same bounds.
pub fn prune_vocabulary(
    corpus: &Corpus,
    min_docs: usize,
    max_doc_frac: f64,
) -> Result<PruneOutcome, CorpusError> {
    if !(max_doc_frac > 0.0 && max_doc_frac <= 1.0) {
        return Err(CorpusError::BadPruneBounds {
            min_docs,
            max_doc_frac,
        });
    }
    let mut current = corpus.clone();
    let mut removed_total = 0usize;
    let mut dropped_total = 0usize;
    loop {
        let df = current.document_frequencies();
        let m = current.num_docs() as f64;
        // The +1e-9 absorbs 1-ulp error in the product when df equals the
        // boundary exactly; it is far below the 1-document quantum.
        let keep: Vec<usize> = (0..current.vocab.len())
            .filter(|&t| df[t] >= min_docs && (df[t] as f64) <= max_doc_frac * m + 1e-9)
            .collect();
        if keep.len() == current.vocab.len() {
            return Ok(PruneOutcome {
                corpus: current,
                removed_terms: removed_total,
                dropped_docs: dropped_total,
            });
        }
        let step = project_vocabulary(&current, &keep)?;
        removed_total += step.removed_terms;
        dropped_total += step.dropped_docs;
        current = step.corpus;
        if step.dropped_docs == 0 {
            // M unchanged and surviving dfs unchanged: already a fixed point.
            return Ok(PruneOutcome {
                corpus: current,
                removed_terms: removed_total,
                dropped_docs: dropped_total,
            });
        }
    }
}

/// Remove every vocabulary term present in `stopwords`; emptied documents are
/// dropped and counted. Stop-list entries absent from the vocabulary are
/// ignored.
pub fn remove_stopwords(
    corpus: &Corpus,
    stopwords: &HashSet<String>,
) -> Result<PruneOutcome, CorpusError> {
    let keep: Vec<usize> = (0..corpus.vocab.len())
        .filter(|&t| !stopwords.contains(corpus.vocab.term(t)))
        .collect();
    if keep.is_empty() {
        return Err(CorpusError::EmptyVocabulary);
    }
    project_vocabulary(corpus, &keep)
}

/// Load a stop-list file: one term per line.
pub fn load_stoplist(path: &Path) -> Result<HashSet<String>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

/// Deterministically split a corpus into train/validation/test parts.
///
/// Document indices are shuffled under `seed`, then cut into contiguous
/// slices: validation and test take `floor(fraction·M)` documents each and
/// the remainder goes to train.
pub fn split_corpus(
    corpus: &Corpus,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus), CorpusError> {
    let (ft, fv, fe) = fractions;
    let sum = ft + fv + fe;
    if !(ft > 0.0 && fv > 0.0 && fe > 0.0 && (sum - 1.0).abs() <= 1e-9) {
        return Err(CorpusError::BadSplit(fractions));
    }
    let m = corpus.num_docs();
    // floor(f·M) with a nudge well under the 1/M quantum, so that an exact
    // integer product cannot round down through 1-ulp float error.
    let n_val = (fv * m as f64 + 1e-9).floor() as usize;
    let n_test = (fe * m as f64 + 1e-9).floor() as usize;
    let n_train = m - n_val - n_test;

    let mut idx: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);

    let take = |range: std::ops::Range<usize>| -> Corpus {
        Corpus {
            vocab: corpus.vocab.clone(),
            docs: idx[range].iter().map(|&i| corpus.docs[i].clone()).collect(),
            target_kind: corpus.target_kind,
        }
    };
    Ok((
        take(0..n_train),
        take(n_train..n_train + n_val),
        take(n_train + n_val..m),
    ))
}
