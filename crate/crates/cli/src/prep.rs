//! `prep`: stop-word removal, document-frequency pruning, and the
//! deterministic train/val/test split, written out as plain files plus a
//! manifest recording exactly how they were produced.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use pftopics::corpus::{
    load_corpus, load_stoplist, prune_vocabulary, remove_stopwords, save_docs, save_vocab,
    split_corpus,
};

use crate::config::{emit, require_path, RunConfig};

#[derive(Debug, Args)]
pub struct PrepArgs {
    /// JSON run-config file; the flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Vocabulary file: one term per line, line number = term id.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Documents file: doc_id<TAB>target<TAB>term:count …  (`-` = no target).
    #[arg(long)]
    pub docs: Option<PathBuf>,
    /// Optional stop-list file: one term per line.
    #[arg(long)]
    pub stoplist: Option<PathBuf>,
    /// Directory receiving vocab.txt, {train,val,test}.docs, manifest.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Drop terms appearing in fewer than this many documents.
    #[arg(long)]
    pub min_docs: Option<usize>,
    /// Drop terms appearing in more than this fraction of documents.
    #[arg(long)]
    pub max_doc_frac: Option<f64>,
    /// Fraction of documents in the training split.
    #[arg(long)]
    pub train_frac: Option<f64>,
    /// Fraction of documents in the validation split.
    #[arg(long)]
    pub val_frac: Option<f64>,
    /// Fraction of documents in the test split.
    #[arg(long)]
    pub test_frac: Option<f64>,
    /// RNG seed for the split shuffle.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct Manifest {
    source_vocab: String,
    source_docs: String,
    stoplist: Option<String>,
    min_docs: usize,
    max_doc_frac: f64,
    fractions: (f64, f64, f64),
    seed: u64,
    target_kind: String,
    vocab_terms: usize,
    stopword_terms_removed: usize,
    pruned_terms_removed: usize,
    dropped_docs: usize,
    train_docs: usize,
    val_docs: usize,
    test_docs: usize,
}

#[derive(Serialize)]
struct PrepSummary {
    v: usize,
    m: usize,
    train: usize,
    val: usize,
    test: usize,
}

pub fn run(args: PrepArgs) -> Result<()> {
    let mut rc = RunConfig::load(args.config.as_deref())?;
    if args.vocab.is_some() {
        rc.vocab = args.vocab;
    }
    if args.docs.is_some() {
        rc.docs = args.docs;
    }
    if args.stoplist.is_some() {
        rc.stoplist = args.stoplist;
    }
    if let Some(v) = args.min_docs {
        rc.min_docs = v;
    }
    if let Some(v) = args.max_doc_frac {
        rc.max_doc_frac = v;
    }
    if let Some(v) = args.train_frac {
        rc.train_frac = v;
    }
    if let Some(v) = args.val_frac {
        rc.val_frac = v;
    }
    if let Some(v) = args.test_frac {
        rc.test_frac = v;
    }
    if let Some(v) = args.seed {
        rc.seed = v;
    }

    let vocab_path = require_path("vocab", &rc.vocab)?;
    let docs_path = require_path("docs", &rc.docs)?;
    let mut corpus = load_corpus(&vocab_path, &docs_path)?;

    let mut stopword_terms_removed = 0;
    let mut dropped_docs = 0;
    if let Some(stop_path) = &rc.stoplist {
        let stops = load_stoplist(stop_path)?;
        let out = remove_stopwords(&corpus, &stops)?;
        stopword_terms_removed = out.removed_terms;
        dropped_docs += out.dropped_docs;
        corpus = out.corpus;
    }
    let pruned = prune_vocabulary(&corpus, rc.min_docs, rc.max_doc_frac)?;
    dropped_docs += pruned.dropped_docs;
    let corpus = pruned.corpus;

    let fractions = (rc.train_frac, rc.val_frac, rc.test_frac);
    let (train, val, test) = split_corpus(&corpus, fractions, rc.seed)?;

    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    save_vocab(&corpus.vocab, &args.out_dir.join("vocab.txt"))?;
    save_docs(&train.docs, &args.out_dir.join("train.docs"))?;
    save_docs(&val.docs, &args.out_dir.join("val.docs"))?;
    save_docs(&test.docs, &args.out_dir.join("test.docs"))?;

    let manifest = Manifest {
        source_vocab: vocab_path.display().to_string(),
        source_docs: docs_path.display().to_string(),
        stoplist: rc.stoplist.as_ref().map(|p| p.display().to_string()),
        min_docs: rc.min_docs,
        max_doc_frac: rc.max_doc_frac,
        fractions,
        seed: rc.seed,
        target_kind: corpus.target_kind.to_string(),
        vocab_terms: corpus.vocab.len(),
        stopword_terms_removed,
        pruned_terms_removed: pruned.removed_terms,
        dropped_docs,
        train_docs: train.num_docs(),
        val_docs: val.num_docs(),
        test_docs: test.num_docs(),
    };
    let manifest_path = args.out_dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", manifest_path.display()))?;

    eprintln!(
        "prep: {} terms, {} documents → train {} / val {} / test {} (dropped {} empty docs)",
        corpus.vocab.len(),
        corpus.num_docs(),
        train.num_docs(),
        val.num_docs(),
        test.num_docs(),
        dropped_docs,
    );
    emit(&PrepSummary {
        v: corpus.vocab.len(),
        m: corpus.num_docs(),
        train: train.num_docs(),
        val: val.num_docs(),
        test: test.num_docs(),
    })
}
