//! Command-line interface: corpus preparation, training, evaluation,
//! prediction, simulation, and numerical self-verification.
//!
//! Conventions shared by every subcommand:
//!
//! * machine-readable output is JSON on standard output; human-readable
//!   reports and progress go to standard error (or to files);
//! * exit code 0 on success, 1 on a domain error (bad input files, numeric
//!   failure, failed verification), 2 on a usage error;
//! * results are deterministic for a fixed config and seed, independent of
//!   the thread count.

mod config;
mod evaluate;
mod prep;
mod simulate;
mod train;
mod verify;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pftopics",
    version,
    about = "Supervised topic modeling with a learned word-relevance switch"
)]
struct Cli {
    /// Cap the worker thread pool (overrides PFTOPICS_THREADS; 0 keeps one
    /// thread per core). Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter and prune a raw corpus, then split it into train/val/test files.
    Prep(prep::PrepArgs),
    /// Fit a model by stochastic gradient ascent on the bound.
    Train(train::TrainArgs),
    /// Score a trained model on a corpus; optionally print a topic report.
    Eval(evaluate::EvalArgs),
    /// Shorthand for `eval --topics N`: print the plain-text topic report.
    Topics(evaluate::EvalArgs),
    /// Predict targets for new documents (one JSON line per document).
    Predict(evaluate::PredictArgs),
    /// Sample a synthetic corpus and its latent assignments from ground truth.
    Simulate(simulate::SimulateArgs),
    /// Run the numerical self-checks: bound, gradients, switch posteriors.
    Verify(verify::VerifyArgs),
}

/// Default number of words per topic when `topics` is used without `--topics`.
const TOPICS_DEFAULT_WORDS: usize = 10;

fn init_threads(flag: Option<usize>) {
    let n = flag.or_else(|| {
        std::env::var("PFTOPICS_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    });
    #[cfg(feature = "parallel")]
    if let Some(n) = n {
        if n > 0 {
            // Fails only if a pool already exists, in which case keep it.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads(cli.threads);
    let result = match cli.command {
        Command::Prep(args) => prep::run(args),
        Command::Train(args) => train::run(args),
        Command::Eval(args) => evaluate::run_eval(args),
        Command::Topics(mut args) => {
            args.topics = args.topics.or(Some(TOPICS_DEFAULT_WORDS));
            evaluate::run_eval(args)
        }
        Command::Predict(args) => evaluate::run_predict(args),
        Command::Simulate(args) => simulate::run(args),
        Command::Verify(args) => verify::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
