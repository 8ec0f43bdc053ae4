//! `verify`: run the numerical self-checks against the brute-force oracles
//! and report pass/fail with the measured margins. Exit code 1 if any check
//! fails.
//!
//! Three suites, mirroring the release checks:
//!
//! 1. **bound** — on random tiny instances with random variational states,
//!    the training objective never exceeds the exact (quadrature-certified)
//!    log likelihood. Gaussian and target-free instances only: the binary
//!    target term is a pointwise plug-in with no such guarantee.
//! 2. **gradients** — the analytic gradient matches central finite
//!    differences on every coordinate of random small problems.
//! 3. **switch posteriors** — disjoint topic/background supports force every
//!    exact switch posterior to exactly 0 or 1; fully overlapping supports
//!    leave at least one entry strictly interior.

use anyhow::{bail, Result};
use clap::Args;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use pftopics::corpus::{Corpus, Document, TargetKind, Vocabulary};
use pftopics::elbo::elbo_document;
use pftopics::inference::gradient_check;
use pftopics::model::{ModelConfig, ModelParams};
use pftopics::oracle::{
    exact_log_likelihood, exact_switch_posterior, random_state, random_tiny_instance,
    TinyInstance, DEFAULT_POINTS_PER_DIM,
};

use crate::config::emit;

/// Slack allowed above the exact log likelihood.
const BOUND_SLACK: f64 = 1e-6;
/// Worst allowed |analytic − numeric| / max(1, |analytic|, |numeric|).
const GRAD_REL_TOL: f64 = 1e-4;

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Random tiny instances for the bound check; the other suites scale
    /// proportionally.
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Serialize)]
struct BoundReport {
    instances: usize,
    /// max(elbo − exact); negative means strictly below everywhere.
    max_gap: f64,
    limit: f64,
    pass: bool,
}

#[derive(Serialize)]
struct GradientReport {
    instances: usize,
    max_rel_err: f64,
    limit: f64,
    pass: bool,
}

#[derive(Serialize)]
struct SwitchReport {
    disjoint_instances: usize,
    hard_entries: usize,
    overlap_instances: usize,
    pass: bool,
}

#[derive(Serialize)]
struct VerifyReport {
    bound: BoundReport,
    gradients: GradientReport,
    switch_posterior: SwitchReport,
    pass: bool,
}

fn check_bound(rng: &mut ChaCha8Rng, instances: usize) -> Result<BoundReport> {
    let kinds = [TargetKind::Real, TargetKind::None];
    let max_attempts = 3 * instances + 30;
    let mut checked = 0;
    let mut attempts = 0;
    let mut max_gap = f64::NEG_INFINITY;
    while checked < instances {
        attempts += 1;
        if attempts > max_attempts {
            bail!(
                "bound suite: only {checked} of {instances} instances passed the \
                 quadrature doubling certificate after {attempts} attempts"
            );
        }
        let inst = random_tiny_instance(rng, &kinds);
        let exact = match exact_log_likelihood(&inst, DEFAULT_POINTS_PER_DIM) {
            Ok(l) => l,
            // This draw failed the doubling certificate; take another.
            Err(_) => continue,
        };
        let doc = inst.document();
        let (gamma, phi, varphi) = random_state(rng, &doc, inst.config.k, inst.params.pi.len());
        let bound = elbo_document(
            &doc,
            inst.target,
            &inst.params,
            &inst.config,
            &gamma,
            &phi,
            &varphi,
        )?
        .total;
        max_gap = max_gap.max(bound - exact);
        checked += 1;
    }
    Ok(BoundReport {
        instances,
        max_gap,
        limit: BOUND_SLACK,
        pass: max_gap <= BOUND_SLACK,
    })
}

fn random_small_corpus(rng: &mut ChaCha8Rng, kind: TargetKind) -> (Corpus, ModelConfig) {
    let k = rng.random_range(1..=3usize);
    let v = rng.random_range(3..=8usize);
    let m = rng.random_range(2..=4usize);
    let vocab = Vocabulary::new((0..v).map(|t| format!("w{t}")).collect()).expect("nonempty");
    let docs = (0..m)
        .map(|d| {
            let t = rng.random_range(1..=v.min(5));
            let mut terms: Vec<usize> = (0..v).collect();
            for i in (1..terms.len()).rev() {
                terms.swap(i, rng.random_range(0..=i));
            }
            let mut counts: Vec<(usize, u32)> = terms[..t]
                .iter()
                .map(|&w| (w, rng.random_range(1..=4u32)))
                .collect();
            counts.sort_unstable();
            let target = match kind {
                TargetKind::Real => Some(rng.random::<f64>() * 4.0 - 2.0),
                TargetKind::Binary => Some(if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 }),
                TargetKind::None => None,
            };
            Document {
                id: format!("d{d}"),
                counts,
                target,
            }
        })
        .collect();
    // Some instances pin the switch prior at 1 to cover the reduced model.
    let p = if rng.random::<f64>() < 0.2 {
        1.0
    } else {
        rng.random::<f64>() * 0.85 + 0.1
    };
    let alpha: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 1.5 + 0.5).collect();
    let config = ModelConfig::new(k, p, alpha, kind, rng.random()).expect("generated config");
    (
        Corpus {
            vocab,
            docs,
            target_kind: kind,
        },
        config,
    )
}

fn check_gradients(rng: &mut ChaCha8Rng, seed: u64, instances: usize) -> Result<GradientReport> {
    let kinds = [TargetKind::Real, TargetKind::Binary, TargetKind::None];
    let mut max_rel_err = 0.0f64;
    for i in 0..instances {
        let (corpus, config) = random_small_corpus(rng, kinds[i % kinds.len()]);
        let err = gradient_check(&corpus, &config, seed.wrapping_add(1000 + i as u64))?;
        max_rel_err = max_rel_err.max(err);
    }
    Ok(GradientReport {
        instances,
        max_rel_err,
        limit: GRAD_REL_TOL,
        pass: max_rel_err <= GRAD_REL_TOL,
    })
}

fn random_disjoint_instance(rng: &mut ChaCha8Rng) -> TinyInstance {
    let k = rng.random_range(1..=3usize);
    let v = rng.random_range(4..=6usize);
    let split = rng.random_range(2..v - 1);
    let positive_simplex = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> {
        let mut x: Vec<f64> = (0..len)
            .map(|_| -(1.0 - rng.random::<f64>()).ln().max(1e-12))
            .collect();
        let s: f64 = x.iter().sum();
        for xi in &mut x {
            *xi /= s;
        }
        x
    };
    // Topics own words [0, split), the background owns [split, v).
    let beta = (0..k)
        .map(|_| {
            let mut row = vec![0.0; v];
            let support = positive_simplex(rng, split);
            row[..split].copy_from_slice(&support);
            row
        })
        .collect();
    let mut pi = vec![0.0; v];
    let support = positive_simplex(rng, v - split);
    pi[split..].copy_from_slice(&support);
    let n = rng.random_range(1..=5usize);
    let tokens: Vec<usize> = (0..n).map(|_| rng.random_range(0..v)).collect();
    let use_target = rng.random::<f64>() < 0.5;
    let kind = if use_target {
        TargetKind::Real
    } else {
        TargetKind::None
    };
    let alpha: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 2.0 + 1.0).collect();
    TinyInstance {
        config: ModelConfig::new(k, rng.random::<f64>() * 0.8 + 0.1, alpha, kind, 0)
            .expect("generated config"),
        params: ModelParams {
            beta,
            pi,
            eta: (0..k).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
            delta: rng.random::<f64>() + 0.3,
        },
        target: if use_target {
            Some(rng.random::<f64>() * 2.0 - 1.0)
        } else {
            None
        },
        tokens,
    }
}

fn check_switch_posteriors(
    rng: &mut ChaCha8Rng,
    disjoint_instances: usize,
    overlap_instances: usize,
) -> Result<SwitchReport> {
    let mut hard_entries = 0;
    let mut pass = true;
    for _ in 0..disjoint_instances {
        let inst = random_disjoint_instance(rng);
        let split = inst
            .params
            .pi
            .iter()
            .position(|&x| x > 0.0)
            .expect("background support is nonempty");
        let posterior = exact_switch_posterior(&inst, DEFAULT_POINTS_PER_DIM)?;
        for (&q, &w) in posterior.iter().zip(&inst.tokens) {
            let expected = if w < split { 1.0 } else { 0.0 };
            if q != expected {
                pass = false;
            }
            hard_entries += 1;
        }
    }

    let kinds = [TargetKind::Real, TargetKind::None];
    let max_attempts = 3 * overlap_instances + 30;
    let mut done = 0;
    let mut attempts = 0;
    while done < overlap_instances {
        attempts += 1;
        if attempts > max_attempts {
            bail!(
                "switch-posterior suite: only {done} of {overlap_instances} overlapping \
                 instances certified after {attempts} attempts"
            );
        }
        let inst = random_tiny_instance(rng, &kinds);
        if inst.tokens.is_empty() {
            continue;
        }
        let posterior = match exact_switch_posterior(&inst, DEFAULT_POINTS_PER_DIM) {
            Ok(p) => p,
            Err(_) => continue,
        };
        if !posterior.iter().any(|&q| q > 0.0 && q < 1.0) {
            pass = false;
        }
        done += 1;
    }
    Ok(SwitchReport {
        disjoint_instances,
        hard_entries,
        overlap_instances,
        pass,
    })
}

pub fn run(args: VerifyArgs) -> Result<()> {
    if args.instances == 0 {
        bail!("--instances must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);

    let bound = check_bound(&mut rng, args.instances)?;
    eprintln!(
        "bound: {} — {} instances, max elbo−exact = {:+.3e} (limit {:+.0e})",
        if bound.pass { "PASS" } else { "FAIL" },
        bound.instances,
        bound.max_gap,
        bound.limit,
    );

    let n_grad = (args.instances / 5).max(3);
    let gradients = check_gradients(&mut rng, args.seed, n_grad)?;
    eprintln!(
        "gradients: {} — {} instances, max relative error = {:.3e} (limit {:.0e})",
        if gradients.pass { "PASS" } else { "FAIL" },
        gradients.instances,
        gradients.max_rel_err,
        gradients.limit,
    );

    let n_disjoint = (args.instances / 8).max(3);
    let n_overlap = (args.instances / 10).max(3);
    let switch_posterior = check_switch_posteriors(&mut rng, n_disjoint, n_overlap)?;
    eprintln!(
        "switch posteriors: {} — {} hard entries over {} disjoint instances all exactly 0/1, \
         {} overlapping instances all interior",
        if switch_posterior.pass { "PASS" } else { "FAIL" },
        switch_posterior.hard_entries,
        switch_posterior.disjoint_instances,
        switch_posterior.overlap_instances,
    );

    let pass = bound.pass && gradients.pass && switch_posterior.pass;
    emit(&VerifyReport {
        bound,
        gradients,
        switch_posterior,
        pass,
    })?;
    if !pass {
        bail!("verification failed");
    }
    Ok(())
}
