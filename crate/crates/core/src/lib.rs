//! Supervised topic modeling with a learned word-relevance switch.
//!
//! The model extends supervised LDA with a background word channel: each
//! token carries a Bernoulli switch deciding whether it is emitted from its
//! document's topic mixture or from a shared background distribution. Fitting
//! the switch posterior per vocabulary word concentrates the topics on the
//! words that carry signal for the prediction target, trading a tunable
//! amount of word likelihood for target fidelity.
//!
//! Crate layout:
//!
//! * [`corpus`] — bag-of-words corpora: file formats, vocabulary pruning,
//!   deterministic splits;
//! * [`model`] — model configuration and parameters, the generative sampler,
//!   JSON persistence;
//! * [`elbo`] — the evidence lower bound, term by term, plus the Dirichlet
//!   moment identities it relies on;
//! * [`inference`] — joint stochastic gradient training (ADAM) of model and
//!   variational parameters, held-out inference, prediction;
//! * [`eval`] — topic coherence, RMSE / rank AUC, relevance summaries, topic
//!   reports;
//! * [`oracle`] — exact likelihoods and switch posteriors on tiny instances
//!   by quadrature and enumeration, for verifying the bound;
//! * [`special`] — scalar special functions (digamma, trigamma, ln Γ);
//! * [`exec`] — deterministic chunked execution, parallel when the `parallel`
//!   feature (default) is enabled.
//!
//! Results are bit-reproducible for a fixed seed on a given platform,
//! regardless of thread count.

pub mod corpus;
pub mod elbo;
pub mod eval;
pub mod exec;
pub mod inference;
pub mod model;
pub mod oracle;
pub mod special;
