//! Multi-stage prompt refinement.
//!
//! This crate implements a pipeline that repairs noisy prompts before they
//! reach a language model: it classifies how damaged a prompt is, applies
//! cumulative corrections (punctuation, typographical, semantic), decides
//! via self-reflection whether clarifying context is needed, generates and
//! ranks candidate descriptions by perplexity, and assembles a final prompt.
//! Around the pipeline sit the tools needed to evaluate it end to end:
//!
//! * [`sabotage`] injects reproducible, staged noise into clean corpora and
//!   records a replayable edit log.
//! * [`backend`] abstracts chat-completion backends: an OpenAI-compatible
//!   HTTP client, a deterministic mock driven by a rule table, and a
//!   rule-based stage-1 corrector.
//! * [`metrics`] provides BLEU, ROUGE, a lightweight METEOR, perplexity,
//!   and win-rate, built from scratch so values are bit-reproducible.
//! * [`judge`] scores answers for hallucination and quality with an LLM
//!   judge and runs position-debiased pairwise comparisons.
//! * [`datasets`] loads corpora and builds instruction-tuning pairs whose
//!   corruption is reproducible per record.
//! * [`harness`] runs full experiments (sabotage, refine, answer, judge),
//!   caches backend calls on disk, and emits markdown/CSV reports.
//!
//! Determinism is a design constraint throughout: fixed seeds give
//! byte-identical outputs regardless of batch parallelism, and all random
//! draws go through one documented generator ([`core::seeded_rng`]).

pub mod assets;
pub mod backend;
pub mod core;
pub mod datasets;
pub mod harness;
pub mod judge;
pub mod metrics;
pub mod pipeline;
pub mod sabotage;
