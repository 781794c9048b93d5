//! Shared domain types, deterministic seeding, and content hashing.
//!
//! Every type that crosses a module boundary lives here. All of them
//! serialize to snake_case JSON and round-trip losslessly; corpora, traces,
//! and instruction examples are stored as one JSON object per line (JSONL).
//!
//! Randomness is centralized in [`seeded_rng`]: ChaCha8 with a 64-bit seed.
//! The algorithm is pinned on purpose. Golden outputs recorded in tests must
//! survive dependency bumps, so nothing in this crate uses `StdRng` or any
//! other generator whose stream is allowed to change between releases. For
//! the same reason the uniform helpers ([`rng_unit`], [`chance`],
//! [`pick_index`]) are written out here instead of going through
//! distribution crates.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Validation failures for core types.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{field} out of range: {value}")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("{field} must be finite, got {value}")]
    NotFinite { field: &'static str, value: f64 },
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("not a valid stage digit: {0}")]
    BadStageDigit(u8),
    #[error("not a valid stage name: {0}")]
    BadStageName(String),
}

/// Severity of the corruption detected in (or injected into) a prompt.
///
/// Stages are cumulative and totally ordered: `Clean < Stage1 < Stage2 <
/// Stage3`. Stage 1 covers punctuation and capitalization damage, stage 2
/// adds typographical errors, stage 3 adds misused key terms and unclear
/// intent.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum SabotageStage {
    Clean,
    Stage1,
    Stage2,
    Stage3,
}

impl SabotageStage {
    pub const ALL: [SabotageStage; 4] = [
        SabotageStage::Clean,
        SabotageStage::Stage1,
        SabotageStage::Stage2,
        SabotageStage::Stage3,
    ];

    /// Digit used in classifier responses and classify-stage examples.
    pub fn as_digit(self) -> u8 {
        match self {
            SabotageStage::Clean => 0,
            SabotageStage::Stage1 => 1,
            SabotageStage::Stage2 => 2,
            SabotageStage::Stage3 => 3,
        }
    }

    pub fn from_digit(d: u8) -> Result<Self, CoreError> {
        match d {
            0 => Ok(SabotageStage::Clean),
            1 => Ok(SabotageStage::Stage1),
            2 => Ok(SabotageStage::Stage2),
            3 => Ok(SabotageStage::Stage3),
            other => Err(CoreError::BadStageDigit(other)),
        }
    }

    /// Correction stages to execute for a prompt classified at `self`,
    /// ascending. Clean prompts need none.
    pub fn corrections(self) -> Vec<SabotageStage> {
        SabotageStage::ALL
            .iter()
            .copied()
            .filter(|s| *s != SabotageStage::Clean && *s <= self)
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            SabotageStage::Clean => "clean",
            SabotageStage::Stage1 => "stage1",
            SabotageStage::Stage2 => "stage2",
            SabotageStage::Stage3 => "stage3",
        }
    }
}

impl fmt::Display for SabotageStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SabotageStage {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clean" | "0" => Ok(SabotageStage::Clean),
            "stage1" | "1" => Ok(SabotageStage::Stage1),
            "stage2" | "2" => Ok(SabotageStage::Stage2),
            "stage3" | "3" => Ok(SabotageStage::Stage3),
            other => Err(CoreError::BadStageName(other.to_string())),
        }
    }
}

/// One prompt in a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub text: String,
    /// Clean reference text, when known (e.g. before sabotage).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_label: Option<SabotageStage>,
    pub dataset: String,
    /// Quality score in [0, 1]; lower means worse formed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wellformedness: Option<f64>,
}

impl PromptRecord {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.id.is_empty() {
            return Err(CoreError::Empty("id"));
        }
        if self.text.trim().is_empty() {
            return Err(CoreError::Empty("text"));
        }
        if let Some(w) = self.wellformedness {
            check_unit("wellformedness", w)?;
        }
        Ok(())
    }
}

/// A candidate clarifying description produced during refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Description {
    pub text: String,
    /// Perplexity under the scoring backend; strictly positive and finite.
    pub perplexity: f64,
    /// 0-based generation iteration.
    pub iteration: u32,
}

impl Description {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !self.perplexity.is_finite() {
            return Err(CoreError::NotFinite {
                field: "perplexity",
                value: self.perplexity,
            });
        }
        if self.perplexity <= 0.0 {
            return Err(CoreError::OutOfRange {
                field: "perplexity",
                value: self.perplexity,
            });
        }
        Ok(())
    }
}

/// Output of one executed correction stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutput {
    pub stage: SabotageStage,
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Ok,
    Failed,
}

/// Phase tag plus message for a failure captured inside a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseFailure {
    pub phase: String,
    pub message: String,
}

/// Complete record of one refinement run over one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub record_id: String,
    pub input: String,
    pub classified_stage: SabotageStage,
    /// Ordered outputs of the executed correction stages, ascending.
    pub stage_outputs: Vec<StageOutput>,
    /// Reflection verdicts in the order they were asked; the first entry is
    /// the check on the corrected prompt, later entries follow description
    /// iterations.
    pub sufficiency_verdicts: Vec<bool>,
    pub candidates: Vec<Description>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<Description>,
    pub final_prompt: String,
    /// Wall-clock milliseconds per phase (`classify`, `correct`, `reflect`,
    /// `describe`). Zero everywhere under a fixed clock.
    pub elapsed_ms: BTreeMap<String, u64>,
    pub status: TraceStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<PhaseFailure>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RefinementTrace {
    /// Sum of all phase timings.
    pub fn total_elapsed_ms(&self) -> u64 {
        self.elapsed_ms.values().sum()
    }
}

/// Judge scores for one answer; all values in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    /// Hallucination index: 0 means fully factual, 1 means fabricated.
    pub hi: f64,
    /// Contextual quality: 1 means highly relevant and coherent.
    pub cqs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coherence: Option<f64>,
}

impl ScoreCard {
    pub fn validate(&self) -> Result<(), CoreError> {
        check_unit("hi", self.hi)?;
        check_unit("cqs", self.cqs)?;
        if let Some(r) = self.relevance {
            check_unit("relevance", r)?;
        }
        if let Some(c) = self.coherence {
            check_unit("coherence", c)?;
        }
        Ok(())
    }
}

/// Result of a pairwise comparison, from the first answer's perspective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonOutcome {
    Win,
    Loss,
    Tie,
}

impl ComparisonOutcome {
    /// The same comparison seen from the other answer's side.
    pub fn inverted(self) -> Self {
        match self {
            ComparisonOutcome::Win => ComparisonOutcome::Loss,
            ComparisonOutcome::Loss => ComparisonOutcome::Win,
            ComparisonOutcome::Tie => ComparisonOutcome::Tie,
        }
    }
}

/// A single chat-completion request, backend-agnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub user: String,
    /// Sampling temperature in [0, 2]; refinement runs at 0.
    #[serde(default)]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, user: impl Into<String>) -> Self {
        ChatRequest {
            model: model.into(),
            system: None,
            user: user.into(),
            temperature: 0.0,
            max_tokens: None,
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(CoreError::OutOfRange {
                field: "temperature",
                value: self.temperature,
            });
        }
        Ok(())
    }
}

/// One token and its log-probability (always <= 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    pub logprob: f64,
}

impl TokenScore {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !self.logprob.is_finite() {
            return Err(CoreError::NotFinite {
                field: "logprob",
                value: self.logprob,
            });
        }
        if self.logprob > 0.0 {
            return Err(CoreError::OutOfRange {
                field: "logprob",
                value: self.logprob,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Mock,
    RuleStage1,
}

/// Declarative description of a backend. Secrets never appear here:
/// `api_key_env` holds the *name* of an environment variable, and the key it
/// resolves to is never serialized or logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub id: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Mock backends only: path to a rule-table JSON file. Absent means the
    /// built-in default table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_table: Option<PathBuf>,
    /// Maximum concurrent in-flight requests to this backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_flight_cap: Option<usize>,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_retries() -> u32 {
    2
}

impl BackendSpec {
    pub fn mock(id: impl Into<String>) -> Self {
        BackendSpec {
            id: id.into(),
            kind: BackendKind::Mock,
            base_url: None,
            model_name: None,
            api_key_env: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            mock_table: None,
            in_flight_cap: None,
        }
    }

    pub fn rule_stage1(id: impl Into<String>) -> Self {
        BackendSpec {
            kind: BackendKind::RuleStage1,
            ..BackendSpec::mock(id)
        }
    }

    pub fn http(
        id: impl Into<String>,
        base_url: impl Into<String>,
        model_name: impl Into<String>,
    ) -> Self {
        BackendSpec {
            kind: BackendKind::Http,
            base_url: Some(base_url.into()),
            model_name: Some(model_name.into()),
            ..BackendSpec::mock(id)
        }
    }
}

/// Pipeline roles a backend can be bound to.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum PipelineRole {
    Classifier,
    Stage1,
    Stage2,
    Stage3,
    Describer,
    Reflector,
    Scorer,
}

impl PipelineRole {
    pub const ALL: [PipelineRole; 7] = [
        PipelineRole::Classifier,
        PipelineRole::Stage1,
        PipelineRole::Stage2,
        PipelineRole::Stage3,
        PipelineRole::Describer,
        PipelineRole::Reflector,
        PipelineRole::Scorer,
    ];

    /// The correction role for an error stage (stages 1..3 only).
    pub fn for_stage(stage: SabotageStage) -> Option<PipelineRole> {
        match stage {
            SabotageStage::Clean => None,
            SabotageStage::Stage1 => Some(PipelineRole::Stage1),
            SabotageStage::Stage2 => Some(PipelineRole::Stage2),
            SabotageStage::Stage3 => Some(PipelineRole::Stage3),
        }
    }
}

/// Configuration for the refinement pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default = "default_true")]
    pub enable_descriptions: bool,
    #[serde(default = "default_true")]
    pub enable_multistage: bool,
    #[serde(default = "default_true")]
    pub enable_ranking: bool,
    #[serde(default = "default_max_description_iters")]
    pub max_description_iters: u32,
    pub backends: BTreeMap<PipelineRole, BackendSpec>,
    /// Template text per role key (`classify`, `stage1`, `stage2`, `stage3`,
    /// `combined`, `describe`, `reflect`). Empty entries fall back to the
    /// built-in defaults.
    #[serde(default)]
    pub prompt_templates: BTreeMap<String, String>,
    /// Name of a registered hook applied to the final prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_hook: Option<String>,
}

fn default_true() -> bool {
    true
}

fn default_max_description_iters() -> u32 {
    3
}

impl PipelineConfig {
    /// All seven roles bound to clones of one spec.
    pub fn uniform_backends(spec: &BackendSpec) -> BTreeMap<PipelineRole, BackendSpec> {
        PipelineRole::ALL
            .iter()
            .map(|role| (*role, spec.clone()))
            .collect()
    }
}

/// Relative weights for the stage-2 typo operations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypoWeights {
    #[serde(default = "default_w_adjacent")]
    pub adjacent_key: f64,
    #[serde(default = "default_w_transpose")]
    pub transpose: f64,
    #[serde(default = "default_w_delete")]
    pub delete: f64,
    #[serde(default = "default_w_duplicate")]
    pub duplicate: f64,
}

fn default_w_adjacent() -> f64 {
    0.5
}
fn default_w_transpose() -> f64 {
    0.2
}
fn default_w_delete() -> f64 {
    0.15
}
fn default_w_duplicate() -> f64 {
    0.15
}

impl Default for TypoWeights {
    fn default() -> Self {
        TypoWeights {
            adjacent_key: default_w_adjacent(),
            transpose: default_w_transpose(),
            delete: default_w_delete(),
            duplicate: default_w_duplicate(),
        }
    }
}

/// Configuration for the sabotage injectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SabotageConfig {
    #[serde(default)]
    pub seed: u64,
    /// Per-letter probability of flipping case (stage 1).
    #[serde(default = "default_p_case_flip")]
    pub p_case_flip: f64,
    /// Per-character probability of dropping a punctuation mark (stage 1).
    #[serde(default = "default_p_punct_drop")]
    pub p_punct_drop: f64,
    /// Per-word probability of injecting a typo (stage 2).
    #[serde(default = "default_p_typo")]
    pub p_typo: f64,
    #[serde(default)]
    pub typo_ops: TypoWeights,
    /// Canonical term -> corrupted form (stage 3). Keys match whole tokens
    /// case-insensitively. Empty means the built-in default lexicon.
    #[serde(default)]
    pub term_lexicon: BTreeMap<String, String>,
    /// Probability of corrupting each matched term occurrence.
    #[serde(default = "default_p_term")]
    pub p_term: f64,
}

fn default_p_case_flip() -> f64 {
    0.1
}
fn default_p_punct_drop() -> f64 {
    0.5
}
fn default_p_typo() -> f64 {
    0.3
}
fn default_p_term() -> f64 {
    1.0
}

impl Default for SabotageConfig {
    fn default() -> Self {
        SabotageConfig {
            seed: 0,
            p_case_flip: default_p_case_flip(),
            p_punct_drop: default_p_punct_drop(),
            p_typo: default_p_typo(),
            typo_ops: TypoWeights::default(),
            term_lexicon: BTreeMap::new(),
            p_term: default_p_term(),
        }
    }
}

impl SabotageConfig {
    pub fn with_seed(seed: u64) -> Self {
        SabotageConfig {
            seed,
            ..SabotageConfig::default()
        }
    }
}

/// Task tags for instruction-tuning examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    FixPunctuation,
    FixTypos,
    Paraphrase,
    ClassifyStage,
    DescribeTerm,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::FixPunctuation => "fix_punctuation",
            TaskKind::FixTypos => "fix_typos",
            TaskKind::Paraphrase => "paraphrase",
            TaskKind::ClassifyStage => "classify_stage",
            TaskKind::DescribeTerm => "describe_term",
        }
    }
}

/// One instruction-tuning example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionExample {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub task: TaskKind,
}

/// A named corpus on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub name: String,
    pub path: PathBuf,
}

/// One pipeline configuration arm in an ablation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub name: String,
    #[serde(default = "default_true")]
    pub enable_descriptions: bool,
    #[serde(default = "default_true")]
    pub enable_multistage: bool,
    #[serde(default = "default_true")]
    pub enable_ranking: bool,
}

/// Configuration for a full experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpora: Vec<CorpusSpec>,
    pub stages: Vec<SabotageStage>,
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub sabotage: SabotageConfig,
    pub answerer: BackendSpec,
    pub judge: BackendSpec,
    /// Judge template text per key (`hi`, `cqs`, `relevance`, `coherence`,
    /// `pairwise`). Empty entries fall back to the built-in defaults.
    #[serde(default)]
    pub judge_templates: BTreeMap<String, String>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Global seed; each record's sabotage seed is derived from it and the
    /// record id, so corpus order does not matter.
    #[serde(default)]
    pub seed: u64,
    /// Pipeline arms to run. Empty means one arm named `full` with the
    /// pipeline flags as configured.
    #[serde(default)]
    pub ablations: Vec<AblationSpec>,
    /// Report all phase timings as zero; used for byte-identical runs.
    #[serde(default)]
    pub fixed_clock: bool,
}

fn default_parallelism() -> usize {
    4
}

/// One aggregated result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub dataset: String,
    pub stage: SabotageStage,
    pub hi_mean: f64,
    pub cqs_mean: f64,
    /// Win rate of refined answers against original answers. Null on
    /// baseline rows, where the comparison would be self-referential.
    /// Serialized even when absent so CSV columns stay aligned.
    pub wr: Option<f64>,
    pub elapsed_ms_mean: f64,
    pub n: u64,
}

fn check_unit(field: &'static str, value: f64) -> Result<(), CoreError> {
    if !value.is_finite() {
        return Err(CoreError::NotFinite { field, value });
    }
    if !(0.0..=1.0).contains(&value) {
        return Err(CoreError::OutOfRange { field, value });
    }
    Ok(())
}

/// The deterministic generator used for every random draw in this crate:
/// ChaCha8 seeded via `seed_from_u64`. Both the cipher stream and the
/// seed expansion are stable, documented algorithms, so seeded outputs are
/// reproducible across platforms and dependency upgrades.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw in [0, 1) using the top 53 bits of one `next_u64`.
pub fn rng_unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Bernoulli draw. Always consumes exactly one `next_u64`.
pub fn chance(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng_unit(rng) < p
}

/// Uniform index in `0..n`. `n` must be nonzero; callers index small
/// in-memory collections, so the modulo bias is irrelevant next to the
/// stability guarantee.
pub fn pick_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

/// SHA-256 of the input, as 64 lowercase hex characters.
pub fn content_hash(data: impl AsRef<[u8]>) -> String {
    let digest = Sha256::digest(data.as_ref());
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Seed for one record: the global seed XORed with a stable 64-bit prefix
/// of the record id's content hash (big-endian first 8 digest bytes).
/// Depends only on (global seed, id), never on corpus order.
pub fn record_seed(global_seed: u64, id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    let mut prefix = [0u8; 8];
    prefix.copy_from_slice(&digest[..8]);
    global_seed ^ u64::from_be_bytes(prefix)
}
