//! Multi-stage prompt refinement: classify the error stage, apply cumulative
//! corrections, self-reflect on sufficiency, and (when context is missing)
//! generate and rank clarifying descriptions.

use std::collections::BTreeMap;
use std::sync::Arc;

use futures::stream::{self, StreamExt};

use crate::assets;
use crate::backend::{build_backend, Backend, BackendError};
use crate::core::{
    BackendKind, ChatRequest, CoreError, Description, PhaseFailure, PipelineConfig, PipelineRole,
    PromptRecord, RefinementTrace, SabotageStage, StageOutput, TraceStatus,
};
use crate::harness::clock::{Clock, MonotonicClock};
use crate::metrics::{self, MetricsError};

/// Number of re-asks after the first attempt when a model reply cannot be
/// parsed. Each re-ask appends one stricter instruction line.
pub const MAX_REASKS: u32 = 2;

const CLASSIFY_REASK_LINES: [&str; 2] = [
    "Reply with exactly one digit: 0, 1, 2, or 3.",
    "Your entire reply must be a single digit from 0 to 3, with no other text.",
];

const REFLECT_REASK_LINES: [&str; 2] = [
    "Reply with exactly one word: YES or NO.",
    "Your entire reply must be the single word YES or the single word NO.",
];

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("could not parse a stage digit from classifier reply {0:?}")]
    UnparseableClassification(String),
    #[error("could not parse a YES/NO verdict from reflector reply {0:?}")]
    UnparseableVerdict(String),
    #[error("no backend configured for role {0:?}")]
    MissingBackend(PipelineRole),
    #[error("missing prompt template {0:?}")]
    MissingTemplate(String),
    #[error("unknown post hook {0:?}")]
    UnknownHook(String),
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Hook applied to the final prompt, e.g. appending a verification
/// instruction before the answerer sees it.
pub type PostHook = fn(&str) -> String;

fn verify_claims_hook(prompt: &str) -> String {
    format!(
        "{prompt}\n\nBefore answering, verify each factual claim against \
         reliable knowledge and state any uncertainty explicitly."
    )
}

/// Named hooks that a [`PipelineConfig::post_hook`] may reference.
pub fn hook_registry() -> &'static [(&'static str, PostHook)] {
    &[("verify_claims", verify_claims_hook)]
}

pub fn lookup_hook(name: &str) -> Option<PostHook> {
    hook_registry()
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, f)| *f)
}

/// Extracts the first stage digit (`0`..`3`) from a classifier reply.
pub fn parse_stage_digit(text: &str) -> Option<SabotageStage> {
    text.chars()
        .find(|c| ('0'..='3').contains(c))
        .and_then(|c| SabotageStage::from_digit(c as u8 - b'0').ok())
}

/// Extracts the first YES/NO word (case-insensitive) from a reflector reply.
pub fn parse_yes_no(text: &str) -> Option<bool> {
    let mut word = String::new();
    for c in text.chars().chain(std::iter::once(' ')) {
        if c.is_alphabetic() {
            word.push(c);
            continue;
        }
        if word.eq_ignore_ascii_case("yes") {
            return Some(true);
        }
        if word.eq_ignore_ascii_case("no") {
            return Some(false);
        }
        word.clear();
    }
    None
}

/// Picks the winning description: minimum perplexity, ties broken by the
/// earliest iteration. With ranking disabled the iteration-0 candidate wins
/// regardless of score. Empty input selects nothing.
pub fn select_description(candidates: &[Description], enable_ranking: bool) -> Option<Description> {
    if candidates.is_empty() {
        return None;
    }
    if !enable_ranking {
        return candidates.iter().min_by_key(|c| c.iteration).cloned();
    }
    candidates
        .iter()
        .min_by(|a, b| {
            a.perplexity
                .partial_cmp(&b.perplexity)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.iteration.cmp(&b.iteration))
        })
        .cloned()
}

/// Result of the description-generation loop.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptionOutcome {
    pub candidates: Vec<Description>,
    /// One sufficiency verdict per generated candidate, asked on the prompt
    /// with that candidate appended as context.
    pub verdicts: Vec<bool>,
    /// Non-fatal problems, e.g. a later iteration failing after a usable
    /// candidate already exists.
    pub warnings: Vec<String>,
}

/// The refinement pipeline. Holds one backend per role plus the filled
/// prompt templates; construction validates that every role resolves.
pub struct Pipeline {
    cfg: PipelineConfig,
    backends: BTreeMap<PipelineRole, Arc<dyn Backend>>,
    templates: BTreeMap<String, String>,
    clock: Arc<dyn Clock>,
    hook: Option<(String, PostHook)>,
}

impl Pipeline {
    /// Builds every role backend from the config.
    pub fn new(cfg: PipelineConfig, clock: Arc<dyn Clock>) -> Result<Self, PipelineError> {
        let mut backends = BTreeMap::new();
        for role in PipelineRole::ALL {
            let spec = cfg
                .backends
                .get(&role)
                .ok_or(PipelineError::MissingBackend(role))?;
            backends.insert(role, build_backend(spec)?);
        }
        Pipeline::with_backends(cfg, backends, clock)
    }

    /// Uses pre-built backends (e.g. cache-wrapped ones) instead of
    /// constructing them from the configured backend specs.
    pub fn with_backends(
        cfg: PipelineConfig,
        backends: BTreeMap<PipelineRole, Arc<dyn Backend>>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, PipelineError> {
        if cfg.max_description_iters < 1 {
            return Err(PipelineError::InvalidConfig(
                "max_description_iters must be at least 1".into(),
            ));
        }
        for role in PipelineRole::ALL {
            if !cfg.backends.contains_key(&role) || !backends.contains_key(&role) {
                return Err(PipelineError::MissingBackend(role));
            }
        }
        let mut templates = assets::default_prompt_templates();
        for (key, text) in &cfg.prompt_templates {
            if !text.trim().is_empty() {
                templates.insert(key.clone(), text.clone());
            }
        }
        let hook = match &cfg.post_hook {
            Some(name) => {
                let f = lookup_hook(name).ok_or_else(|| PipelineError::UnknownHook(name.clone()))?;
                Some((name.clone(), f))
            }
            None => None,
        };
        Ok(Pipeline {
            cfg,
            backends,
            templates,
            clock,
            hook,
        })
    }

    /// All-mock pipeline with default flags; the common test setup.
    pub fn mock(clock: Arc<dyn Clock>) -> Result<Self, PipelineError> {
        Pipeline::new(mock_pipeline_config(), clock)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn templates(&self) -> &BTreeMap<String, String> {
        &self.templates
    }

    pub fn backend(&self, role: PipelineRole) -> Result<&Arc<dyn Backend>, PipelineError> {
        self.backends
            .get(&role)
            .ok_or(PipelineError::MissingBackend(role))
    }

    /// Backend call counters per role, for cache and ablation assertions.
    pub fn call_counts(&self) -> BTreeMap<PipelineRole, u64> {
        self.backends
            .iter()
            .map(|(role, b)| (*role, b.calls()))
            .collect()
    }

    fn template(&self, key: &str) -> Result<&str, PipelineError> {
        self.templates
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| PipelineError::MissingTemplate(key.to_string()))
    }

    fn request(&self, role: PipelineRole, user: String) -> Result<ChatRequest, PipelineError> {
        let spec = self
            .cfg
            .backends
            .get(&role)
            .ok_or(PipelineError::MissingBackend(role))?;
        let model = spec.model_name.clone().unwrap_or_else(|| spec.id.clone());
        Ok(ChatRequest::new(model, user))
    }

    /// Asks the classifier for the error stage of `prompt`, re-asking up to
    /// [`MAX_REASKS`] times with stricter instructions on unparseable replies.
    pub async fn classify_stage(&self, prompt: &str) -> Result<SabotageStage, PipelineError> {
        let backend = self.backend(PipelineRole::Classifier)?;
        let mut user = self.template("classify")?.replace("{prompt}", prompt);
        let mut last = String::new();
        for attempt in 0..=MAX_REASKS {
            if attempt > 0 {
                user.push('\n');
                user.push_str(CLASSIFY_REASK_LINES[attempt as usize - 1]);
            }
            let raw = backend
                .complete(&self.request(PipelineRole::Classifier, user.clone())?)
                .await?;
            if let Some(stage) = parse_stage_digit(&raw) {
                return Ok(stage);
            }
            last = raw;
        }
        Err(PipelineError::UnparseableClassification(last))
    }

    /// Runs one correction step through the backend serving `role`. Rule
    /// backends rewrite the raw text directly, so no template is applied.
    async fn correct_once(
        &self,
        role: PipelineRole,
        template_key: &str,
        text: &str,
    ) -> Result<String, PipelineError> {
        let spec = self
            .cfg
            .backends
            .get(&role)
            .ok_or(PipelineError::MissingBackend(role))?;
        let user = if spec.kind == BackendKind::RuleStage1 {
            text.to_string()
        } else {
            self.template(template_key)?.replace("{prompt}", text)
        };
        let backend = self.backend(role)?;
        Ok(backend.complete(&self.request(role, user)?).await?)
    }

    /// Applies corrections cumulatively from stage 1 up to `stage`, each step
    /// feeding the next. Clean input needs none. With multi-stage cleaning
    /// disabled a single combined correction runs instead.
    pub async fn run_corrections(
        &self,
        prompt: &str,
        stage: SabotageStage,
    ) -> Result<Vec<StageOutput>, PipelineError> {
        if stage == SabotageStage::Clean {
            return Ok(Vec::new());
        }
        if !self.cfg.enable_multistage {
            let output = self
                .correct_once(PipelineRole::Stage3, "combined", prompt)
                .await?;
            return Ok(vec![StageOutput { stage, output }]);
        }
        let mut current = prompt.to_string();
        let mut outputs = Vec::new();
        for step in stage.corrections() {
            let (role, key) = match step {
                SabotageStage::Stage1 => (PipelineRole::Stage1, "stage1"),
                SabotageStage::Stage2 => (PipelineRole::Stage2, "stage2"),
                SabotageStage::Stage3 => (PipelineRole::Stage3, "stage3"),
                SabotageStage::Clean => unreachable!("corrections() excludes Clean"),
            };
            current = self.correct_once(role, key, &current).await?;
            outputs.push(StageOutput {
                stage: step,
                output: current.clone(),
            });
        }
        Ok(outputs)
    }

    /// Asks the reflector whether `prompt` is sufficient to answer well
    /// without more context. Re-asks like [`Pipeline::classify_stage`].
    pub async fn check_sufficiency(&self, prompt: &str) -> Result<bool, PipelineError> {
        let backend = self.backend(PipelineRole::Reflector)?;
        let mut user = self.template("reflect")?.replace("{prompt}", prompt);
        let mut last = String::new();
        for attempt in 0..=MAX_REASKS {
            if attempt > 0 {
                user.push('\n');
                user.push_str(REFLECT_REASK_LINES[attempt as usize - 1]);
            }
            let raw = backend
                .complete(&self.request(PipelineRole::Reflector, user.clone())?)
                .await?;
            if let Some(verdict) = parse_yes_no(&raw) {
                return Ok(verdict);
            }
            last = raw;
        }
        Err(PipelineError::UnparseableVerdict(last))
    }

    async fn description_iteration(
        &self,
        prompt: &str,
        previous: &str,
        iteration: u32,
    ) -> Result<(Description, bool), PipelineError> {
        let user = self
            .template("describe")?
            .replace("{candidate}", previous)
            .replace("{prompt}", prompt);
        let describer = self.backend(PipelineRole::Describer)?;
        let text = describer
            .complete(&self.request(PipelineRole::Describer, user)?)
            .await?;
        let scorer = self.backend(PipelineRole::Scorer)?;
        let scores = scorer.score_tokens(&text).await?;
        let perplexity = metrics::perplexity(&scores)?;
        let candidate = Description {
            text,
            perplexity,
            iteration,
        };
        candidate.validate()?;
        let with_context = format!("{prompt}\n\nContext: {}", candidate.text);
        let sufficient = self.check_sufficiency(&with_context).await?;
        Ok((candidate, sufficient))
    }

    /// Iteratively generates clarifying descriptions for `prompt`, scoring
    /// each by perplexity and stopping early once the reflector judges the
    /// prompt-plus-description sufficient. A failure after at least one good
    /// candidate degrades to a warning instead of an error.
    pub async fn generate_descriptions(
        &self,
        prompt: &str,
    ) -> Result<DescriptionOutcome, PipelineError> {
        if !self.cfg.enable_descriptions {
            return Err(PipelineError::InvalidConfig(
                "description generation is disabled".into(),
            ));
        }
        let mut outcome = DescriptionOutcome {
            candidates: Vec::new(),
            verdicts: Vec::new(),
            warnings: Vec::new(),
        };
        let mut previous = String::new();
        for iteration in 0..self.cfg.max_description_iters {
            match self
                .description_iteration(prompt, &previous, iteration)
                .await
            {
                Ok((candidate, sufficient)) => {
                    previous = candidate.text.clone();
                    outcome.candidates.push(candidate);
                    outcome.verdicts.push(sufficient);
                    if sufficient {
                        break;
                    }
                }
                Err(err) if !outcome.candidates.is_empty() => {
                    let warning = format!("description iteration {iteration} failed: {err}");
                    log::warn!("{warning}");
                    outcome.warnings.push(warning);
                    break;
                }
                Err(err) => return Err(err),
            }
        }
        Ok(outcome)
    }

    /// Refines one record end to end, capturing phase timings and any phase
    /// failure in the trace instead of aborting the batch.
    pub async fn refine(&self, record: &PromptRecord) -> RefinementTrace {
        let mut trace = RefinementTrace {
            record_id: record.id.clone(),
            input: record.text.clone(),
            classified_stage: SabotageStage::Clean,
            stage_outputs: Vec::new(),
            sufficiency_verdicts: Vec::new(),
            candidates: Vec::new(),
            selected: None,
            final_prompt: record.text.clone(),
            elapsed_ms: BTreeMap::new(),
            status: TraceStatus::Ok,
            error: None,
            warnings: Vec::new(),
        };
        if let Err(err) = record.validate() {
            return fail(trace, "input", &err.to_string());
        }

        let start = self.clock.now_ms();
        let stage = match self.classify_stage(&record.text).await {
            Ok(stage) => stage,
            Err(err) => return fail(trace, "classify", &err.to_string()),
        };
        trace.classified_stage = stage;
        record_phase(&mut trace, "classify", &self.clock, start);

        let start = self.clock.now_ms();
        match self.run_corrections(&record.text, stage).await {
            Ok(outputs) => trace.stage_outputs = outputs,
            Err(err) => return fail(trace, "correct", &err.to_string()),
        }
        record_phase(&mut trace, "correct", &self.clock, start);
        let corrected = trace
            .stage_outputs
            .last()
            .map(|s| s.output.clone())
            .unwrap_or_else(|| record.text.clone());
        trace.final_prompt = corrected.clone();

        if self.cfg.enable_descriptions {
            let start = self.clock.now_ms();
            let sufficient = match self.check_sufficiency(&corrected).await {
                Ok(v) => v,
                Err(err) => return fail(trace, "reflect", &err.to_string()),
            };
            trace.sufficiency_verdicts.push(sufficient);
            record_phase(&mut trace, "reflect", &self.clock, start);

            if !sufficient {
                let start = self.clock.now_ms();
                let outcome = match self.generate_descriptions(&corrected).await {
                    Ok(o) => o,
                    Err(err) => return fail(trace, "describe", &err.to_string()),
                };
                trace.candidates = outcome.candidates;
                trace.sufficiency_verdicts.extend(outcome.verdicts);
                trace.warnings.extend(outcome.warnings);
                trace.selected = select_description(&trace.candidates, self.cfg.enable_ranking);
                if let Some(selected) = &trace.selected {
                    trace.final_prompt = format!("{corrected}\n\nContext: {}", selected.text);
                }
                record_phase(&mut trace, "describe", &self.clock, start);
            }
        }

        if let Some((_, hook)) = &self.hook {
            let start = self.clock.now_ms();
            trace.final_prompt = hook(&trace.final_prompt);
            record_phase(&mut trace, "hook", &self.clock, start);
        }
        trace
    }

    /// Refines a batch with bounded parallelism. Output order matches input
    /// order and each record's trace is independent of the others, so the
    /// result does not depend on the parallelism setting.
    pub async fn refine_corpus(
        &self,
        records: &[PromptRecord],
        parallelism: usize,
    ) -> Vec<RefinementTrace> {
        let mut indexed: Vec<(usize, RefinementTrace)> =
            stream::iter(records.iter().enumerate().map(|(index, record)| async move {
                (index, self.refine(record).await)
            }))
            .buffer_unordered(parallelism.max(1))
            .collect()
            .await;
        indexed.sort_by_key(|(index, _)| *index);
        indexed.into_iter().map(|(_, trace)| trace).collect()
    }
}

/// Config with every role served by the built-in mock backend.
pub fn mock_pipeline_config() -> PipelineConfig {
    PipelineConfig {
        enable_descriptions: true,
        enable_multistage: true,
        enable_ranking: true,
        max_description_iters: 3,
        backends: PipelineConfig::uniform_backends(&crate::core::BackendSpec::mock("mock")),
        prompt_templates: BTreeMap::new(),
        post_hook: None,
    }
}

fn fail(mut trace: RefinementTrace, phase: &str, message: &str) -> RefinementTrace {
    trace.status = TraceStatus::Failed;
    trace.error = Some(PhaseFailure {
        phase: phase.to_string(),
        message: message.to_string(),
    });
    trace
}

fn record_phase(trace: &mut RefinementTrace, phase: &str, clock: &Arc<dyn Clock>, start: u64) {
    let elapsed = clock.now_ms().saturating_sub(start);
    trace.elapsed_ms.insert(phase.to_string(), elapsed);
}

/// Convenience constructor used by the CLI: mock config refined under a real
/// clock.
pub fn default_clock() -> Arc<dyn Clock> {
    Arc::new(MonotonicClock::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::BackendSpec;
    use crate::harness::clock::FixedClock;

    fn fixed_clock() -> Arc<dyn Clock> {
        Arc::new(FixedClock(0))
    }

    fn mock_pipeline() -> Pipeline {
        Pipeline::mock(fixed_clock()).unwrap()
    }

    fn record(id: &str, text: &str) -> PromptRecord {
        PromptRecord {
            id: id.to_string(),
            text: text.to_string(),
            gold: None,
            stage_label: None,
            dataset: "test".to_string(),
            wellformedness: None,
        }
    }

    #[test]
    fn stage_digit_parses_first_literal() {
        assert_eq!(
            parse_stage_digit("The error stage is 2."),
            Some(SabotageStage::Stage2)
        );
        assert_eq!(parse_stage_digit("0"), Some(SabotageStage::Clean));
        assert_eq!(parse_stage_digit("stage 13"), Some(SabotageStage::Stage1));
        assert_eq!(parse_stage_digit("no digits here"), None);
        assert_eq!(parse_stage_digit("4 5 6"), None);
    }

    #[test]
    fn yes_no_parses_first_word_occurrence() {
        assert_eq!(parse_yes_no("no, a definition is needed"), Some(false));
        assert_eq!(parse_yes_no("YES"), Some(true));
        assert_eq!(parse_yes_no("Well... yes, it suffices."), Some(true));
        assert_eq!(parse_yes_no("nothing yes"), Some(true));
        assert_eq!(parse_yes_no("maybe"), None);
    }

    #[test]
    fn selection_prefers_min_perplexity_then_earliest() {
        let cands = vec![
            Description {
                text: "a".into(),
                perplexity: 8.1,
                iteration: 0,
            },
            Description {
                text: "b".into(),
                perplexity: 5.2,
                iteration: 1,
            },
            Description {
                text: "c".into(),
                perplexity: 5.2,
                iteration: 2,
            },
        ];
        let selected = select_description(&cands, true).unwrap();
        assert_eq!(selected.iteration, 1);
        let first = select_description(&cands, false).unwrap();
        assert_eq!(first.iteration, 0);
        assert_eq!(select_description(&[], true), None);
    }

    #[tokio::test]
    async fn classifies_by_damage_severity() {
        let p = mock_pipeline();
        assert_eq!(
            p.classify_stage("What is the capital of France?").await.unwrap(),
            SabotageStage::Clean
        );
        assert_eq!(
            p.classify_stage("what is the caPital of fRAnce?").await.unwrap(),
            SabotageStage::Stage1
        );
        assert_eq!(
            p.classify_stage("what is a GAM model").await.unwrap(),
            SabotageStage::Stage2
        );
        assert_eq!(
            p.classify_stage("Tell me about transformers").await.unwrap(),
            SabotageStage::Stage3
        );
    }

    #[tokio::test]
    async fn corrections_accumulate_through_the_stages() {
        let p = mock_pipeline();
        assert!(p
            .run_corrections("clean text", SabotageStage::Clean)
            .await
            .unwrap()
            .is_empty());

        let outputs = p
            .run_corrections("what is a GAM model", SabotageStage::Stage2)
            .await
            .unwrap();
        assert_eq!(outputs.len(), 2);
        assert_eq!(outputs[0].stage, SabotageStage::Stage1);
        assert_eq!(outputs[0].output, "What is a GAM model?");
        assert_eq!(outputs[1].stage, SabotageStage::Stage2);
        assert_eq!(outputs[1].output, "What is a GAN model?");

        let outputs = p
            .run_corrections("Tell me about transformers", SabotageStage::Stage3)
            .await
            .unwrap();
        assert_eq!(outputs.len(), 3);
        assert_eq!(
            outputs[2].output,
            "Can you explain how Transformer-based neural networks work?"
        );
    }

    #[tokio::test]
    async fn multistage_off_issues_one_combined_call() {
        let mut cfg = mock_pipeline_config();
        cfg.enable_multistage = false;
        let p = Pipeline::new(cfg, fixed_clock()).unwrap();
        let outputs = p
            .run_corrections("what is a GAM model", SabotageStage::Stage2)
            .await
            .unwrap();
        assert_eq!(outputs.len(), 1);
        assert_eq!(outputs[0].stage, SabotageStage::Stage2);
        assert_eq!(outputs[0].output, "What is a GAN model?");
    }

    #[tokio::test]
    async fn sufficiency_follows_rare_term_presence() {
        let p = mock_pipeline();
        assert!(p
            .check_sufficiency("What is the capital of France?")
            .await
            .unwrap());
        assert!(!p.check_sufficiency("What is a ViT?").await.unwrap());
        assert!(p
            .check_sufficiency(
                "What is a ViT?\n\nContext: ViT, or Vision Transformer, is a deep \
                 learning model used for image recognition tasks."
            )
            .await
            .unwrap());
    }

    #[tokio::test]
    async fn descriptions_stop_when_sufficient() {
        let p = mock_pipeline();
        let outcome = p.generate_descriptions("What is a ViT?").await.unwrap();
        assert_eq!(outcome.candidates.len(), 1);
        assert!(outcome.candidates[0].text.contains("Vision Transformer"));
        assert_eq!(outcome.verdicts, vec![true]);
        assert!(outcome.warnings.is_empty());
    }

    #[tokio::test]
    async fn descriptions_iterate_until_expansion_appears() {
        let p = mock_pipeline();
        let outcome = p
            .generate_descriptions("How do I use QLoRA for fine-tuning?")
            .await
            .unwrap();
        assert_eq!(outcome.candidates.len(), 2);
        assert_eq!(outcome.verdicts, vec![false, true]);
        assert!(outcome.candidates[1]
            .text
            .to_lowercase()
            .contains("quantized low-rank"));
        assert!(
            outcome.candidates[1].perplexity < outcome.candidates[0].perplexity,
            "the fuller description should score as more fluent"
        );
    }

    #[tokio::test]
    async fn iteration_cap_truncates_the_loop() {
        let mut cfg = mock_pipeline_config();
        cfg.max_description_iters = 1;
        let p = Pipeline::new(cfg, fixed_clock()).unwrap();
        let outcome = p
            .generate_descriptions("How do I use QLoRA for fine-tuning?")
            .await
            .unwrap();
        assert_eq!(outcome.candidates.len(), 1);
        assert_eq!(outcome.verdicts, vec![false]);
    }

    #[tokio::test]
    async fn sufficient_prompt_skips_description_machinery() {
        let p = mock_pipeline();
        let trace = p.refine(&record("r1", "what is the caPital of fRAnce?")).await;
        assert_eq!(trace.status, TraceStatus::Ok);
        assert_eq!(trace.classified_stage, SabotageStage::Stage1);
        assert_eq!(trace.final_prompt, "What is the capital of France?");
        assert_eq!(trace.sufficiency_verdicts, vec![true]);
        assert!(trace.candidates.is_empty());
        assert!(trace.selected.is_none());
        assert_eq!(p.call_counts()[&PipelineRole::Describer], 0);
        assert_eq!(p.call_counts()[&PipelineRole::Scorer], 0);
    }

    #[tokio::test]
    async fn insufficient_prompt_gains_appended_context() {
        let p = mock_pipeline();
        let trace = p.refine(&record("r2", "what is a ViT")).await;
        assert_eq!(trace.status, TraceStatus::Ok);
        assert_eq!(trace.stage_outputs.last().unwrap().output, "What is a ViT?");
        assert_eq!(trace.sufficiency_verdicts, vec![false, true]);
        assert_eq!(trace.candidates.len(), 1);
        let selected = trace.selected.as_ref().unwrap();
        assert_eq!(
            trace.final_prompt,
            format!("What is a ViT?\n\nContext: {}", selected.text)
        );
        assert!(selected.text.contains("Vision Transformer"));
    }

    #[tokio::test]
    async fn disabling_descriptions_skips_reflection_entirely() {
        let mut cfg = mock_pipeline_config();
        cfg.enable_descriptions = false;
        let p = Pipeline::new(cfg, fixed_clock()).unwrap();
        let trace = p.refine(&record("r3", "what is a ViT")).await;
        assert_eq!(trace.status, TraceStatus::Ok);
        assert_eq!(trace.final_prompt, "What is a ViT?");
        assert!(trace.sufficiency_verdicts.is_empty());
        assert!(trace.candidates.is_empty());
        assert!(trace.selected.is_none());
        assert_eq!(p.call_counts()[&PipelineRole::Reflector], 0);
        assert_eq!(p.call_counts()[&PipelineRole::Describer], 0);
    }

    #[tokio::test]
    async fn ranking_toggle_changes_the_winner() {
        let prompt = "How do I use QLoRA for fine-tuning?";
        let ranked = mock_pipeline().refine(&record("r4", prompt)).await;
        assert_eq!(ranked.candidates.len(), 2);
        assert_eq!(ranked.selected.as_ref().unwrap().iteration, 1);

        let mut cfg = mock_pipeline_config();
        cfg.enable_ranking = false;
        let unranked = Pipeline::new(cfg, fixed_clock())
            .unwrap()
            .refine(&record("r4", prompt))
            .await;
        assert_eq!(unranked.candidates.len(), 2);
        assert_eq!(unranked.selected.as_ref().unwrap().iteration, 0);
    }

    #[tokio::test]
    async fn post_hook_rewrites_the_final_prompt() {
        let mut cfg = mock_pipeline_config();
        cfg.post_hook = Some("verify_claims".to_string());
        let p = Pipeline::new(cfg, fixed_clock()).unwrap();
        let trace = p.refine(&record("r5", "what is the caPital of fRAnce?")).await;
        assert!(trace.final_prompt.starts_with("What is the capital of France?"));
        assert!(trace.final_prompt.contains("verify each factual claim"));
        assert!(trace.elapsed_ms.contains_key("hook"));

        let mut bad = mock_pipeline_config();
        bad.post_hook = Some("nonexistent".to_string());
        assert!(matches!(
            Pipeline::new(bad, fixed_clock()),
            Err(PipelineError::UnknownHook(_))
        ));
    }

    #[tokio::test]
    async fn backend_failure_is_captured_per_trace() {
        let dir = tempfile::tempdir().unwrap();
        let table = dir.path().join("empty.json");
        std::fs::write(&table, r#"{"version":1,"rules":[]}"#).unwrap();
        let mut spec = BackendSpec::mock("empty");
        spec.mock_table = Some(table);
        let mut cfg = mock_pipeline_config();
        cfg.backends = PipelineConfig::uniform_backends(&spec);
        let p = Pipeline::new(cfg, fixed_clock()).unwrap();

        let traces = p
            .refine_corpus(&[record("a", "first"), record("b", "second")], 2)
            .await;
        assert_eq!(traces.len(), 2);
        for trace in &traces {
            assert_eq!(trace.status, TraceStatus::Failed);
            let failure = trace.error.as_ref().unwrap();
            assert_eq!(failure.phase, "classify");
            assert!(failure.message.contains("no mock rule"));
        }
    }

    #[tokio::test]
    async fn batch_output_is_independent_of_parallelism() {
        let records: Vec<PromptRecord> = [
            "what is the caPital of fRAnce?",
            "what is a ViT",
            "what is a GAM model",
            "Tell me about transformers",
            "How do I use QLoRA for fine-tuning?",
        ]
        .iter()
        .enumerate()
        .map(|(i, text)| record(&format!("r{i}"), text))
        .collect();

        let p = mock_pipeline();
        let serial = p.refine_corpus(&records, 1).await;
        let parallel = p.refine_corpus(&records, 4).await;
        let serial_json = serde_json::to_string(&serial).unwrap();
        let parallel_json = serde_json::to_string(&parallel).unwrap();
        assert_eq!(serial_json, parallel_json);
    }

    #[test]
    fn construction_rejects_bad_configs() {
        let mut cfg = mock_pipeline_config();
        cfg.max_description_iters = 0;
        assert!(matches!(
            Pipeline::new(cfg, fixed_clock()),
            Err(PipelineError::InvalidConfig(_))
        ));

        let mut cfg = mock_pipeline_config();
        cfg.backends.remove(&PipelineRole::Scorer);
        assert!(matches!(
            Pipeline::new(cfg, fixed_clock()),
            Err(PipelineError::MissingBackend(PipelineRole::Scorer))
        ));
    }
}
