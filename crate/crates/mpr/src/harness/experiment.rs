//! Full experiment runs: sabotage each corpus at each stage, refine under
//! every ablation arm, answer original and refined prompts, judge the
//! answers, and aggregate per-(arm, corpus, stage) report rows.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::assets;
use crate::backend::{build_backend, Backend};
use crate::core::{
    content_hash, AblationSpec, ChatRequest, ComparisonOutcome, ExperimentConfig, PipelineRole,
    PromptRecord, RefinementTrace, ReportRow, SabotageStage, TraceStatus,
};
use crate::datasets::load_corpus;
use crate::harness::cache::CachedBackend;
use crate::harness::clock::{Clock, FixedClock, MonotonicClock};
use crate::harness::report::BASELINE_MODEL;
use crate::harness::HarnessError;
use crate::judge::JudgeClient;
use crate::metrics::win_rate;
use crate::pipeline::Pipeline;
use crate::sabotage::sabotage_records;

/// One refinement trace tagged with the run coordinates it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTrace {
    pub ablation: String,
    pub dataset: String,
    pub stage: SabotageStage,
    pub trace: RefinementTrace,
}

/// Aggregated rows plus everything needed to audit a run.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub rows: Vec<ReportRow>,
    pub traces: Vec<LabeledTrace>,
    /// Calls that reached real backends (cache hits excluded).
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    /// Records that failed refinement or judging; they are excluded from
    /// the aggregates but still counted here.
    pub failures: u64,
}

/// The four configuration arms of the ablation table.
pub fn standard_ablations() -> Vec<AblationSpec> {
    let arm = |name: &str, descriptions: bool, multistage: bool, ranking: bool| AblationSpec {
        name: name.to_string(),
        enable_descriptions: descriptions,
        enable_multistage: multistage,
        enable_ranking: ranking,
    };
    vec![
        arm("full", true, true, true),
        arm("no_descriptions", false, true, true),
        arm("no_multistage", true, false, true),
        arm("no_ranking", true, true, false),
    ]
}

fn merge_templates(
    mut base: BTreeMap<String, String>,
    overrides: &BTreeMap<String, String>,
) -> BTreeMap<String, String> {
    for (key, text) in overrides {
        if !text.trim().is_empty() {
            base.insert(key.clone(), text.clone());
        }
    }
    base
}

/// Stable digest over every template a run depends on; part of each cache
/// key so template edits invalidate stale responses.
fn template_version(cfg: &ExperimentConfig) -> String {
    let prompts = merge_templates(assets::default_prompt_templates(), &cfg.pipeline.prompt_templates);
    let judge = merge_templates(assets::default_judge_templates(), &cfg.judge_templates);
    let mut joined = String::new();
    for (key, text) in prompts.iter().chain(judge.iter()) {
        joined.push_str(key);
        joined.push('\x1f');
        joined.push_str(text);
        joined.push('\x1e');
    }
    content_hash(joined)
}

fn wrap_cached(
    inner: Arc<dyn Backend>,
    cache_dir: Option<&Path>,
    version: &str,
    registry: &mut Vec<Arc<CachedBackend>>,
) -> Result<Arc<dyn Backend>, HarnessError> {
    match cache_dir {
        Some(dir) => {
            let cached = Arc::new(CachedBackend::new(inner, dir, version)?);
            registry.push(cached.clone());
            Ok(cached)
        }
        None => Ok(inner),
    }
}

struct RecordEval {
    trace: RefinementTrace,
    /// (HI, CQS) of the answer to the refined prompt.
    refined: Option<(f64, f64)>,
    /// (HI, CQS) of the answer to the original (corrupted) prompt.
    original: Option<(f64, f64)>,
    outcome: Option<ComparisonOutcome>,
    failed: bool,
}

async fn judge_answers(
    answerer: &Arc<dyn Backend>,
    judge: &JudgeClient,
    answer_model: &str,
    question: &str,
    final_prompt: &str,
) -> Result<((f64, f64), (f64, f64), ComparisonOutcome), HarnessError> {
    let request = |prompt: &str| ChatRequest::new(answer_model.to_string(), prompt.to_string());
    let refined_answer = answerer.complete(&request(final_prompt)).await?;
    let original_answer = answerer.complete(&request(question)).await?;
    let refined = (
        judge.score_hallucination(question, &refined_answer).await?,
        judge.score_quality(question, &refined_answer).await?,
    );
    let original = (
        judge.score_hallucination(question, &original_answer).await?,
        judge.score_quality(question, &original_answer).await?,
    );
    let outcome = judge
        .compare_pair(question, &refined_answer, &original_answer)
        .await?;
    Ok((refined, original, outcome))
}

async fn evaluate_record(
    pipeline: &Pipeline,
    answerer: &Arc<dyn Backend>,
    judge: &JudgeClient,
    answer_model: &str,
    record: &PromptRecord,
) -> RecordEval {
    let trace = pipeline.refine(record).await;
    let mut eval = RecordEval {
        trace,
        refined: None,
        original: None,
        outcome: None,
        failed: false,
    };
    if eval.trace.status == TraceStatus::Failed {
        eval.failed = true;
        return eval;
    }
    match judge_answers(answerer, judge, answer_model, &record.text, &eval.trace.final_prompt).await
    {
        Ok((refined, original, outcome)) => {
            eval.refined = Some(refined);
            eval.original = Some(original);
            eval.outcome = Some(outcome);
        }
        Err(err) => {
            log::warn!("evaluation of record {} failed: {err}", record.id);
            eval.failed = true;
        }
    }
    eval
}

/// Runs the full (ablation x corpus x stage) matrix. Per-record failures
/// are counted and excluded from the aggregates, never fatal; config
/// problems fail fast.
pub async fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    if cfg.parallelism < 1 {
        return Err(HarnessError::InvalidConfig("parallelism must be at least 1".into()));
    }
    if cfg.corpora.is_empty() {
        return Err(HarnessError::InvalidConfig("no corpora configured".into()));
    }
    if cfg.stages.is_empty() {
        return Err(HarnessError::InvalidConfig("no sabotage stages configured".into()));
    }

    let clock: Arc<dyn Clock> = if cfg.fixed_clock {
        Arc::new(FixedClock(0))
    } else {
        Arc::new(MonotonicClock::new())
    };
    let version = template_version(cfg);
    let cache_dir = cfg.cache_dir.as_deref();

    let mut inner_backends: Vec<Arc<dyn Backend>> = Vec::new();
    let mut cached_backends: Vec<Arc<CachedBackend>> = Vec::new();
    let mut role_backends: BTreeMap<PipelineRole, Arc<dyn Backend>> = BTreeMap::new();
    for role in PipelineRole::ALL {
        let spec = cfg.pipeline.backends.get(&role).ok_or_else(|| {
            HarnessError::InvalidConfig(format!("no backend configured for role {role:?}"))
        })?;
        let inner = build_backend(spec)?;
        inner_backends.push(inner.clone());
        role_backends.insert(
            role,
            wrap_cached(inner, cache_dir, &version, &mut cached_backends)?,
        );
    }
    let answerer_inner = build_backend(&cfg.answerer)?;
    inner_backends.push(answerer_inner.clone());
    let answerer = wrap_cached(answerer_inner, cache_dir, &version, &mut cached_backends)?;
    let judge_inner = build_backend(&cfg.judge)?;
    inner_backends.push(judge_inner.clone());
    let judge_backend = wrap_cached(judge_inner, cache_dir, &version, &mut cached_backends)?;
    let judge = JudgeClient::new(
        judge_backend,
        merge_templates(assets::default_judge_templates(), &cfg.judge_templates),
    )?;
    let answer_model = cfg
        .answerer
        .model_name
        .clone()
        .unwrap_or_else(|| cfg.answerer.id.clone());

    let ablations = if cfg.ablations.is_empty() {
        vec![AblationSpec {
            name: "full".to_string(),
            enable_descriptions: cfg.pipeline.enable_descriptions,
            enable_multistage: cfg.pipeline.enable_multistage,
            enable_ranking: cfg.pipeline.enable_ranking,
        }]
    } else {
        cfg.ablations.clone()
    };

    let mut corpora: Vec<(String, Vec<PromptRecord>)> = Vec::new();
    for corpus in &cfg.corpora {
        corpora.push((corpus.name.clone(), load_corpus(&corpus.path)?));
    }

    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let mut failures = 0u64;
    for (ablation_index, ablation) in ablations.iter().enumerate() {
        let mut pipeline_cfg = cfg.pipeline.clone();
        pipeline_cfg.enable_descriptions = ablation.enable_descriptions;
        pipeline_cfg.enable_multistage = ablation.enable_multistage;
        pipeline_cfg.enable_ranking = ablation.enable_ranking;
        let pipeline = Pipeline::with_backends(pipeline_cfg, role_backends.clone(), clock.clone())?;

        for (corpus_name, records) in &corpora {
            for stage in &cfg.stages {
                let mut sabotage_cfg = cfg.sabotage.clone();
                sabotage_cfg.seed = cfg.seed;
                let corrupted: Vec<PromptRecord> = sabotage_records(records, *stage, &sabotage_cfg)?
                    .into_iter()
                    .map(|(record, _)| record)
                    .collect();

                let mut evals: Vec<(usize, RecordEval)> =
                    stream::iter(corrupted.iter().enumerate().map(|(index, record)| {
                        let pipeline = &pipeline;
                        let judge = &judge;
                        let answerer = &answerer;
                        let answer_model = answer_model.as_str();
                        async move {
                            (
                                index,
                                evaluate_record(pipeline, answerer, judge, answer_model, record)
                                    .await,
                            )
                        }
                    }))
                    .buffer_unordered(cfg.parallelism)
                    .collect()
                    .await;
                evals.sort_by_key(|(index, _)| *index);

                let mut refined_hi = 0.0;
                let mut refined_cqs = 0.0;
                let mut original_hi = 0.0;
                let mut original_cqs = 0.0;
                let mut elapsed = 0.0;
                let mut outcomes = Vec::new();
                let mut n = 0u64;
                for (_, eval) in &evals {
                    if eval.failed {
                        failures += 1;
                        continue;
                    }
                    let (Some(refined), Some(original), Some(outcome)) =
                        (eval.refined, eval.original, eval.outcome)
                    else {
                        continue;
                    };
                    n += 1;
                    refined_hi += refined.0;
                    refined_cqs += refined.1;
                    original_hi += original.0;
                    original_cqs += original.1;
                    elapsed += eval.trace.total_elapsed_ms() as f64;
                    outcomes.push(outcome);
                }
                traces.extend(evals.into_iter().map(|(_, eval)| LabeledTrace {
                    ablation: ablation.name.clone(),
                    dataset: corpus_name.clone(),
                    stage: *stage,
                    trace: eval.trace,
                }));
                if n == 0 {
                    log::warn!(
                        "no usable records for arm {} on {corpus_name} at {}",
                        ablation.name,
                        stage.name()
                    );
                    continue;
                }
                let count = n as f64;
                rows.push(ReportRow {
                    model: ablation.name.clone(),
                    dataset: corpus_name.clone(),
                    stage: *stage,
                    hi_mean: refined_hi / count,
                    cqs_mean: refined_cqs / count,
                    wr: Some(win_rate(&outcomes)?),
                    elapsed_ms_mean: elapsed / count,
                    n,
                });
                if ablation_index == 0 {
                    rows.push(ReportRow {
                        model: BASELINE_MODEL.to_string(),
                        dataset: corpus_name.clone(),
                        stage: *stage,
                        hi_mean: original_hi / count,
                        cqs_mean: original_cqs / count,
                        wr: None,
                        elapsed_ms_mean: 0.0,
                        n,
                    });
                }
            }
        }
    }

    let backend_calls = inner_backends.iter().map(|b| b.calls()).sum();
    let (cache_hits, cache_misses) = cached_backends.iter().fold((0, 0), |(hits, misses), c| {
        let stats = c.stats();
        (hits + stats.hits, misses + stats.misses)
    });
    Ok(ExperimentOutcome {
        rows,
        traces,
        backend_calls,
        cache_hits,
        cache_misses,
        failures,
    })
}
