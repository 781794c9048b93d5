//! Command-line interface over the prompt-refinement library.
//!
//! Subcommands mirror the stages of an experiment: `sabotage` corrupts a
//! corpus, `dataset` builds instruction-tuning pairs or filters records,
//! `refine` runs the repair pipeline, `score` computes text metrics,
//! `judge` scores answers with an LLM judge, `run` executes a full
//! experiment matrix, and `report` re-renders saved result rows.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mpr::backend::build_backend;
use mpr::core::{
    BackendSpec, ExperimentConfig, PipelineConfig, PromptRecord, SabotageConfig, SabotageStage,
};
use mpr::datasets::{
    build_describe_pairs, build_pairs, emit_jsonl, filter_illformed, load_corpus, load_jsonl,
    load_terms_tsv,
};
use mpr::harness::{emit_report, load_rows, run_experiment, ReportFormat};
use mpr::judge::JudgeClient;
use mpr::metrics::{self, Smoothing};
use mpr::pipeline::{default_clock, Pipeline};
use mpr::sabotage::{sabotage_records, Edit};

#[derive(Parser)]
#[command(name = "mpr", version, about = "Multi-stage prompt refinement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inject staged noise into a corpus, writing corrupted records.
    Sabotage(SabotageArgs),
    /// Build or filter instruction-tuning datasets.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Run the refinement pipeline over a corpus, writing traces.
    Refine(RefineArgs),
    /// Score hypothesis texts against references with a text metric.
    Score(ScoreArgs),
    /// Score an answer (or compare two) with an LLM judge.
    Judge(JudgeArgs),
    /// Run a full experiment matrix and write reports and traces.
    Run(RunArgs),
    /// Re-render saved result rows as markdown or CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct SabotageArgs {
    /// Corruption stage: 1 (punctuation/case), 2 (typos), 3 (terms).
    #[arg(long)]
    stage: SabotageStage,
    /// Global seed; each record derives its own seed from it and its id.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sabotage configuration JSON; omitted fields use defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input corpus (JSONL records or single-column CSV).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output JSONL; corrupted text with the original kept in `gold`.
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-record edit logs to this JSONL file.
    #[arg(long)]
    edits: Option<PathBuf>,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Build instruction pairs by corrupting a corpus or describing terms.
    Build(DatasetBuildArgs),
    /// Select the ill-formed records the pipeline targets.
    Filter(DatasetFilterArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BuildTask {
    /// Correction + stage-classification pairs from a corrupted corpus.
    Correction,
    /// Term-description pairs from a two-column TSV.
    Describe,
}

#[derive(Args)]
struct DatasetBuildArgs {
    #[arg(long, value_enum)]
    task: BuildTask,
    /// Corruption stage for correction pairs: 1, 2, or 3.
    #[arg(long)]
    stage: Option<SabotageStage>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sabotage configuration JSON; omitted fields use defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input corpus (correction task).
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Two-column TSV of term<TAB>description rows (describe task).
    #[arg(long)]
    terms: Option<PathBuf>,
    /// Output instruction JSONL.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DatasetFilterArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep records scored strictly below this; others are well formed.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Keep records that carry no wellformedness score.
    #[arg(long, default_value_t = false)]
    keep_unscored: bool,
}

#[derive(Args)]
struct RefineArgs {
    /// Pipeline configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Input corpus (JSONL records or single-column CSV).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output JSONL, one refinement trace per record.
    #[arg(long)]
    out: PathBuf,
    /// Concurrent refinements; output order is input order regardless.
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricName {
    Bleu,
    Rouge1,
    Rouge2,
    #[value(name = "rougeL", alias = "rougel")]
    RougeL,
    Meteor,
}

impl MetricName {
    fn label(self) -> &'static str {
        match self {
            MetricName::Bleu => "bleu",
            MetricName::Rouge1 => "rouge1",
            MetricName::Rouge2 => "rouge2",
            MetricName::RougeL => "rougeL",
            MetricName::Meteor => "meteor",
        }
    }
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long, value_enum)]
    metric: MetricName,
    /// Hypothesis texts: plain text (one per line) or JSONL records.
    #[arg(long)]
    hyp: PathBuf,
    /// Reference texts, same format as --hyp.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct JudgeArgs {
    /// Judge backend JSON (a backend spec); the mock backend when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    question: String,
    #[arg(long)]
    answer: String,
    /// Second answer; switches to a position-debiased pairwise comparison.
    #[arg(long)]
    answer_b: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Directory for report.md, report.csv, and traces.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Result rows CSV written by `mpr run`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Output format: markdown (default) or csv.
    #[arg(long, default_value = "markdown")]
    format: ReportFormat,
}

/// Per-record edit log emitted next to a corrupted corpus.
#[derive(Serialize)]
struct EditLog {
    id: String,
    stage: SabotageStage,
    seed: u64,
    edits: Vec<Edit>,
}

#[tokio::main]
async fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Sabotage(args) => cmd_sabotage(args),
        Command::Dataset { command } => match command {
            DatasetCommand::Build(args) => cmd_dataset_build(args),
            DatasetCommand::Filter(args) => cmd_dataset_filter(args),
        },
        Command::Refine(args) => cmd_refine(args).await,
        Command::Score(args) => cmd_score(args),
        Command::Judge(args) => cmd_judge(args).await,
        Command::Run(args) => cmd_run(args).await,
        Command::Report(args) => cmd_report(args),
    }
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn sabotage_config(path: Option<&Path>, seed: u64) -> Result<SabotageConfig> {
    let mut cfg: SabotageConfig = match path {
        Some(p) => load_json(p)?,
        None => SabotageConfig::default(),
    };
    cfg.seed = seed;
    Ok(cfg)
}

fn cmd_sabotage(args: SabotageArgs) -> Result<()> {
    if args.stage == SabotageStage::Clean {
        bail!("stage must be 1, 2, or 3; the clean stage changes nothing");
    }
    let records = load_corpus(&args.input)?;
    let cfg = sabotage_config(args.config.as_deref(), args.seed)?;
    let outcome = sabotage_records(&records, args.stage, &cfg)?;

    let corrupted: Vec<&PromptRecord> = outcome.iter().map(|(record, _)| record).collect();
    let count = emit_jsonl(&corrupted, &args.out)?;

    if let Some(edits_path) = &args.edits {
        let logs: Vec<EditLog> = outcome
            .iter()
            .map(|(record, result)| EditLog {
                id: record.id.clone(),
                stage: result.stage,
                seed: result.seed,
                edits: result.edits.clone(),
            })
            .collect();
        emit_jsonl(&logs, edits_path)?;
    }

    println!("wrote {count} corrupted records to {}", args.out.display());
    Ok(())
}

fn cmd_dataset_build(args: DatasetBuildArgs) -> Result<()> {
    let pairs = match args.task {
        BuildTask::Correction => {
            let stage = args
                .stage
                .context("--stage is required for the correction task")?;
            let input = args
                .input
                .as_deref()
                .context("--in is required for the correction task")?;
            let records = load_corpus(input)?;
            let cfg = sabotage_config(args.config.as_deref(), args.seed)?;
            build_pairs(&records, stage, &cfg)?
        }
        BuildTask::Describe => {
            let terms_path = args
                .terms
                .as_deref()
                .context("--terms is required for the describe task")?;
            let terms = load_terms_tsv(terms_path)?;
            build_describe_pairs(&terms)
        }
    };
    let count = emit_jsonl(&pairs, &args.out)?;
    println!("wrote {count} examples to {}", args.out.display());
    Ok(())
}

fn cmd_dataset_filter(args: DatasetFilterArgs) -> Result<()> {
    let records = load_corpus(&args.input)?;
    let kept = filter_illformed(&records, args.threshold, args.keep_unscored);
    let dropped = records.len() - kept.len();
    let count = emit_jsonl(&kept, &args.out)?;
    println!(
        "kept {count} ill-formed of {} records ({dropped} dropped) in {}",
        records.len(),
        args.out.display()
    );
    Ok(())
}

async fn cmd_refine(args: RefineArgs) -> Result<()> {
    let cfg: PipelineConfig = load_json(&args.config)?;
    let records = load_corpus(&args.input)?;
    let pipeline = Pipeline::new(cfg, default_clock())?;
    let traces = pipeline.refine_corpus(&records, args.parallelism).await;
    let count = emit_jsonl(&traces, &args.out)?;
    println!("wrote {count} traces to {}", args.out.display());
    Ok(())
}

/// One scored hypothesis/reference pair.
struct ScorePair {
    id: String,
    hyp: String,
    reference: String,
}

/// Minimal JSONL record for scoring: only `id` and `text` are read, other
/// fields are ignored so corpus records and trace-derived files both work.
#[derive(serde::Deserialize)]
struct ScoreDoc {
    id: String,
    text: String,
}

fn is_jsonl(path: &Path) -> bool {
    path.extension()
        .map(|e| e.eq_ignore_ascii_case("jsonl"))
        .unwrap_or(false)
}

/// Pairs hypothesis and reference texts. Plain text files pair line by
/// line with 1-based line numbers as ids; JSONL files hold records whose
/// ids are joined across the two files.
fn read_score_pairs(hyp_path: &Path, ref_path: &Path) -> Result<Vec<ScorePair>> {
    match (is_jsonl(hyp_path), is_jsonl(ref_path)) {
        (true, true) => {
            let hyps: Vec<ScoreDoc> = load_jsonl(hyp_path)?;
            let refs: Vec<ScoreDoc> = load_jsonl(ref_path)?;
            let by_id: BTreeMap<&str, &str> =
                refs.iter().map(|r| (r.id.as_str(), r.text.as_str())).collect();
            hyps.iter()
                .map(|h| {
                    let reference = by_id
                        .get(h.id.as_str())
                        .with_context(|| format!("no reference record with id {:?}", h.id))?;
                    Ok(ScorePair {
                        id: h.id.clone(),
                        hyp: h.text.clone(),
                        reference: reference.to_string(),
                    })
                })
                .collect()
        }
        (false, false) => {
            let hyp_text = fs::read_to_string(hyp_path)
                .with_context(|| format!("reading {}", hyp_path.display()))?;
            let ref_text = fs::read_to_string(ref_path)
                .with_context(|| format!("reading {}", ref_path.display()))?;
            let hyp_lines: Vec<&str> = hyp_text.lines().collect();
            let ref_lines: Vec<&str> = ref_text.lines().collect();
            if hyp_lines.len() != ref_lines.len() {
                bail!(
                    "line count mismatch: {} hypothesis lines, {} reference lines",
                    hyp_lines.len(),
                    ref_lines.len()
                );
            }
            Ok(hyp_lines
                .iter()
                .zip(&ref_lines)
                .enumerate()
                .map(|(index, (hyp, reference))| ScorePair {
                    id: (index + 1).to_string(),
                    hyp: hyp.to_string(),
                    reference: reference.to_string(),
                })
                .collect())
        }
        _ => bail!("--hyp and --ref must both be .jsonl or both plain text"),
    }
}

fn compute_metric(metric: MetricName, hyp: &str, reference: &str) -> Result<f64> {
    let hyp_tokens = metrics::tokenize(hyp);
    let ref_tokens = metrics::tokenize(reference);
    let value = match metric {
        MetricName::Bleu => metrics::bleu(
            &hyp_tokens,
            std::slice::from_ref(&ref_tokens),
            4,
            Smoothing::AddOne,
        )?,
        MetricName::Rouge1 => metrics::rouge_n(&hyp_tokens, &ref_tokens, 1).f,
        MetricName::Rouge2 => metrics::rouge_n(&hyp_tokens, &ref_tokens, 2).f,
        MetricName::RougeL => metrics::rouge_l(&hyp_tokens, &ref_tokens).f,
        MetricName::Meteor => metrics::meteor(&hyp_tokens, &ref_tokens, true),
    };
    Ok(value)
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let pairs = read_score_pairs(&args.hyp, &args.reference)?;
    let label = args.metric.label();
    let mut csv = String::from("id,metric,value\n");
    for pair in &pairs {
        let value = compute_metric(args.metric, &pair.hyp, &pair.reference)
            .with_context(|| format!("scoring pair {:?}", pair.id))?;
        csv.push_str(&format!("{},{label},{value}\n", pair.id));
    }
    match &args.out {
        Some(path) => {
            fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {} rows to {}", pairs.len(), path.display());
        }
        None => {
            std::io::stdout().write_all(csv.as_bytes())?;
        }
    }
    Ok(())
}

async fn cmd_judge(args: JudgeArgs) -> Result<()> {
    let spec: BackendSpec = match &args.config {
        Some(path) => load_json(path)?,
        None => BackendSpec::mock("mock-judge"),
    };
    let backend = build_backend(&spec)?;
    let judge = JudgeClient::with_default_templates(Arc::clone(&backend));
    let output = match &args.answer_b {
        Some(answer_b) => {
            let verdict = judge
                .compare_pair(&args.question, &args.answer, answer_b)
                .await?;
            serde_json::json!({ "verdict": verdict })
        }
        None => {
            let hi = judge
                .score_hallucination(&args.question, &args.answer)
                .await?;
            let cqs = judge.score_quality(&args.question, &args.answer).await?;
            serde_json::json!({ "hi": hi, "cqs": cqs })
        }
    };
    println!("{}", serde_json::to_string_pretty(&output)?);
    Ok(())
}

async fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg: ExperimentConfig = load_json(&args.config)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let outcome = run_experiment(&cfg).await?;

    let report_path = args.out_dir.join("report.md");
    let csv_path = args.out_dir.join("report.csv");
    let traces_path = args.out_dir.join("traces.jsonl");
    emit_report(&outcome.rows, ReportFormat::Markdown, &report_path)?;
    emit_report(&outcome.rows, ReportFormat::Csv, &csv_path)?;
    emit_jsonl(&outcome.traces, &traces_path)?;

    println!("rows: {}", outcome.rows.len());
    println!("traces: {}", outcome.traces.len());
    println!("backend calls: {}", outcome.backend_calls);
    println!("cache hits: {}", outcome.cache_hits);
    println!("cache misses: {}", outcome.cache_misses);
    println!("failures: {}", outcome.failures);
    println!(
        "wrote {}, {}, {}",
        report_path.display(),
        csv_path.display(),
        traces_path.display()
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let rows = load_rows(&args.input)?;
    emit_report(&rows, args.format, &args.out)?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}
