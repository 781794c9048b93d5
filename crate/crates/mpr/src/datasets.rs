//! Corpus ingestion, well-formedness filtering, and emission of paired
//! instruction-tuning data (corrupted -> corrected, stage labels,
//! term -> description).

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::core::{InstructionExample, PromptRecord, SabotageConfig, SabotageStage, TaskKind};
use crate::sabotage::{sabotage_records, SabotageError};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("line {line}: {msg}")]
    MalformedLine { line: usize, msg: String },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("cannot build pairs for the clean stage; pick stage 1, 2, or 3")]
    CleanStage,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// On-disk corpus line. Only `id` and `text` are required; `dataset`
/// defaults to the file stem.
#[derive(Debug, Deserialize)]
struct RawRecord {
    id: String,
    text: String,
    #[serde(default)]
    gold: Option<String>,
    #[serde(default)]
    stage_label: Option<SabotageStage>,
    #[serde(default)]
    dataset: Option<String>,
    #[serde(default)]
    wellformedness: Option<f64>,
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string())
}

/// Loads a corpus from JSONL (`{id, text, gold?, wellformedness?, dataset?}`
/// per line) or from a single-column CSV with a header, where ids become
/// `row-1`, `row-2`, ... Duplicate ids and empty text are rejected.
pub fn load_corpus(path: &Path) -> Result<Vec<PromptRecord>, DatasetError> {
    let default_dataset = file_stem(path);
    let is_csv = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false);
    let records = if is_csv {
        load_corpus_csv(path, &default_dataset)?
    } else {
        load_corpus_jsonl(path, &default_dataset)?
    };
    let mut seen = BTreeSet::new();
    for record in &records {
        if !seen.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId(record.id.clone()));
        }
    }
    Ok(records)
}

fn load_corpus_jsonl(path: &Path, default_dataset: &str) -> Result<Vec<PromptRecord>, DatasetError> {
    let file = fs::File::open(path)?;
    let mut records = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line_no = index + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::MalformedLine {
                line: line_no,
                msg: e.to_string(),
            })?;
        let record = PromptRecord {
            id: raw.id,
            text: raw.text,
            gold: raw.gold,
            stage_label: raw.stage_label,
            dataset: raw.dataset.unwrap_or_else(|| default_dataset.to_string()),
            wellformedness: raw.wellformedness,
        };
        record.validate().map_err(|e| DatasetError::MalformedLine {
            line: line_no,
            msg: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

fn load_corpus_csv(path: &Path, default_dataset: &str) -> Result<Vec<PromptRecord>, DatasetError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut records = Vec::new();
    for (index, row) in reader.records().enumerate() {
        let line_no = index + 2; // header is line 1
        let row = row?;
        let text = row.get(0).unwrap_or("").to_string();
        let record = PromptRecord {
            id: format!("row-{}", index + 1),
            text,
            gold: None,
            stage_label: None,
            dataset: default_dataset.to_string(),
            wellformedness: None,
        };
        record.validate().map_err(|e| DatasetError::MalformedLine {
            line: line_no,
            msg: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Keeps records whose well-formedness score is strictly below `threshold`.
/// Unscored records are dropped unless `keep_unscored` is set. Input order
/// is preserved.
pub fn filter_illformed(
    records: &[PromptRecord],
    threshold: f64,
    keep_unscored: bool,
) -> Vec<PromptRecord> {
    records
        .iter()
        .filter(|r| match r.wellformedness {
            Some(score) => score < threshold,
            None => keep_unscored,
        })
        .cloned()
        .collect()
}

fn instruction_for(task: TaskKind) -> &'static str {
    match task {
        TaskKind::FixPunctuation => {
            "Fix punctuation and capitalization only. Reply with the corrected text and nothing else."
        }
        TaskKind::FixTypos => {
            "Fix typographical and spelling errors. Reply with the corrected text and nothing else."
        }
        TaskKind::Paraphrase => {
            "Paraphrase the text so its intent is clear and specific. Reply with the paraphrase and nothing else."
        }
        TaskKind::ClassifyStage => {
            "Identify the error stage of the text. Reply with a single digit: 0 if clean, 1 for punctuation or capitalization errors, 2 for typographical errors, 3 for misused terms."
        }
        TaskKind::DescribeTerm => "Write one short description that clarifies the given term.",
    }
}

fn task_for_stage(stage: SabotageStage) -> TaskKind {
    match stage {
        SabotageStage::Stage1 => TaskKind::FixPunctuation,
        SabotageStage::Stage2 => TaskKind::FixTypos,
        SabotageStage::Stage3 => TaskKind::Paraphrase,
        SabotageStage::Clean => unreachable!("callers reject the clean stage"),
    }
}

/// Builds paired training examples by corrupting each record's gold (or
/// clean) text at `stage`. Every record yields one correction example
/// (input = corrupted, output = original) and one stage-classification
/// example (output = stage digit). Records that fail to corrupt are skipped
/// with a log line, not fatally.
pub fn build_pairs(
    gold_records: &[PromptRecord],
    stage: SabotageStage,
    cfg: &SabotageConfig,
) -> Result<Vec<InstructionExample>, DatasetError> {
    if stage == SabotageStage::Clean {
        return Err(DatasetError::CleanStage);
    }
    let sources: Vec<PromptRecord> = gold_records
        .iter()
        .map(|r| {
            let mut source = r.clone();
            if let Some(gold) = &r.gold {
                source.text = gold.clone();
            }
            source
        })
        .collect();
    let task = task_for_stage(stage);
    let mut examples = Vec::new();
    for source in &sources {
        let corrupted = match sabotage_records(std::slice::from_ref(source), stage, cfg) {
            Ok(mut pairs) => pairs.remove(0).0,
            Err(SabotageError::EmptyInput) => {
                log::warn!("skipping record {}: empty text", source.id);
                continue;
            }
            Err(err) => {
                log::warn!("skipping record {}: {err}", source.id);
                continue;
            }
        };
        examples.push(InstructionExample {
            instruction: instruction_for(task).to_string(),
            input: corrupted.text.clone(),
            output: source.text.clone(),
            task,
        });
        examples.push(InstructionExample {
            instruction: instruction_for(TaskKind::ClassifyStage).to_string(),
            input: corrupted.text,
            output: stage.as_digit().to_string(),
            task: TaskKind::ClassifyStage,
        });
    }
    Ok(examples)
}

/// Turns (term, description) rows into describe_term examples. Rows with an
/// empty term or description are skipped with a log line. Duplicates pass
/// through unchanged.
pub fn build_describe_pairs(term_descriptions: &[(String, String)]) -> Vec<InstructionExample> {
    term_descriptions
        .iter()
        .filter(|(term, description)| {
            let ok = !term.trim().is_empty() && !description.trim().is_empty();
            if !ok {
                log::warn!("skipping term row with empty term or description");
            }
            ok
        })
        .map(|(term, description)| InstructionExample {
            instruction: instruction_for(TaskKind::DescribeTerm).to_string(),
            input: term.clone(),
            output: description.clone(),
            task: TaskKind::DescribeTerm,
        })
        .collect()
}

/// Loads tab-separated (term, description) rows. Blank lines and `#`
/// comments are ignored; anything else without exactly one tab is malformed.
pub fn load_terms_tsv(path: &Path) -> Result<Vec<(String, String)>, DatasetError> {
    let content = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (index, line) in content.lines().enumerate() {
        let line_no = index + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(2, '\t');
        let term = parts.next().unwrap_or("").trim();
        let description = parts.next().unwrap_or("").trim();
        if description.is_empty() {
            return Err(DatasetError::MalformedLine {
                line: line_no,
                msg: "expected two tab-separated columns".to_string(),
            });
        }
        rows.push((term.to_string(), description.to_string()));
    }
    Ok(rows)
}

/// Writes one JSON object per line and returns the line count.
pub fn emit_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<usize, DatasetError> {
    let mut file = fs::File::create(path)?;
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| DatasetError::MalformedLine {
            line: 0,
            msg: e.to_string(),
        })?;
        file.write_all(line.as_bytes())?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(items.len())
}

/// Reads one JSON object per line; blank lines are skipped.
pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let file = fs::File::open(path)?;
    let mut items = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(&line).map_err(|e| DatasetError::MalformedLine {
            line: index + 1,
            msg: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}
