//! Staged, reproducible corruption of clean text.
//!
//! Three cumulative injectors mirror the error severities the pipeline
//! repairs: stage 1 flips letter case and drops punctuation, stage 2 adds
//! word-level typos (adjacent key, transposition, deletion, duplication),
//! stage 3 additionally corrupts known key terms through a lexicon.
//!
//! Every change is recorded as an [`Edit`]. Edits apply sequentially: each
//! offset is a character offset into the string as it stands after all
//! previous edits, so [`apply_edits`] replays a log as a simple fold and
//! must reproduce the corrupted text exactly.
//!
//! All randomness flows through [`crate::core::seeded_rng`]. The typo and
//! term passes use their own streams derived from the seed, so a stage-2
//! run with `p_typo = 0` is byte-identical to the stage-1 run for the same
//! seed.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets;
use crate::core::{
    chance, pick_index, record_seed, seeded_rng, PromptRecord, SabotageConfig, SabotageStage,
};

/// Punctuation subject to stage-1 drops.
pub const PUNCT_SET: [char; 7] = ['.', ',', '?', '!', ';', ':', '\''];

/// Sentence-terminal punctuation.
pub const TERMINAL_PUNCT: [char; 3] = ['.', '?', '!'];

const STREAM_TYPO: u64 = 0x9e37_79b9_7f4a_7c15;
const STREAM_TERM: u64 = 0x3c6e_f372_fe94_f82a;

#[derive(Debug, Error)]
pub enum SabotageError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("invalid sabotage config: {0}")]
    InvalidConfig(String),
    #[error("lexicon line {line}: {msg}")]
    Lexicon { line: usize, msg: String },
    #[error("edit replay mismatch at offset {offset}: expected {expected:?}, found {found:?}")]
    Replay {
        offset: usize,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    CaseFlip,
    PunctDrop,
    AdjacentKey,
    Transpose,
    Delete,
    Duplicate,
    TermReplace,
    /// Marker recorded when stage 3 finds nothing to corrupt; replays as a
    /// no-op.
    NoTermFound,
}

/// One recorded change. `offset` counts characters in the string as it
/// stands after all previous edits; `before` is the text consumed there and
/// `after` the text written in its place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    pub kind: EditKind,
    pub offset: usize,
    pub before: String,
    pub after: String,
}

/// Corrupted text plus the log that reproduces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SabotageResult {
    pub corrupted: String,
    pub edits: Vec<Edit>,
    pub stage: SabotageStage,
    pub seed: u64,
}

/// Routes to the injector for `stage`. `Clean` returns the text unchanged
/// with an empty edit log.
pub fn sabotage(
    text: &str,
    stage: SabotageStage,
    cfg: &SabotageConfig,
) -> Result<SabotageResult, SabotageError> {
    match stage {
        SabotageStage::Clean => {
            if text.is_empty() {
                return Err(SabotageError::EmptyInput);
            }
            Ok(SabotageResult {
                corrupted: text.to_string(),
                edits: Vec::new(),
                stage: SabotageStage::Clean,
                seed: cfg.seed,
            })
        }
        SabotageStage::Stage1 => sabotage_stage1(text, cfg),
        SabotageStage::Stage2 => sabotage_stage2(text, cfg),
        SabotageStage::Stage3 => sabotage_stage3(text, cfg),
    }
}

/// Case flips on ASCII letters and drops within [`PUNCT_SET`]. If the
/// sampled pass makes no edit, one is forced: the first letter's case flips
/// and a final terminal punctuation mark, if present, is dropped.
pub fn sabotage_stage1(
    text: &str,
    cfg: &SabotageConfig,
) -> Result<SabotageResult, SabotageError> {
    validate(text, cfg)?;
    let mut rng = seeded_rng(cfg.seed);
    let (corrupted, edits) = stage1_pass(text, cfg, &mut rng);
    Ok(SabotageResult {
        corrupted,
        edits,
        stage: SabotageStage::Stage1,
        seed: cfg.seed,
    })
}

/// Stage-1 edits plus word-level typos drawn from the weighted operation
/// set. Words shorter than three characters are exempt from deletion and
/// transposition.
pub fn sabotage_stage2(
    text: &str,
    cfg: &SabotageConfig,
) -> Result<SabotageResult, SabotageError> {
    validate(text, cfg)?;
    let mut rng1 = seeded_rng(cfg.seed);
    let (after_stage1, mut edits) = stage1_pass(text, cfg, &mut rng1);
    let mut rng2 = seeded_rng(cfg.seed ^ STREAM_TYPO);
    let (corrupted, typo_edits) = typo_pass(&after_stage1, cfg, &mut rng2)?;
    edits.extend(typo_edits);
    Ok(SabotageResult {
        corrupted,
        edits,
        stage: SabotageStage::Stage2,
        seed: cfg.seed,
    })
}

/// Stage-2 edits plus key-term corruption. Lexicon terms match whole tokens
/// case-insensitively and are replaced with probability `p_term`. If no
/// lexicon term occurs at all, one letter of the first all-caps token of
/// length 2..=6 is corrupted instead; failing that, a `no_term_found`
/// marker edit is recorded.
pub fn sabotage_stage3(
    text: &str,
    cfg: &SabotageConfig,
) -> Result<SabotageResult, SabotageError> {
    validate(text, cfg)?;
    let mut rng1 = seeded_rng(cfg.seed);
    let (after_stage1, mut edits) = stage1_pass(text, cfg, &mut rng1);
    let mut rng2 = seeded_rng(cfg.seed ^ STREAM_TYPO);
    let (after_stage2, typo_edits) = typo_pass(&after_stage1, cfg, &mut rng2)?;
    edits.extend(typo_edits);

    let lexicon = effective_lexicon(cfg);
    let mut rng3 = seeded_rng(cfg.seed ^ STREAM_TERM);
    let (corrupted, term_edits) = term_pass(&after_stage2, &lexicon, cfg.p_term, &mut rng3);
    edits.extend(term_edits);
    Ok(SabotageResult {
        corrupted,
        edits,
        stage: SabotageStage::Stage3,
        seed: cfg.seed,
    })
}

/// Corrupts every record with a seed derived from the global seed and the
/// record id, so results do not depend on corpus order. Returns the
/// corrupted record (original text preserved in `gold`) plus the full
/// result.
pub fn sabotage_records(
    records: &[PromptRecord],
    stage: SabotageStage,
    cfg: &SabotageConfig,
) -> Result<Vec<(PromptRecord, SabotageResult)>, SabotageError> {
    records
        .iter()
        .map(|rec| {
            let mut per_record = cfg.clone();
            per_record.seed = record_seed(cfg.seed, &rec.id);
            let result = sabotage(&rec.text, stage, &per_record)?;
            let corrupted = PromptRecord {
                id: rec.id.clone(),
                text: result.corrupted.clone(),
                gold: Some(rec.text.clone()),
                stage_label: Some(stage),
                dataset: rec.dataset.clone(),
                wellformedness: rec.wellformedness,
            };
            Ok((corrupted, result))
        })
        .collect()
}

/// Replays an edit log over the original text. Each edit must match its
/// `before` text exactly at its offset.
pub fn apply_edits(original: &str, edits: &[Edit]) -> Result<String, SabotageError> {
    let mut chars: Vec<char> = original.chars().collect();
    for edit in edits {
        let before: Vec<char> = edit.before.chars().collect();
        let end = edit.offset + before.len();
        if end > chars.len() || chars[edit.offset..end] != before[..] {
            let found: String = chars
                .get(edit.offset..end.min(chars.len()))
                .unwrap_or(&[])
                .iter()
                .collect();
            return Err(SabotageError::Replay {
                offset: edit.offset,
                expected: edit.before.clone(),
                found,
            });
        }
        chars.splice(edit.offset..end, edit.after.chars());
    }
    Ok(chars.into_iter().collect())
}

/// Parses a two-column TSV of canonical term -> corrupted form. Keys are
/// stored lowercase (matching is case-insensitive); values stay literal.
pub fn parse_lexicon(text: &str) -> Result<BTreeMap<String, String>, SabotageError> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (canonical, corrupted) = line.split_once('\t').ok_or(SabotageError::Lexicon {
            line: idx + 1,
            msg: "expected two tab-separated columns".to_string(),
        })?;
        let key = canonical.trim().to_lowercase();
        let value = corrupted.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(SabotageError::Lexicon {
                line: idx + 1,
                msg: "empty column".to_string(),
            });
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(SabotageError::Lexicon {
                line: idx + 1,
                msg: format!("duplicate term {key:?}"),
            });
        }
    }
    Ok(map)
}

/// Loads a term lexicon from a TSV file.
pub fn load_lexicon(path: &Path) -> Result<BTreeMap<String, String>, SabotageError> {
    parse_lexicon(&std::fs::read_to_string(path)?)
}

fn validate(text: &str, cfg: &SabotageConfig) -> Result<(), SabotageError> {
    if text.is_empty() {
        return Err(SabotageError::EmptyInput);
    }
    for (name, p) in [
        ("p_case_flip", cfg.p_case_flip),
        ("p_punct_drop", cfg.p_punct_drop),
        ("p_typo", cfg.p_typo),
        ("p_term", cfg.p_term),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(SabotageError::InvalidConfig(format!(
                "{name} must be in [0, 1], got {p}"
            )));
        }
    }
    let w = &cfg.typo_ops;
    let weights = [w.adjacent_key, w.transpose, w.delete, w.duplicate];
    if weights.iter().any(|x| *x < 0.0 || !x.is_finite()) {
        return Err(SabotageError::InvalidConfig(
            "typo_ops weights must be finite and non-negative".to_string(),
        ));
    }
    if cfg.p_typo > 0.0 && weights.iter().sum::<f64>() <= 0.0 {
        return Err(SabotageError::InvalidConfig(
            "typo_ops weights sum to zero".to_string(),
        ));
    }
    Ok(())
}

fn effective_lexicon(cfg: &SabotageConfig) -> BTreeMap<String, String> {
    if cfg.term_lexicon.is_empty() {
        assets::default_term_lexicon()
    } else {
        cfg.term_lexicon
            .iter()
            .map(|(k, v)| (k.to_lowercase(), v.clone()))
            .collect()
    }
}

fn flip_case(c: char) -> char {
    if c.is_ascii_uppercase() {
        c.to_ascii_lowercase()
    } else {
        c.to_ascii_uppercase()
    }
}

fn stage1_pass(text: &str, cfg: &SabotageConfig, rng: &mut ChaCha8Rng) -> (String, Vec<Edit>) {
    let mut out = String::with_capacity(text.len());
    let mut out_chars = 0usize;
    let mut edits = Vec::new();
    for c in text.chars() {
        if c.is_ascii_alphabetic() && chance(rng, cfg.p_case_flip) {
            let flipped = flip_case(c);
            edits.push(Edit {
                kind: EditKind::CaseFlip,
                offset: out_chars,
                before: c.to_string(),
                after: flipped.to_string(),
            });
            out.push(flipped);
            out_chars += 1;
        } else if PUNCT_SET.contains(&c) && chance(rng, cfg.p_punct_drop) {
            edits.push(Edit {
                kind: EditKind::PunctDrop,
                offset: out_chars,
                before: c.to_string(),
                after: String::new(),
            });
        } else {
            out.push(c);
            out_chars += 1;
        }
    }
    if edits.is_empty() {
        let forced = forced_stage1_edits(text);
        if !forced.is_empty() {
            let corrupted = apply_edits(text, &forced).expect("forced edits replay");
            return (corrupted, forced);
        }
    }
    (out, edits)
}

/// The guaranteed minimum stage-1 damage: flip the first letter's case and
/// drop a final terminal punctuation mark when present.
fn forced_stage1_edits(text: &str) -> Vec<Edit> {
    let mut edits = Vec::new();
    if let Some((idx, c)) = text
        .chars()
        .enumerate()
        .find(|(_, c)| c.is_ascii_alphabetic())
    {
        edits.push(Edit {
            kind: EditKind::CaseFlip,
            offset: idx,
            before: c.to_string(),
            after: flip_case(c).to_string(),
        });
    }
    let total_chars = text.chars().count();
    if let Some(last) = text.chars().last() {
        if TERMINAL_PUNCT.contains(&last) {
            edits.push(Edit {
                kind: EditKind::PunctDrop,
                offset: total_chars - 1,
                before: last.to_string(),
                after: String::new(),
            });
        }
    }
    edits
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum TypoOp {
    AdjacentKey,
    Transpose,
    Delete,
    Duplicate,
}

fn draw_typo_op(rng: &mut ChaCha8Rng, weights: &crate::core::TypoWeights) -> TypoOp {
    let table = [
        (TypoOp::AdjacentKey, weights.adjacent_key),
        (TypoOp::Transpose, weights.transpose),
        (TypoOp::Delete, weights.delete),
        (TypoOp::Duplicate, weights.duplicate),
    ];
    let total: f64 = table.iter().map(|(_, w)| w).sum();
    let x = crate::core::rng_unit(rng) * total;
    let mut acc = 0.0;
    for (op, w) in table {
        acc += w;
        if x < acc {
            return op;
        }
    }
    TypoOp::Duplicate
}

fn typo_pass(
    text: &str,
    cfg: &SabotageConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(String, Vec<Edit>), SabotageError> {
    let neighbors = assets::qwerty_neighbors();
    let mut out = String::with_capacity(text.len());
    let mut out_chars = 0usize;
    let mut edits = Vec::new();

    for segment in split_segments(text) {
        let word: Vec<char> = segment.chars().collect();
        let is_word = !word[0].is_whitespace();
        let eligible = is_word && word.iter().any(|c| c.is_ascii_alphabetic());
        if !eligible || !chance(rng, cfg.p_typo) {
            out.push_str(segment);
            out_chars += word.len();
            continue;
        }

        let mut op = draw_typo_op(rng, &cfg.typo_ops);
        if word.len() < 3 && (op == TypoOp::Delete || op == TypoOp::Transpose) {
            op = TypoOp::AdjacentKey;
        }
        if op == TypoOp::Transpose {
            let valid: Vec<usize> = (0..word.len() - 1)
                .filter(|i| word[*i] != word[*i + 1])
                .collect();
            if valid.is_empty() {
                op = TypoOp::AdjacentKey;
            } else {
                let i = valid[pick_index(rng, valid.len())];
                edits.push(Edit {
                    kind: EditKind::Transpose,
                    offset: out_chars + i,
                    before: format!("{}{}", word[i], word[i + 1]),
                    after: format!("{}{}", word[i + 1], word[i]),
                });
                let mut mutated = word.clone();
                mutated.swap(i, i + 1);
                out.extend(mutated.iter());
                out_chars += word.len();
                continue;
            }
        }
        match op {
            TypoOp::AdjacentKey => {
                let letter_positions: Vec<usize> = (0..word.len())
                    .filter(|i| word[*i].is_ascii_alphabetic())
                    .collect();
                let pos = letter_positions[pick_index(rng, letter_positions.len())];
                let original = word[pos];
                let options = &neighbors[&original.to_ascii_lowercase()];
                let mut replacement = options[pick_index(rng, options.len())];
                if original.is_ascii_uppercase() {
                    replacement = replacement.to_ascii_uppercase();
                }
                edits.push(Edit {
                    kind: EditKind::AdjacentKey,
                    offset: out_chars + pos,
                    before: original.to_string(),
                    after: replacement.to_string(),
                });
                let mut mutated = word.clone();
                mutated[pos] = replacement;
                out.extend(mutated.iter());
                out_chars += word.len();
            }
            TypoOp::Delete => {
                let pos = pick_index(rng, word.len());
                edits.push(Edit {
                    kind: EditKind::Delete,
                    offset: out_chars + pos,
                    before: word[pos].to_string(),
                    after: String::new(),
                });
                let mut mutated = word.clone();
                mutated.remove(pos);
                out.extend(mutated.iter());
                out_chars += word.len() - 1;
            }
            TypoOp::Duplicate => {
                let pos = pick_index(rng, word.len());
                edits.push(Edit {
                    kind: EditKind::Duplicate,
                    offset: out_chars + pos,
                    before: word[pos].to_string(),
                    after: format!("{}{}", word[pos], word[pos]),
                });
                let mut mutated = word.clone();
                mutated.insert(pos, word[pos]);
                out.extend(mutated.iter());
                out_chars += word.len() + 1;
            }
            TypoOp::Transpose => unreachable!("transpose handled above"),
        }
    }
    Ok((out, edits))
}

fn term_pass(
    text: &str,
    lexicon: &BTreeMap<String, String>,
    p_term: f64,
    rng: &mut ChaCha8Rng,
) -> (String, Vec<Edit>) {
    let mut out = String::with_capacity(text.len());
    let mut out_chars = 0usize;
    let mut edits = Vec::new();
    let mut found_any = false;

    for segment in split_segments(text) {
        let chars: Vec<char> = segment.chars().collect();
        if chars[0].is_whitespace() {
            out.push_str(segment);
            out_chars += chars.len();
            continue;
        }
        let (core_start, core_end) = token_core(&chars);
        let core: String = chars[core_start..core_end].iter().collect();
        let key = core.to_lowercase();
        if !core.is_empty() && lexicon.contains_key(&key) {
            found_any = true;
            if chance(rng, p_term) {
                let replacement = &lexicon[&key];
                edits.push(Edit {
                    kind: EditKind::TermReplace,
                    offset: out_chars + core_start,
                    before: core.clone(),
                    after: replacement.clone(),
                });
                let prefix: String = chars[..core_start].iter().collect();
                let suffix: String = chars[core_end..].iter().collect();
                out.push_str(&prefix);
                out.push_str(replacement);
                out.push_str(&suffix);
                out_chars += core_start + replacement.chars().count() + (chars.len() - core_end);
                continue;
            }
        }
        out.push_str(segment);
        out_chars += chars.len();
    }

    if !found_any {
        let fallback = acronym_fallback(&out, rng);
        match fallback {
            Some(edit) => {
                let corrupted = apply_edits(&out, std::slice::from_ref(&edit))
                    .expect("fallback edit replays");
                edits.push(edit);
                return (corrupted, edits);
            }
            None => edits.push(Edit {
                kind: EditKind::NoTermFound,
                offset: 0,
                before: String::new(),
                after: String::new(),
            }),
        }
    }
    (out, edits)
}

/// One corrupted letter in the first all-caps token of length 2..=6.
fn acronym_fallback(text: &str, rng: &mut ChaCha8Rng) -> Option<Edit> {
    let neighbors = assets::qwerty_neighbors();
    let mut offset = 0usize;
    for segment in split_segments(text) {
        let chars: Vec<char> = segment.chars().collect();
        if !chars[0].is_whitespace() {
            let (core_start, core_end) = token_core(&chars);
            let core = &chars[core_start..core_end];
            let len = core.len();
            if (2..=6).contains(&len) && core.iter().all(|c| c.is_ascii_uppercase()) {
                let pos = pick_index(rng, len);
                let original = core[pos];
                let options = &neighbors[&original.to_ascii_lowercase()];
                let replacement = options[pick_index(rng, options.len())].to_ascii_uppercase();
                let mut after: Vec<char> = core.to_vec();
                after[pos] = replacement;
                return Some(Edit {
                    kind: EditKind::TermReplace,
                    offset: offset + core_start,
                    before: core.iter().collect(),
                    after: after.into_iter().collect(),
                });
            }
        }
        offset += chars.len();
    }
    None
}

/// Alternating runs of whitespace and non-whitespace, preserving everything.
fn split_segments(text: &str) -> Vec<&str> {
    let mut segments = Vec::new();
    let mut start = 0usize;
    let mut prev_ws: Option<bool> = None;
    for (idx, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if let Some(p) = prev_ws {
            if p != ws {
                segments.push(&text[start..idx]);
                start = idx;
            }
        }
        prev_ws = Some(ws);
    }
    if start < text.len() {
        segments.push(&text[start..]);
    }
    segments
}

/// Span of a token's alphanumeric core (leading/trailing punctuation
/// stripped), as char indices into the token.
fn token_core(chars: &[char]) -> (usize, usize) {
    let start = chars
        .iter()
        .position(|c| c.is_alphanumeric())
        .unwrap_or(chars.len());
    let end = chars
        .iter()
        .rposition(|c| c.is_alphanumeric())
        .map(|i| i + 1)
        .unwrap_or(start);
    (start, end)
}
