//! Text-overlap metrics, perplexity, and win-rate aggregation.
//!
//! Everything here is computed from scratch so that scores are bit-exact
//! and reproducible across platforms: no external scorer, no locale
//! dependence. METEOR is the "lite" variant: the synonym pass is omitted
//! and stemming is a small fixed suffix-strip list.
//!
//! All functions are pure; score in parallel freely.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{ComparisonOutcome, TokenScore};

/// Characters stripped from token edges by [`tokenize`].
pub const TOKEN_STRIP_CHARS: [char; 10] =
    ['.', ',', '?', '!', ';', ':', '\'', '"', '(', ')'];

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no non-empty reference provided")]
    NoReferences,
    #[error("token score list is empty")]
    EmptyScores,
    #[error("outcome list is empty")]
    EmptyOutcomes,
    #[error("invalid argument: {0}")]
    InvalidArg(String),
}

/// Precision / recall / balanced F-score triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl Prf {
    pub const ZERO: Prf = Prf {
        precision: 0.0,
        recall: 0.0,
        f: 0.0,
    };

    fn from_pr(precision: f64, recall: f64) -> Prf {
        let f = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f,
        }
    }
}

/// BLEU zero-precision handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Any zero n-gram precision zeroes the whole score.
    None,
    /// When any precision is zero, add 1 to numerator and denominator of
    /// every p_n with n >= 2. The sentence-level default: zero 4-gram
    /// overlap is common on short prompts.
    AddOne,
}

impl std::str::FromStr for Smoothing {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Smoothing::None),
            "add_one" => Ok(Smoothing::AddOne),
            other => Err(MetricsError::InvalidArg(format!(
                "unknown smoothing {other:?}"
            ))),
        }
    }
}

/// Canonical tokenizer: lowercase, split on Unicode whitespace, strip
/// leading and trailing [`TOKEN_STRIP_CHARS`], drop empties. Internal
/// punctuation (e.g. the apostrophe in "gan's") survives.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(|c| TOKEN_STRIP_CHARS.contains(&c)))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Corpus-style BLEU on a single candidate: clipped modified n-gram
/// precisions up to `max_n`, uniform-weight geometric mean, and a brevity
/// penalty of exp(1 - r/c) when the candidate is no longer than the
/// closest-length reference (ties between reference lengths go to the
/// shorter one). An empty candidate scores 0.
pub fn bleu(
    candidate: &[String],
    references: &[Vec<String>],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<f64, MetricsError> {
    if max_n == 0 {
        return Err(MetricsError::InvalidArg("max_n must be >= 1".to_string()));
    }
    if references.iter().all(|r| r.is_empty()) {
        return Err(MetricsError::NoReferences);
    }
    let c = candidate.len();
    if c == 0 {
        return Ok(0.0);
    }

    let mut numerators = vec![0usize; max_n];
    let mut denominators = vec![0usize; max_n];
    for n in 1..=max_n {
        let cand_counts = ngram_counts(candidate, n);
        let ref_counts: Vec<HashMap<&[String], usize>> =
            references.iter().map(|r| ngram_counts(r, n)).collect();
        let mut matched = 0usize;
        for (gram, count) in &cand_counts {
            let clip = ref_counts
                .iter()
                .map(|rc| rc.get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            matched += (*count).min(clip);
        }
        numerators[n - 1] = matched;
        denominators[n - 1] = cand_counts.values().sum();
    }

    let any_zero = (0..max_n).any(|i| numerators[i] == 0 || denominators[i] == 0);
    let mut log_sum = 0.0;
    for i in 0..max_n {
        let (mut num, mut den) = (numerators[i] as f64, denominators[i] as f64);
        if any_zero && smoothing == Smoothing::AddOne && i > 0 {
            num += 1.0;
            den += 1.0;
        }
        if num == 0.0 || den == 0.0 {
            return Ok(0.0);
        }
        log_sum += (num / den).ln();
    }
    let geo_mean = (log_sum / max_n as f64).exp();

    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|len| (len.abs_diff(c), *len))
        .expect("non-empty reference list");
    let bp = if c <= r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    Ok(geo_mean * bp)
}

/// ROUGE-N: n-gram overlap as the sum of per-gram minimum counts. Empty
/// denominators (including n = 0 or inputs shorter than n) yield zeros.
pub fn rouge_n(candidate: &[String], reference: &[String], n: usize) -> Prf {
    let cand_counts = ngram_counts(candidate, n);
    let ref_counts = ngram_counts(reference, n);
    let overlap: usize = cand_counts
        .iter()
        .map(|(gram, count)| (*count).min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    let cand_total: usize = cand_counts.values().sum();
    let ref_total: usize = ref_counts.values().sum();
    let precision = if cand_total > 0 {
        overlap as f64 / cand_total as f64
    } else {
        0.0
    };
    let recall = if ref_total > 0 {
        overlap as f64 / ref_total as f64
    } else {
        0.0
    };
    Prf::from_pr(precision, recall)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            row[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(row[j])
            };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// ROUGE-L: longest common subsequence, scored as precision over the
/// candidate length and recall over the reference length.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> Prf {
    if candidate.is_empty() || reference.is_empty() {
        return Prf::ZERO;
    }
    let l = lcs_len(candidate, reference) as f64;
    Prf::from_pr(l / candidate.len() as f64, l / reference.len() as f64)
}

const STEM_SUFFIXES: [&str; 5] = ["ing", "es", "ed", "ly", "s"];

/// Fixed-rule stemmer for the METEOR stem pass: strip the longest matching
/// suffix, keeping a stem of at least two characters.
fn stem(token: &str) -> String {
    for suffix in STEM_SUFFIXES {
        if let Some(stripped) = token.strip_suffix(suffix) {
            if stripped.chars().count() >= 2 {
                return stripped.to_string();
            }
        }
    }
    token.to_string()
}

/// Greedy one-to-one alignment: an exact pass, then (optionally) a stem
/// pass over whatever is still unmatched. Returns (candidate index,
/// reference index) pairs in candidate order.
fn meteor_align(
    candidate: &[String],
    reference: &[String],
    enable_stem: bool,
) -> Vec<(usize, usize)> {
    let mut ref_used = vec![false; reference.len()];
    let mut matches: Vec<Option<usize>> = vec![None; candidate.len()];
    for (ci, ct) in candidate.iter().enumerate() {
        for (ri, rt) in reference.iter().enumerate() {
            if !ref_used[ri] && ct == rt {
                matches[ci] = Some(ri);
                ref_used[ri] = true;
                break;
            }
        }
    }
    if enable_stem {
        let cand_stems: Vec<String> = candidate.iter().map(|t| stem(t)).collect();
        let ref_stems: Vec<String> = reference.iter().map(|t| stem(t)).collect();
        for (ci, slot) in matches.iter_mut().enumerate() {
            if slot.is_some() {
                continue;
            }
            for (ri, used) in ref_used.iter_mut().enumerate() {
                if !*used && cand_stems[ci] == ref_stems[ri] {
                    *slot = Some(ri);
                    *used = true;
                    break;
                }
            }
        }
    }
    matches
        .into_iter()
        .enumerate()
        .filter_map(|(ci, m)| m.map(|ri| (ci, ri)))
        .collect()
}

/// Maximal runs where both candidate and reference indices advance by one.
fn chunk_count(pairs: &[(usize, usize)]) -> usize {
    let mut chunks = 0usize;
    let mut prev: Option<(usize, usize)> = None;
    for &(ci, ri) in pairs {
        let contiguous = prev
            .map(|(pc, pr)| ci == pc + 1 && ri == pr + 1)
            .unwrap_or(false);
        if !contiguous {
            chunks += 1;
        }
        prev = Some((ci, ri));
    }
    chunks
}

/// METEOR-lite: greedy exact-then-stem unigram alignment, recall-weighted
/// harmonic mean Fmean = 10PR/(R + 9P), fragmentation penalty
/// 0.5 * (chunks/m)^3. No matches scores 0.
pub fn meteor(candidate: &[String], reference: &[String], enable_stem: bool) -> f64 {
    let pairs = meteor_align(candidate, reference, enable_stem);
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let precision = m as f64 / candidate.len() as f64;
    let recall = m as f64 / reference.len() as f64;
    let fmean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let chunks = chunk_count(&pairs) as f64;
    let penalty = 0.5 * (chunks / m as f64).powi(3);
    fmean * (1.0 - penalty)
}

/// exp of the negated mean logprob.
pub fn perplexity(scores: &[TokenScore]) -> Result<f64, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyScores);
    }
    let mean = scores.iter().map(|s| s.logprob).sum::<f64>() / scores.len() as f64;
    Ok((-mean).exp())
}

/// Fraction of wins with ties counted as half a win.
pub fn win_rate(outcomes: &[ComparisonOutcome]) -> Result<f64, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyOutcomes);
    }
    let wins = outcomes
        .iter()
        .filter(|o| **o == ComparisonOutcome::Win)
        .count() as f64;
    let ties = outcomes
        .iter()
        .filter(|o| **o == ComparisonOutcome::Tie)
        .count() as f64;
    Ok((wins + 0.5 * ties) / outcomes.len() as f64)
}
