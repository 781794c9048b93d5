//! Shared test scaffolding: independent oracle implementations of the text
//! metrics and seeded random sequence generators.
//!
//! The oracles deliberately avoid the library's data structures and
//! shortcuts: n-grams are compared by position-wise enumeration instead of
//! hash counting, the longest common subsequence comes from recursion (or
//! exhaustive subsequence enumeration on small inputs), and every formula
//! is written out from its definition. Agreement between the two routes is
//! what the metric acceptance checks assert.

#![allow(dead_code)]

use std::collections::HashMap;

use mpr::core::{rng_unit, seeded_rng};
use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;

/// Ten-word vocabulary for randomized metric checks. Several entries
/// collide under the suffix stemmer (cats/cat, quickly/quick, jumped/jump)
/// so the METEOR stem pass is exercised, not just the exact pass.
pub fn vocab() -> Vec<String> {
    [
        "cat", "cats", "run", "running", "quick", "quickly", "jump", "jumped", "sat", "mat",
    ]
    .iter()
    .map(|w| w.to_string())
    .collect()
}

/// One random token sequence with length uniform in [1, max_len].
pub fn gen_seq(rng: &mut ChaCha8Rng, vocab: &[String], max_len: usize) -> Vec<String> {
    let len = (rng.next_u64() as usize % max_len) + 1;
    (0..len)
        .map(|_| vocab[rng.next_u64() as usize % vocab.len()].clone())
        .collect()
}

/// `count` seeded (candidate, reference) pairs, lengths 1..=20, vocab 10.
pub fn gen_pairs(seed: u64, count: usize) -> Vec<(Vec<String>, Vec<String>)> {
    let vocab = vocab();
    let mut rng = seeded_rng(seed);
    (0..count)
        .map(|_| {
            let cand = gen_seq(&mut rng, &vocab, 20);
            let reference = gen_seq(&mut rng, &vocab, 20);
            (cand, reference)
        })
        .collect()
}

/// Uniform f64 in [0, 1) from the shared generator; re-exported for tests
/// that need ad-hoc draws.
pub fn unit(rng: &mut ChaCha8Rng) -> f64 {
    rng_unit(rng)
}

fn ngrams(tokens: &[String], n: usize) -> Vec<&[String]> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    tokens.windows(n).collect()
}

fn count_gram(grams: &[&[String]], gram: &[String]) -> usize {
    grams.iter().filter(|g| **g == gram).count()
}

/// Clipped n-gram overlap: each distinct candidate n-gram contributes
/// min(count in candidate, count in reference), found by scanning
/// positions rather than hashing.
fn clipped_overlap(cand_grams: &[&[String]], ref_grams: &[&[String]]) -> usize {
    let mut overlap = 0;
    for (i, gram) in cand_grams.iter().enumerate() {
        let first_occurrence = cand_grams[..i].iter().all(|g| g != gram);
        if !first_occurrence {
            continue;
        }
        let in_cand = count_gram(cand_grams, gram);
        let in_ref = count_gram(ref_grams, gram);
        overlap += in_cand.min(in_ref);
    }
    overlap
}

/// BLEU written out from the definition: modified n-gram precisions
/// clipped against the per-gram maximum across references, uniform-weight
/// geometric mean, brevity penalty against the closest reference length
/// (ties to the shorter). With add-one smoothing, a zero anywhere adds one
/// to numerator and denominator of every precision of order two and up.
pub fn oracle_bleu(
    candidate: &[String],
    references: &[Vec<String>],
    max_n: usize,
    add_one: bool,
) -> f64 {
    assert!(max_n >= 1, "oracle_bleu requires max_n >= 1");
    assert!(
        references.iter().any(|r| !r.is_empty()),
        "oracle_bleu requires a non-empty reference"
    );
    let c = candidate.len();
    if c == 0 {
        return 0.0;
    }

    let mut fractions: Vec<(usize, usize)> = Vec::new();
    for n in 1..=max_n {
        let cand_grams = ngrams(candidate, n);
        let mut matched = 0usize;
        for (i, gram) in cand_grams.iter().enumerate() {
            if cand_grams[..i].iter().any(|g| g == gram) {
                continue;
            }
            let in_cand = count_gram(&cand_grams, gram);
            let best_ref = references
                .iter()
                .map(|r| count_gram(&ngrams(r, n), gram))
                .max()
                .unwrap_or(0);
            matched += in_cand.min(best_ref);
        }
        fractions.push((matched, cand_grams.len()));
    }

    let any_zero = fractions.iter().any(|(num, den)| *num == 0 || *den == 0);
    let mut log_sum = 0.0;
    for (order, (num, den)) in fractions.iter().enumerate() {
        let (mut num, mut den) = (*num as f64, *den as f64);
        if any_zero && add_one && order >= 1 {
            num += 1.0;
            den += 1.0;
        }
        if num == 0.0 || den == 0.0 {
            return 0.0;
        }
        log_sum += (num / den).ln();
    }
    let geo_mean = (log_sum / max_n as f64).exp();

    let mut best: Option<usize> = None;
    for reference in references {
        let len = reference.len();
        let better = match best {
            None => true,
            Some(b) => {
                let (db, dl) = (b.abs_diff(c), len.abs_diff(c));
                dl < db || (dl == db && len < b)
            }
        };
        if better {
            best = Some(len);
        }
    }
    let r = best.expect("at least one reference") as f64;
    let bp = if (c as f64) <= r {
        (1.0 - r / c as f64).exp()
    } else {
        1.0
    };
    geo_mean * bp
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// ROUGE-N from the definition: overlap is the sum over distinct n-grams
/// of the minimum count on either side.
pub fn oracle_rouge_n(candidate: &[String], reference: &[String], n: usize) -> (f64, f64, f64) {
    let cand_grams = ngrams(candidate, n);
    let ref_grams = ngrams(reference, n);
    let overlap = clipped_overlap(&cand_grams, &ref_grams) as f64;
    let precision = if cand_grams.is_empty() {
        0.0
    } else {
        overlap / cand_grams.len() as f64
    };
    let recall = if ref_grams.is_empty() {
        0.0
    } else {
        overlap / ref_grams.len() as f64
    };
    (precision, recall, f1(precision, recall))
}

/// LCS length by exhaustive enumeration: every subsequence of the shorter
/// side is tested against the longer side. Exponential; callers keep the
/// shorter side under ~16 tokens.
pub fn lcs_by_enumeration(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(
        short.len() <= 16,
        "enumeration oracle is exponential; shorter side must stay small"
    );
    let mut best = 0usize;
    for mask in 0u32..(1u32 << short.len()) {
        let sub: Vec<&String> = short
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, t)| t)
            .collect();
        if sub.len() <= best {
            continue;
        }
        let mut cursor = long.iter();
        if sub.iter().all(|t| cursor.any(|l| l == *t)) {
            best = sub.len();
        }
    }
    best
}

fn lcs_recurse(
    a: &[String],
    b: &[String],
    i: usize,
    j: usize,
    memo: &mut HashMap<(usize, usize), usize>,
) -> usize {
    if i == 0 || j == 0 {
        return 0;
    }
    if let Some(&len) = memo.get(&(i, j)) {
        return len;
    }
    let len = if a[i - 1] == b[j - 1] {
        1 + lcs_recurse(a, b, i - 1, j - 1, memo)
    } else {
        lcs_recurse(a, b, i - 1, j, memo).max(lcs_recurse(a, b, i, j - 1, memo))
    };
    memo.insert((i, j), len);
    len
}

/// LCS length by top-down recursion (memoized so length-20 pairs stay
/// inside the acceptance time budget; the recurrence itself is the
/// textbook one, independent of the library's iterative table).
pub fn lcs_by_recursion(a: &[String], b: &[String]) -> usize {
    lcs_recurse(a, b, a.len(), b.len(), &mut HashMap::new())
}

/// ROUGE-L from the definition, with the LCS computed by recursion.
pub fn oracle_rouge_l(candidate: &[String], reference: &[String]) -> (f64, f64, f64) {
    if candidate.is_empty() || reference.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let l = lcs_by_recursion(candidate, reference) as f64;
    let precision = l / candidate.len() as f64;
    let recall = l / reference.len() as f64;
    (precision, recall, f1(precision, recall))
}

/// Suffix stemmer mirrored from the documented rule list: strip the first
/// of ing/es/ed/ly/s that leaves at least two characters.
fn oracle_stem(token: &str) -> String {
    for suffix in ["ing", "es", "ed", "ly", "s"] {
        if let Some(stripped) = token.strip_suffix(suffix) {
            if stripped.chars().count() >= 2 {
                return stripped.to_string();
            }
        }
    }
    token.to_string()
}

/// METEOR-lite from the definition: greedy left-to-right one-to-one
/// alignment (exact pass, then stem pass over leftovers), Fmean =
/// 10PR/(R+9P), penalty = 0.5 * (chunks/m)^3 where a chunk is a maximal
/// run of pairs advancing both indices by one.
pub fn oracle_meteor(candidate: &[String], reference: &[String], enable_stem: bool) -> f64 {
    let mut pair_of: Vec<Option<usize>> = vec![None; candidate.len()];
    let mut taken = vec![false; reference.len()];

    for (ci, token) in candidate.iter().enumerate() {
        let hit = reference
            .iter()
            .enumerate()
            .find(|(ri, rt)| !taken[*ri] && *rt == token);
        if let Some((ri, _)) = hit {
            pair_of[ci] = Some(ri);
            taken[ri] = true;
        }
    }
    if enable_stem {
        for (ci, token) in candidate.iter().enumerate() {
            if pair_of[ci].is_some() {
                continue;
            }
            let stemmed = oracle_stem(token);
            let hit = reference
                .iter()
                .enumerate()
                .find(|(ri, rt)| !taken[*ri] && oracle_stem(rt) == stemmed);
            if let Some((ri, _)) = hit {
                pair_of[ci] = Some(ri);
                taken[ri] = true;
            }
        }
    }

    let pairs: Vec<(usize, usize)> = pair_of
        .iter()
        .enumerate()
        .filter_map(|(ci, slot)| slot.map(|ri| (ci, ri)))
        .collect();
    let m = pairs.len() as f64;
    if pairs.is_empty() {
        return 0.0;
    }

    let precision = m / candidate.len() as f64;
    let recall = m / reference.len() as f64;
    let fmean = 10.0 * precision * recall / (recall + 9.0 * precision);

    let mut chunks = 1usize;
    for window in pairs.windows(2) {
        let (pc, pr) = window[0];
        let (ci, ri) = window[1];
        if !(ci == pc + 1 && ri == pr + 1) {
            chunks += 1;
        }
    }
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    fmean * (1.0 - penalty)
}

/// Perplexity from the definition: exp of the negated mean log-probability.
pub fn oracle_perplexity(logprobs: &[f64]) -> f64 {
    assert!(!logprobs.is_empty());
    let mean: f64 = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    (-mean).exp()
}
