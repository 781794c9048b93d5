//! Rule-based stage-1 correction: punctuation and capitalization repair
//! with no model behind it.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};

use async_trait::async_trait;

use super::{Backend, BackendError};
use crate::assets;
use crate::core::{ChatRequest, TokenScore};

/// Leading words that mark a sentence as a question for terminal-punctuation
/// repair.
pub const INTERROGATIVE_LEADS: [&str; 15] = [
    "what", "who", "where", "when", "why", "how", "which", "is", "are", "do", "does", "can",
    "could", "should", "would",
];

/// Punctuation that binds to the preceding word: no space before, one space
/// after when a letter follows.
const SPACED_PUNCT: [char; 6] = ['.', ',', '?', '!', ';', ':'];

const TERMINAL_PUNCT: [char; 3] = ['.', '?', '!'];

/// Deterministic punctuation and capitalization corrector.
///
/// In order: collapse runs of whitespace; normalize spacing around
/// punctuation; lowercase words with mixed internal case, restoring the
/// canonical form of any that are known proper nouns; capitalize sentence
/// starts; and ensure terminal punctuation, appending "?" when the text
/// leads with an interrogative word and "." otherwise.
///
/// The function is idempotent and changes letters only by case.
pub fn rule_stage1_refine(
    text: &str,
    proper_nouns: &BTreeSet<String>,
) -> Result<String, BackendError> {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if collapsed.is_empty() {
        return Err(BackendError::EmptyInput);
    }
    let spaced = normalize_punct_spacing(&collapsed);

    let canon: BTreeMap<String, String> = proper_nouns
        .iter()
        .map(|p| (p.to_lowercase(), canonical_form(p)))
        .collect();
    let mut words: Vec<String> = spaced
        .split(' ')
        .map(|w| fix_word_case(w, &canon))
        .collect();

    let mut sentence_start = true;
    for word in words.iter_mut() {
        if sentence_start {
            capitalize_first_letter(word);
        }
        sentence_start = word
            .chars()
            .last()
            .map(|c| TERMINAL_PUNCT.contains(&c))
            .unwrap_or(false);
    }

    let mut out = words.join(" ");
    let ends_terminal = out
        .chars()
        .last()
        .map(|c| TERMINAL_PUNCT.contains(&c))
        .unwrap_or(false);
    if !ends_terminal {
        let lead = word_head(&words[0]).to_lowercase();
        if INTERROGATIVE_LEADS.contains(&lead.as_str()) {
            out.push('?');
        } else {
            out.push('.');
        }
    }
    Ok(out)
}

fn normalize_punct_spacing(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    for i in 0..chars.len() {
        let c = chars[i];
        if c == ' ' && i + 1 < chars.len() && SPACED_PUNCT.contains(&chars[i + 1]) {
            continue;
        }
        out.push(c);
        if SPACED_PUNCT.contains(&c) && i + 1 < chars.len() && chars[i + 1].is_ascii_alphabetic()
        {
            out.push(' ');
        }
    }
    out
}

/// Canonical replacement for a proper-noun entry: entries stored lowercase
/// are title-cased; anything else (e.g. "ViT") is kept verbatim.
fn canonical_form(entry: &str) -> String {
    if entry == entry.to_lowercase() {
        let mut s = entry.to_string();
        capitalize_first_letter(&mut s);
        s
    } else {
        entry.to_string()
    }
}

/// The word's alphanumeric core up to (not including) its first apostrophe.
/// Case decisions ignore possessive suffixes, so "GAN's" stays intact.
fn word_head(word: &str) -> String {
    let chars: Vec<char> = word.chars().collect();
    let (start, end) = core_span(&chars);
    chars[start..end]
        .iter()
        .take_while(|c| **c != '\'')
        .collect()
}

fn core_span(chars: &[char]) -> (usize, usize) {
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

/// True when the head has an uppercase letter beyond its first character
/// without being fully capitalized ("fRAnce" and "caPital" qualify; "GAN",
/// "France", and "a" do not).
pub(crate) fn mixed_case_head(head: &str) -> bool {
    let letters: Vec<char> = head.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() < 2 {
        return false;
    }
    let upper_after_first = head.chars().skip(1).any(|c| c.is_uppercase());
    let all_caps = letters.iter().all(|c| c.is_uppercase());
    upper_after_first && !all_caps
}

fn fix_word_case(word: &str, canon: &BTreeMap<String, String>) -> String {
    let chars: Vec<char> = word.chars().collect();
    let (start, end) = core_span(&chars);
    if start >= end {
        return word.to_string();
    }
    let core: String = chars[start..end].iter().collect();
    let head_len = core.chars().take_while(|c| *c != '\'').count();
    let head: String = core.chars().take(head_len).collect();
    if !mixed_case_head(&head) {
        return word.to_string();
    }
    let tail: String = core.chars().skip(head_len).collect();
    let fixed_head = canon
        .get(&head.to_lowercase())
        .cloned()
        .unwrap_or_else(|| head.to_lowercase());
    let prefix: String = chars[..start].iter().collect();
    let suffix: String = chars[end..].iter().collect();
    format!("{prefix}{fixed_head}{}{suffix}", tail.to_lowercase())
}

fn capitalize_first_letter(word: &mut String) {
    // ASCII-only so case repair never changes the letter sequence itself
    // (e.g. the German sharp s expands under Unicode uppercasing).
    if let Some((idx, c)) = word.char_indices().find(|(_, c)| c.is_alphabetic()) {
        if c.is_ascii_lowercase() {
            let upper = c.to_ascii_uppercase().to_string();
            word.replace_range(idx..idx + c.len_utf8(), &upper);
        }
    }
}

/// [`Backend`] wrapper over [`rule_stage1_refine`]: `complete` treats the
/// request's user text as the raw prompt to repair (no template parsing),
/// using the built-in proper-noun list. Token scoring is unsupported.
pub struct RuleBackend {
    id: String,
    proper_nouns: BTreeSet<String>,
    calls: AtomicU64,
}

impl RuleBackend {
    pub fn new(id: &str) -> Self {
        RuleBackend {
            id: id.to_string(),
            proper_nouns: assets::default_proper_nouns(),
            calls: AtomicU64::new(0),
        }
    }
}

#[async_trait]
impl Backend for RuleBackend {
    fn id(&self) -> &str {
        &self.id
    }

    async fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        rule_stage1_refine(&req.user, &self.proper_nouns)
    }

    async fn score_tokens(&self, _text: &str) -> Result<Vec<TokenScore>, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Err(BackendError::Unsupported(
            "token scoring (rule backend)".to_string(),
        ))
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}
