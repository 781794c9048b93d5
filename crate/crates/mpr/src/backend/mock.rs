//! Deterministic mock backend driven by a rule table.
//!
//! The table is ordered: the first rule whose matcher accepts the request
//! wins. A rule either returns literal text or runs a named builtin over
//! arguments extracted from the user text by the rule's regex (whole user
//! text when no regex is given or it fails to match). Builtins are pure
//! functions, so identical requests always produce identical responses and
//! experiments against the mock are bit-reproducible.
//!
//! The shipped default table routes each pipeline role's template to a
//! matching builtin and pins a handful of fixture responses used by tests;
//! custom tables can be loaded from JSON files.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

use async_trait::async_trait;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::rules::{mixed_case_head, rule_stage1_refine};
use super::{Backend, BackendError};
use crate::assets;
use crate::core::{BackendSpec, ChatRequest, TokenScore};

/// Substring matcher: every listed fragment must appear in the respective
/// message part.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MatchSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub user_contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub system_contains: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Respond {
    Text { text: String },
    Builtin { builtin: String },
}

/// One row of the table. `template_id` names the pipeline role the rule
/// serves; it is descriptive, matching is by `match` alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    pub template_id: String,
    #[serde(rename = "match", default)]
    pub matcher: MatchSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub args_regex: Option<String>,
    pub respond: Respond,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockTable {
    pub version: u32,
    pub rules: Vec<MockRule>,
}

impl MockTable {
    pub fn from_json(json: &str) -> Result<Self, BackendError> {
        serde_json::from_str(json)
            .map_err(|e| BackendError::InvalidSpec(format!("mock table JSON: {e}")))
    }

    /// The built-in table covering every pipeline role.
    pub fn built_in() -> Self {
        Self::from_json(assets::default_mock_table_json()).expect("built-in mock table parses")
    }
}

struct CompiledRule {
    matcher: MatchSpec,
    args_regex: Option<Regex>,
    respond: Respond,
}

pub struct MockBackend {
    id: String,
    rules: Vec<CompiledRule>,
    calls: AtomicU64,
}

impl MockBackend {
    pub fn new(id: &str, table: &MockTable) -> Result<Self, BackendError> {
        let rules = table
            .rules
            .iter()
            .map(|rule| {
                let args_regex = rule
                    .args_regex
                    .as_deref()
                    .map(Regex::new)
                    .transpose()
                    .map_err(|e| {
                        BackendError::InvalidSpec(format!(
                            "rule for {:?}: bad args_regex: {e}",
                            rule.template_id
                        ))
                    })?;
                Ok(CompiledRule {
                    matcher: rule.matcher.clone(),
                    args_regex,
                    respond: rule.respond.clone(),
                })
            })
            .collect::<Result<Vec<_>, BackendError>>()?;
        Ok(MockBackend {
            id: id.to_string(),
            rules,
            calls: AtomicU64::new(0),
        })
    }

    /// Builds from a spec, loading `mock_table` from disk when set and
    /// falling back to the built-in table.
    pub fn from_spec(spec: &BackendSpec) -> Result<Self, BackendError> {
        let table = match &spec.mock_table {
            Some(path) => {
                let json = std::fs::read_to_string(path).map_err(|e| {
                    BackendError::InvalidSpec(format!("mock table {}: {e}", path.display()))
                })?;
                MockTable::from_json(&json)?
            }
            None => MockTable::built_in(),
        };
        Self::new(&spec.id, &table)
    }
}

#[async_trait]
impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    async fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if req.user.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let system = req.system.as_deref().unwrap_or("");
        for rule in &self.rules {
            let hits = rule
                .matcher
                .user_contains
                .iter()
                .all(|s| req.user.contains(s))
                && rule
                    .matcher
                    .system_contains
                    .iter()
                    .all(|s| system.contains(s));
            if !hits {
                continue;
            }
            let args: Vec<String> = match &rule.args_regex {
                Some(re) => match re.captures(&req.user) {
                    Some(caps) => (1..caps.len())
                        .map(|i| caps.get(i).map(|m| m.as_str().to_string()).unwrap_or_default())
                        .collect(),
                    None => vec![req.user.clone()],
                },
                None => vec![req.user.clone()],
            };
            return match &rule.respond {
                Respond::Text { text } => Ok(text.clone()),
                Respond::Builtin { builtin } => run_builtin(builtin, &args),
            };
        }
        let head: String = req.user.chars().take(48).collect();
        Err(BackendError::NoRuleMatched(head))
    }

    async fn score_tokens(&self, text: &str) -> Result<Vec<TokenScore>, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        surrogate_scores(text)
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Deterministic logprob surrogate: tokens split on whitespace score
/// -(1 + 0.1 * noisy_chars) - 0.05 * |len - 5|, where noisy characters are
/// anything outside ASCII alphanumerics and space. Inserting noise into a
/// token strictly lowers its logprob, which is what ranking tests need.
pub fn surrogate_scores(text: &str) -> Result<Vec<TokenScore>, BackendError> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(BackendError::EmptyInput);
    }
    Ok(tokens
        .into_iter()
        .map(|token| {
            let noise = token
                .chars()
                .filter(|c| !(c.is_ascii_alphanumeric() || *c == ' '))
                .count() as f64;
            let len = token.chars().count() as f64;
            TokenScore {
                token: token.to_string(),
                logprob: -(1.0 + 0.1 * noise) - 0.05 * (len - 5.0).abs(),
            }
        })
        .collect())
}

// --- builtin catalog -------------------------------------------------------

/// Common misspellings the stage-2 builtin repairs, including the corrupted
/// key terms that QWERTY-neighbor damage produces (gam for gan, and the
/// lexicon forms vert/vlt).
const MISSPELLINGS: [(&str, &str); 11] = [
    ("teh", "the"),
    ("recieve", "receive"),
    ("beleive", "believe"),
    ("definately", "definitely"),
    ("seperate", "separate"),
    ("occured", "occurred"),
    ("wich", "which"),
    ("adress", "address"),
    ("gam", "gan"),
    ("vert", "bert"),
    ("vlt", "vit"),
];

/// Token cores that only appear in term-corrupted text.
const CORRUPTED_TERM_CORES: [&str; 3] = ["vert", "vlt", "gam"];

struct RareTerm {
    core: &'static str,
    /// Lowercase phrase whose presence marks the term as already explained.
    expansion: &'static str,
    /// First-draft description, deliberately missing the expansion so the
    /// sufficiency check asks for another iteration.
    weak: Option<&'static str>,
    full: &'static str,
}

const RARE_TERMS: [RareTerm; 4] = [
    RareTerm {
        core: "vit",
        expansion: "vision transformer",
        weak: None,
        full: "ViT, or Vision Transformer, is a deep learning model used for image recognition tasks.",
    },
    RareTerm {
        core: "bert",
        expansion: "bidirectional encoder",
        weak: None,
        full: "BERT, or Bidirectional Encoder Representations from Transformers, is a language model that reads text in both directions.",
    },
    RareTerm {
        core: "gan",
        expansion: "generative adversarial",
        weak: None,
        full: "GAN, or Generative Adversarial Network, is a pair of neural networks trained in competition with each other.",
    },
    RareTerm {
        core: "qlora",
        expansion: "quantized low-rank",
        weak: Some("QLoRA is a fine-tuning technique."),
        full: "QLoRA, or Quantized Low-Rank Adaptation, is a method for fine-tuning large language models on limited hardware.",
    },
];

const PARAPHRASES: [(&str, &str); 3] = [
    (
        "tell me about transformers",
        "Can you explain how Transformer-based neural networks work?",
    ),
    (
        "tell me about gan",
        "Can you explain what a Generative Adversarial Network does and how it is trained?",
    ),
    (
        "explain qlora",
        "Can you walk me through how QLoRA fine-tunes a large language model?",
    ),
];

fn run_builtin(name: &str, args: &[String]) -> Result<String, BackendError> {
    let arg = |i: usize| args.get(i).map(String::as_str).unwrap_or("");
    let unary = || {
        if args.len() >= 2 { arg(1) } else { arg(0) }
    };
    match name {
        "classify" => Ok(builtin_classify(arg(0))),
        "stage1" => Ok(builtin_stage1(arg(0))),
        "fix_typos" => Ok(builtin_fix_typos(arg(0))),
        "paraphrase" => Ok(builtin_paraphrase(arg(0))),
        "combined" => Ok(builtin_paraphrase(&builtin_fix_typos(&builtin_stage1(
            arg(0),
        )))),
        "sufficiency" => Ok(builtin_sufficiency(arg(0))),
        "describe" => Ok(builtin_describe(arg(0), if args.len() >= 2 { arg(1) } else { arg(0) })),
        "answer" => Ok(format!("Responding to: {}", arg(0))),
        "judge_hi" => Ok(format!("{:.2}", mess_score(unary()))),
        "judge_cqs" => Ok(format!(
            "{:.2}",
            (1.0 - 0.75 * mess_score(unary())).clamp(0.0, 1.0)
        )),
        "judge_relevance" => Ok(builtin_relevance(arg(0), unary())),
        "judge_coherence" => Ok(builtin_coherence(unary())),
        "judge_pair" => {
            if args.len() < 3 {
                return Err(BackendError::InvalidSpec(
                    "judge_pair builtin needs (question, answer_a, answer_b) args".to_string(),
                ));
            }
            Ok(builtin_pair(arg(1), arg(2)))
        }
        other => Err(BackendError::InvalidSpec(format!(
            "unknown builtin {other:?}"
        ))),
    }
}

fn token_cores(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|c| !c.is_empty())
        .collect()
}

fn normalize_key(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .to_lowercase()
        .trim_end_matches(['.', '?', '!'])
        .trim_end()
        .to_string()
}

fn misspelling_fix(core_lower: &str) -> Option<&'static str> {
    MISSPELLINGS
        .iter()
        .find(|(bad, _)| *bad == core_lower)
        .map(|(_, good)| *good)
}

fn lower_proper_nouns() -> BTreeSet<String> {
    assets::default_proper_nouns()
        .iter()
        .map(|p| p.to_lowercase())
        .collect()
}

/// Heuristic damage score in [0, 1]: weighs mixed-case tokens, known
/// misspellings, corrupted key terms, and a missing sentence terminator.
/// Known proper nouns (ViT and friends) never count as mixed case.
pub(crate) fn mess_score(text: &str) -> f64 {
    let proper = lower_proper_nouns();
    let mut mixed = 0u32;
    let mut misspelled = 0u32;
    let mut corrupted = 0u32;
    for word in text.split_whitespace() {
        let core = word.trim_matches(|c: char| !c.is_alphanumeric());
        if core.is_empty() {
            continue;
        }
        let lower = core.to_lowercase();
        if CORRUPTED_TERM_CORES.contains(&lower.as_str()) {
            corrupted += 1;
        } else if misspelling_fix(&lower).is_some() {
            misspelled += 1;
        } else if mixed_case_head(core) && !proper.contains(&lower) {
            mixed += 1;
        }
    }
    let missing_terminal = !text.trim_end().ends_with(['.', '?', '!']);
    let score = 0.15 * f64::from(mixed)
        + 0.2 * f64::from(misspelled)
        + 0.25 * f64::from(corrupted)
        + if missing_terminal { 0.1 } else { 0.0 };
    score.min(1.0)
}

/// Severity-ordered heuristic: corrupted key terms or a vague "tell me
/// about" lead read as stage 3, known misspellings as stage 2, case or
/// punctuation damage as stage 1, anything else as clean.
fn builtin_classify(text: &str) -> String {
    let cores = token_cores(text);
    let vague_lead = normalize_key(text).starts_with("tell me about");
    if vague_lead || cores.iter().any(|c| c == "vert" || c == "vlt") {
        return "3".to_string();
    }
    if cores.iter().any(|c| misspelling_fix(c).is_some()) {
        return "2".to_string();
    }
    let proper = lower_proper_nouns();
    let mixed = text.split_whitespace().any(|w| {
        let core = w.trim_matches(|c: char| !c.is_alphanumeric());
        mixed_case_head(core) && !proper.contains(&core.to_lowercase())
    });
    let first_lower = text
        .chars()
        .find(|c| c.is_alphabetic())
        .map(|c| c.is_lowercase())
        .unwrap_or(false);
    let missing_terminal = !text.trim_end().ends_with(['.', '?', '!']);
    let space_before_punct = [" .", " ,", " ?", " !", " ;", " :"]
        .iter()
        .any(|p| text.contains(p));
    if mixed || first_lower || missing_terminal || space_before_punct || text.contains("  ") {
        return "1".to_string();
    }
    "0".to_string()
}

fn builtin_stage1(text: &str) -> String {
    rule_stage1_refine(text, &assets::default_proper_nouns())
        .unwrap_or_else(|_| text.to_string())
}

/// Maps a correction onto the original casing: per character when lengths
/// match, otherwise by the word's overall shape.
fn case_map(original: &str, correction: &str) -> String {
    let orig: Vec<char> = original.chars().collect();
    let corr: Vec<char> = correction.chars().collect();
    if orig.len() == corr.len() {
        return orig
            .iter()
            .zip(corr.iter())
            .map(|(o, c)| {
                if o.is_ascii_uppercase() {
                    c.to_ascii_uppercase()
                } else {
                    c.to_ascii_lowercase()
                }
            })
            .collect();
    }
    let letters: Vec<char> = orig.iter().copied().filter(|c| c.is_alphabetic()).collect();
    if !letters.is_empty() && letters.iter().all(|c| c.is_ascii_uppercase()) {
        correction.to_ascii_uppercase()
    } else if orig[0].is_ascii_uppercase() {
        let mut s = correction.to_ascii_lowercase();
        s[..1].make_ascii_uppercase();
        s
    } else {
        correction.to_ascii_lowercase()
    }
}

fn builtin_fix_typos(text: &str) -> String {
    text.split_whitespace()
        .map(|word| {
            let chars: Vec<char> = word.chars().collect();
            let start = chars
                .iter()
                .position(|c| c.is_alphanumeric())
                .unwrap_or(chars.len());
            let end = chars
                .iter()
                .rposition(|c| c.is_alphanumeric())
                .map(|i| i + 1)
                .unwrap_or(start);
            if start >= end {
                return word.to_string();
            }
            let core: String = chars[start..end].iter().collect();
            match misspelling_fix(&core.to_lowercase()) {
                Some(fix) => {
                    let prefix: String = chars[..start].iter().collect();
                    let suffix: String = chars[end..].iter().collect();
                    format!("{prefix}{}{suffix}", case_map(&core, fix))
                }
                None => word.to_string(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn builtin_paraphrase(text: &str) -> String {
    let key = normalize_key(text);
    PARAPHRASES
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v.to_string())
        .unwrap_or_else(|| text.to_string())
}

/// YES unless a rare term occurs without its expansion phrase anywhere in
/// the text.
fn builtin_sufficiency(text: &str) -> String {
    let lower = text.to_lowercase();
    let cores: BTreeSet<String> = token_cores(text).into_iter().collect();
    for term in &RARE_TERMS {
        if cores.contains(term.core) && !lower.contains(term.expansion) {
            return "NO".to_string();
        }
    }
    "YES".to_string()
}

/// Describes the first rare term in the text. Terms with a weak first
/// draft return it only when no previous description is offered, so a
/// second iteration visibly improves on the first.
fn builtin_describe(previous: &str, text: &str) -> String {
    for core in token_cores(text) {
        if let Some(term) = RARE_TERMS.iter().find(|t| t.core == core) {
            let first_draft = previous.trim().is_empty();
            return if first_draft {
                term.weak.unwrap_or(term.full).to_string()
            } else {
                term.full.to_string()
            };
        }
    }
    "The text is self-explanatory and needs no additional context.".to_string()
}

/// 0.5 base plus content-word recall: how many prompt tokens (length >= 3)
/// reappear in the description.
fn builtin_relevance(prompt: &str, description: &str) -> String {
    let content: BTreeSet<String> = token_cores(prompt)
        .into_iter()
        .filter(|c| c.chars().count() >= 3)
        .collect();
    let desc_tokens: BTreeSet<String> = token_cores(description).into_iter().collect();
    let score = if content.is_empty() {
        1.0
    } else {
        let hits = content.iter().filter(|c| desc_tokens.contains(*c)).count();
        0.5 + 0.5 * hits as f64 / content.len() as f64
    };
    format!("{score:.2}")
}

fn builtin_coherence(description: &str) -> String {
    let mut score: f64 = 0.55;
    if description
        .chars()
        .find(|c| c.is_alphabetic())
        .map(|c| c.is_uppercase())
        .unwrap_or(false)
    {
        score += 0.15;
    }
    if description.trim_end().ends_with('.') {
        score += 0.15;
    }
    let words = description.split_whitespace().count();
    if (6..=60).contains(&words) {
        score += 0.15;
    }
    format!("{:.2}", score.min(1.0))
}

/// The less damaged answer wins; equal damage is a tie.
fn builtin_pair(answer_a: &str, answer_b: &str) -> String {
    let (a, b) = (mess_score(answer_a), mess_score(answer_b));
    if (a - b).abs() < 1e-9 {
        "TIE".to_string()
    } else if a < b {
        "A".to_string()
    } else {
        "B".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn backend() -> MockBackend {
        MockBackend::new("mock", &MockTable::built_in()).unwrap()
    }

    fn filled(template_key: &str, prompt: &str) -> String {
        assets::default_prompt_templates()[template_key].replace("{prompt}", prompt)
    }

    #[tokio::test]
    async fn stage1_template_repairs_the_france_example() {
        let b = backend();
        let req = ChatRequest::new("m", filled("stage1", "what is the caPital of fRAnce?"));
        assert_eq!(
            b.complete(&req).await.unwrap(),
            "What is the capital of France?"
        );
    }

    #[tokio::test]
    async fn identical_requests_get_identical_responses() {
        let b = backend();
        let req = ChatRequest::new("m", filled("classify", "what is a VlT"));
        let first = b.complete(&req).await.unwrap();
        let second = b.complete(&req).await.unwrap();
        assert_eq!(first, second);
        assert_eq!(b.calls(), 2);
    }

    #[tokio::test]
    async fn classifier_orders_stage_evidence_by_severity() {
        let b = backend();
        for (text, expected) in [
            ("What is the capital of France?", "0"),
            ("what is the caPital of fRAnce", "1"),
            ("What is a GAM model?", "2"),
            ("Is a VlT useful for image tasks?", "3"),
            ("tell me about transformers", "3"),
        ] {
            let req = ChatRequest::new("m", filled("classify", text));
            assert_eq!(b.complete(&req).await.unwrap(), expected, "for {text:?}");
        }
    }

    #[tokio::test]
    async fn typo_fixer_repairs_gam_to_gan() {
        let b = backend();
        let req = ChatRequest::new("m", filled("stage2", "What is a GAM model?"));
        assert_eq!(b.complete(&req).await.unwrap(), "What is a GAN model?");
        let req = ChatRequest::new("m", filled("stage2", "Is a VlT useful? teh answer"));
        assert_eq!(
            b.complete(&req).await.unwrap(),
            "Is a ViT useful? the answer"
        );
    }

    #[tokio::test]
    async fn paraphrase_rewrites_vague_transformer_prompt() {
        let b = backend();
        let req = ChatRequest::new("m", filled("stage3", "Tell me about transformers"));
        assert_eq!(
            b.complete(&req).await.unwrap(),
            "Can you explain how Transformer-based neural networks work?"
        );
        let req = ChatRequest::new("m", filled("stage3", "Define entropy."));
        assert_eq!(b.complete(&req).await.unwrap(), "Define entropy.");
    }

    #[tokio::test]
    async fn sufficiency_flips_once_context_is_present() {
        let b = backend();
        let req = ChatRequest::new("m", filled("reflect", "What is a ViT?"));
        assert_eq!(b.complete(&req).await.unwrap(), "NO");
        let with_context = "What is a ViT?\n\nContext: ViT, or Vision Transformer, is a deep learning model used for image recognition tasks.";
        let req = ChatRequest::new("m", filled("reflect", with_context));
        assert_eq!(b.complete(&req).await.unwrap(), "YES");
        let req = ChatRequest::new("m", filled("reflect", "What is the capital of France?"));
        assert_eq!(b.complete(&req).await.unwrap(), "YES");
    }

    #[tokio::test]
    async fn describer_improves_on_a_weak_first_draft() {
        let b = backend();
        let template = assets::default_prompt_templates()["describe"].clone();
        let first = template
            .replace("{candidate}", "")
            .replace("{prompt}", "How does QLoRA work?");
        let draft = b.complete(&ChatRequest::new("m", first)).await.unwrap();
        assert_eq!(draft, "QLoRA is a fine-tuning technique.");
        let second = template
            .replace("{candidate}", &draft)
            .replace("{prompt}", "How does QLoRA work?");
        let improved = b.complete(&ChatRequest::new("m", second)).await.unwrap();
        assert!(improved.contains("Quantized Low-Rank Adaptation"));
    }

    #[tokio::test]
    async fn catch_all_answer_echoes_prompt() {
        let b = backend();
        let req = ChatRequest::new("m", "Why is the sky blue?");
        assert_eq!(
            b.complete(&req).await.unwrap(),
            "Responding to: Why is the sky blue?"
        );
    }

    #[tokio::test]
    async fn judge_fixtures_return_pinned_texts() {
        let b = backend();
        let hi = assets::default_judge_templates()["hi"].clone();
        for (marker, expected) in [
            ("FMT_PLAIN", "0.85"),
            ("FMT_PREFIX", "Score: 0.7"),
            ("FMT_RATIO", "85/100"),
            ("FMT_GARBAGE", "the answer is excellent"),
            ("FMT_RANGE", "1.7"),
        ] {
            let user = hi
                .replace("{question}", marker)
                .replace("{answer}", "placeholder");
            let got = b.complete(&ChatRequest::new("m", user)).await.unwrap();
            assert_eq!(got, expected, "for {marker}");
        }
    }

    #[tokio::test]
    async fn judge_surrogates_score_damage() {
        let b = backend();
        let hi = assets::default_judge_templates()["hi"].clone();
        let clean = hi
            .replace("{question}", "q")
            .replace("{answer}", "Paris is in Europe.");
        assert_eq!(b.complete(&ChatRequest::new("m", clean)).await.unwrap(), "0.00");
        let messy = assets::default_judge_templates()["hi"]
            .replace("{question}", "q")
            .replace("{answer}", "pariS is a plaCe");
        let got: f64 = b
            .complete(&ChatRequest::new("m", messy))
            .await
            .unwrap()
            .parse()
            .unwrap();
        assert!(got > 0.0);

        let pair = assets::default_judge_templates()["pairwise"]
            .replace("{question}", "q")
            .replace("{answer_a}", "A clean answer.")
            .replace("{answer_b}", "a meSsy answEr");
        assert_eq!(b.complete(&ChatRequest::new("m", pair)).await.unwrap(), "A");
    }

    #[test]
    fn surrogate_scores_match_the_documented_formula() {
        let scores = surrogate_scores("hello there").unwrap();
        assert_eq!(scores.len(), 2);
        assert_eq!(scores[0].logprob, -1.0);
        assert_eq!(scores[1].logprob, -1.0);

        let clean: f64 = surrogate_scores("hello").unwrap()[0].logprob;
        let noisy: f64 = surrogate_scores("he@@llo").unwrap()[0].logprob;
        assert!(noisy < clean);
        assert!(surrogate_scores("   ").is_err());
    }

    #[test]
    fn case_map_preserves_shapes() {
        assert_eq!(case_map("GAM", "gan"), "GAN");
        assert_eq!(case_map("VlT", "vit"), "ViT");
        assert_eq!(case_map("Teh", "the"), "The");
        assert_eq!(case_map("WICH", "which"), "WHICH");
        assert_eq!(case_map("Wich", "which"), "Which");
        assert_eq!(case_map("adress", "address"), "address");
    }

    #[tokio::test]
    async fn empty_table_matches_nothing() {
        let table = MockTable { version: 1, rules: vec![] };
        let b = MockBackend::new("m", &table).unwrap();
        let err = b.complete(&ChatRequest::new("m", "hi")).await.unwrap_err();
        assert!(matches!(err, BackendError::NoRuleMatched(_)));
    }
}
