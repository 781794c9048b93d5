//! LLM-as-judge scoring with robust response parsing.
//!
//! Pointwise facets: hallucination index (0 = fully factual), content
//! quality (1 = best), and description relevance/coherence. Pairwise
//! comparisons feed win-rate aggregation and are de-biased by asking twice
//! with the answer order swapped; the two calls must agree or the result
//! is a tie.
//!
//! Judge replies are free text. Parsing takes the first numeric literal
//! (with "/100" ratios normalized) and never clamps: an out-of-range
//! literal is a typed error. A failed parse re-asks up to twice, each time
//! appending a stricter instruction line, which deliberately changes the
//! request (and so any cache key).

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets;
use crate::backend::{Backend, BackendError};
use crate::core::{ChatRequest, ComparisonOutcome};

/// Re-asks allowed after the first failed parse.
pub const MAX_REASKS: u32 = 2;

const SCORE_REASK_LINES: [&str; 2] = [
    "\n\nReply with only a single number between 0 and 1.",
    "\n\nYour entire reply must be exactly one number between 0 and 1, with no other words.",
];

const VERDICT_REASK_LINES: [&str; 2] = [
    "\n\nReply with exactly one of: A, B, TIE.",
    "\n\nYour entire reply must be exactly A, B, or TIE, with no other words.",
];

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("could not parse a verdict from judge response {0:?}")]
    Unparseable(String),
    #[error("judge score {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("{0} is empty")]
    EmptyInput(&'static str),
    #[error("judge template {0:?} is missing")]
    MissingTemplate(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// What the judge actually said, with the parse outcome and how many
/// attempts it took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdictRaw {
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed_outcome: Option<ComparisonOutcome>,
    pub attempts: u32,
}

/// Description facets scored by [`JudgeClient::score_description`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facet {
    Relevance,
    Coherence,
}

impl Facet {
    pub fn template_key(self) -> &'static str {
        match self {
            Facet::Relevance => "relevance",
            Facet::Coherence => "coherence",
        }
    }
}

/// Extracts the first numeric literal from judge text. A "/100" suffix
/// normalizes the value into the unit interval; anything outside [0, 1]
/// after normalization is an error, never clamped.
pub fn parse_unit_score(text: &str) -> Result<f64, JudgeError> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(\d+(?:\.\d+)?)(\s*/\s*100)?").expect("score regex compiles")
    });
    let caps = re
        .captures(text)
        .ok_or_else(|| JudgeError::Unparseable(text.to_string()))?;
    let mut value: f64 = caps[1]
        .parse()
        .map_err(|_| JudgeError::Unparseable(text.to_string()))?;
    if caps.get(2).is_some() {
        value /= 100.0;
    }
    if !(0.0..=1.0).contains(&value) {
        return Err(JudgeError::OutOfRange(value));
    }
    Ok(value)
}

/// Extracts a pairwise verdict. A whole word "tie" (any case) anywhere
/// wins first; otherwise the first stand-alone uppercase "A" or "B"
/// decides, so articles in prose do not count.
pub fn parse_verdict(text: &str) -> Result<ComparisonOutcome, JudgeError> {
    static WORDS: OnceLock<Regex> = OnceLock::new();
    let words = WORDS.get_or_init(|| Regex::new(r"[A-Za-z]+").expect("word regex compiles"));
    let mut first_ab: Option<ComparisonOutcome> = None;
    for word in words.find_iter(text) {
        let w = word.as_str();
        if w.eq_ignore_ascii_case("tie") {
            return Ok(ComparisonOutcome::Tie);
        }
        if first_ab.is_none() {
            if w == "A" {
                first_ab = Some(ComparisonOutcome::Win);
            } else if w == "B" {
                first_ab = Some(ComparisonOutcome::Loss);
            }
        }
    }
    first_ab.ok_or_else(|| JudgeError::Unparseable(text.to_string()))
}

/// Scoring facade over one judge backend and its template set.
pub struct JudgeClient {
    backend: Arc<dyn Backend>,
    templates: BTreeMap<String, String>,
}

impl JudgeClient {
    pub fn new(
        backend: Arc<dyn Backend>,
        templates: BTreeMap<String, String>,
    ) -> Result<Self, JudgeError> {
        for key in assets::JUDGE_TEMPLATE_KEYS {
            if !templates.contains_key(key) {
                return Err(JudgeError::MissingTemplate(key.to_string()));
            }
        }
        Ok(JudgeClient { backend, templates })
    }

    pub fn with_default_templates(backend: Arc<dyn Backend>) -> Self {
        Self::new(backend, assets::default_judge_templates()).expect("default templates complete")
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.backend
    }

    fn template(&self, key: &str) -> Result<&str, JudgeError> {
        self.templates
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| JudgeError::MissingTemplate(key.to_string()))
    }

    async fn complete(&self, user: String) -> Result<String, JudgeError> {
        let req = ChatRequest::new(self.backend.id(), user);
        Ok(self.backend.complete(&req).await?)
    }

    /// Asks, then re-asks with progressively stricter instructions while
    /// the response fails to parse.
    async fn ask_score(&self, base_prompt: &str) -> Result<JudgeVerdictRaw, JudgeError> {
        let mut prompt = base_prompt.to_string();
        let mut last_err = None;
        for attempt in 0..=MAX_REASKS {
            if attempt > 0 {
                prompt.push_str(SCORE_REASK_LINES[(attempt - 1) as usize]);
            }
            let raw = self.complete(prompt.clone()).await?;
            match parse_unit_score(&raw) {
                Ok(score) => {
                    return Ok(JudgeVerdictRaw {
                        raw_text: raw,
                        parsed_score: Some(score),
                        parsed_outcome: None,
                        attempts: attempt + 1,
                    })
                }
                Err(err) => last_err = Some(err),
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    async fn ask_verdict(&self, base_prompt: &str) -> Result<JudgeVerdictRaw, JudgeError> {
        let mut prompt = base_prompt.to_string();
        let mut last_err = None;
        for attempt in 0..=MAX_REASKS {
            if attempt > 0 {
                prompt.push_str(VERDICT_REASK_LINES[(attempt - 1) as usize]);
            }
            let raw = self.complete(prompt.clone()).await?;
            match parse_verdict(&raw) {
                Ok(outcome) => {
                    return Ok(JudgeVerdictRaw {
                        raw_text: raw,
                        parsed_score: None,
                        parsed_outcome: Some(outcome),
                        attempts: attempt + 1,
                    })
                }
                Err(err) => last_err = Some(err),
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    /// Hallucination index of an answer: 0 fully factual, 1 fabricated.
    pub async fn score_hallucination(
        &self,
        question: &str,
        answer: &str,
    ) -> Result<f64, JudgeError> {
        if question.is_empty() {
            return Err(JudgeError::EmptyInput("question"));
        }
        if answer.is_empty() {
            return Err(JudgeError::EmptyInput("answer"));
        }
        let prompt = self
            .template("hi")?
            .replace("{question}", question)
            .replace("{answer}", answer);
        Ok(self.ask_score(&prompt).await?.parsed_score.expect("score set"))
    }

    /// Content quality score: 1 highly relevant and coherent.
    pub async fn score_quality(&self, question: &str, answer: &str) -> Result<f64, JudgeError> {
        if question.is_empty() {
            return Err(JudgeError::EmptyInput("question"));
        }
        if answer.is_empty() {
            return Err(JudgeError::EmptyInput("answer"));
        }
        let prompt = self
            .template("cqs")?
            .replace("{question}", question)
            .replace("{answer}", answer);
        Ok(self.ask_score(&prompt).await?.parsed_score.expect("score set"))
    }

    /// Scores a generated description against its prompt on one facet.
    pub async fn score_description(
        &self,
        prompt: &str,
        description: &str,
        facet: Facet,
    ) -> Result<f64, JudgeError> {
        if prompt.is_empty() {
            return Err(JudgeError::EmptyInput("prompt"));
        }
        if description.is_empty() {
            return Err(JudgeError::EmptyInput("description"));
        }
        let user = self
            .template(facet.template_key())?
            .replace("{prompt}", prompt)
            .replace("{description}", description);
        Ok(self.ask_score(&user).await?.parsed_score.expect("score set"))
    }

    /// Pairwise comparison from `answer_a`'s perspective. The judge is
    /// asked twice with the order swapped; only agreement yields a win or
    /// loss, anything else is a tie.
    pub async fn compare_pair(
        &self,
        question: &str,
        answer_a: &str,
        answer_b: &str,
    ) -> Result<ComparisonOutcome, JudgeError> {
        if question.is_empty() {
            return Err(JudgeError::EmptyInput("question"));
        }
        if answer_a.is_empty() || answer_b.is_empty() {
            return Err(JudgeError::EmptyInput("answer"));
        }
        let template = self.template("pairwise")?;
        let forward = template
            .replace("{question}", question)
            .replace("{answer_a}", answer_a)
            .replace("{answer_b}", answer_b);
        let reversed = template
            .replace("{question}", question)
            .replace("{answer_a}", answer_b)
            .replace("{answer_b}", answer_a);
        let first = self
            .ask_verdict(&forward)
            .await?
            .parsed_outcome
            .expect("outcome set");
        let second_raw = self
            .ask_verdict(&reversed)
            .await?
            .parsed_outcome
            .expect("outcome set");
        let second = second_raw.inverted();
        if first == second {
            Ok(first)
        } else {
            Ok(ComparisonOutcome::Tie)
        }
    }
}
