//! Uniform interface to language-model capabilities.
//!
//! Three implementations stand behind one trait: an OpenAI-compatible HTTP
//! client, a fully deterministic mock driven by a rule table, and a
//! rule-based stage-1 corrector that needs no model at all. Everything
//! downstream (pipeline, judge, harness) talks only to [`Backend`].

mod http;
mod mock;
mod rules;

use std::sync::Arc;

use async_trait::async_trait;
use thiserror::Error;

use crate::core::{BackendKind, BackendSpec, ChatRequest, TokenScore};

pub use http::HttpBackend;
pub use mock::{surrogate_scores, MatchSpec, MockBackend, MockRule, MockTable, Respond};
pub use rules::{rule_stage1_refine, RuleBackend, INTERROGATIVE_LEADS};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("request timed out after {0} ms")]
    Timeout(u64),
    #[error("http status {status}: {detail}")]
    HttpStatus { status: u16, detail: String },
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("backend does not support {0}")]
    Unsupported(String),
    #[error("input text is empty")]
    EmptyInput,
    #[error("invalid backend spec: {0}")]
    InvalidSpec(String),
    #[error("no mock rule matched request starting {0:?}")]
    NoRuleMatched(String),
}

/// A language-model endpoint: chat completion plus token-level scoring.
///
/// Implementations must be safe to call from many tasks at once. `calls`
/// counts requests issued through this instance, which lets tests assert
/// that skipped phases really made no model calls.
#[async_trait]
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    async fn complete(&self, req: &ChatRequest) -> Result<String, BackendError>;

    async fn score_tokens(&self, text: &str) -> Result<Vec<TokenScore>, BackendError>;

    fn calls(&self) -> u64;
}

/// Builds the implementation a `BackendSpec` names. HTTP specs must carry a
/// base URL and model name; mock specs may point at a rule-table JSON file,
/// otherwise the built-in table is used.
pub fn build_backend(spec: &BackendSpec) -> Result<Arc<dyn Backend>, BackendError> {
    if spec.id.is_empty() {
        return Err(BackendError::InvalidSpec("backend id is empty".to_string()));
    }
    match spec.kind {
        BackendKind::Http => {
            if spec.base_url.is_none() || spec.model_name.is_none() {
                return Err(BackendError::InvalidSpec(format!(
                    "http backend {:?} requires base_url and model_name",
                    spec.id
                )));
            }
            Ok(Arc::new(HttpBackend::new(spec)?))
        }
        BackendKind::Mock => Ok(Arc::new(MockBackend::from_spec(spec)?)),
        BackendKind::RuleStage1 => Ok(Arc::new(RuleBackend::new(&spec.id))),
    }
}
