//! OpenAI-compatible HTTP backend.
//!
//! Chat completion goes through `POST {base_url}/v1/chat/completions`,
//! token scoring through `POST {base_url}/v1/completions` with prompt echo
//! and logprobs. Server errors (5xx) and timeouts are retried with
//! exponential backoff up to `max_retries`; client errors (4xx) fail
//! immediately. A semaphore caps in-flight requests per backend.
//!
//! The API key is read from the environment variable named by
//! `api_key_env` once at construction. It is held only in memory here: it
//! is never logged, never part of `Debug` output, and never serialized
//! into caches or reports.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use super::{Backend, BackendError};
use crate::core::{BackendSpec, ChatRequest, TokenScore};

const DEFAULT_IN_FLIGHT_CAP: usize = 8;
const BACKOFF_BASE_MS: u64 = 100;

pub struct HttpBackend {
    id: String,
    base_url: String,
    model: String,
    api_key: Option<String>,
    timeout_ms: u64,
    max_retries: u32,
    client: reqwest::Client,
    semaphore: Semaphore,
    calls: AtomicU64,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("id", &self.id)
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("api_key_set", &self.api_key.is_some())
            .field("timeout_ms", &self.timeout_ms)
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

impl HttpBackend {
    pub fn new(spec: &BackendSpec) -> Result<Self, BackendError> {
        let base_url = spec
            .base_url
            .as_deref()
            .ok_or_else(|| BackendError::InvalidSpec("http backend needs base_url".to_string()))?
            .trim_end_matches('/')
            .to_string();
        let model = spec
            .model_name
            .clone()
            .ok_or_else(|| BackendError::InvalidSpec("http backend needs model_name".to_string()))?;
        let api_key = spec.api_key_env.as_deref().and_then(|var_name| {
            match std::env::var(var_name) {
                Ok(value) if !value.is_empty() => Some(value),
                _ => {
                    log::warn!(
                        "backend {}: environment variable {} is unset; sending unauthenticated requests",
                        spec.id,
                        var_name
                    );
                    None
                }
            }
        });
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(spec.timeout_ms))
            .build()
            .map_err(|e| BackendError::InvalidSpec(format!("http client: {e}")))?;
        Ok(HttpBackend {
            id: spec.id.clone(),
            base_url,
            model,
            api_key,
            timeout_ms: spec.timeout_ms,
            max_retries: spec.max_retries,
            client,
            semaphore: Semaphore::new(spec.in_flight_cap.unwrap_or(DEFAULT_IN_FLIGHT_CAP).max(1)),
            calls: AtomicU64::new(0),
        })
    }

    /// POSTs under the in-flight cap, retrying 5xx and timeouts with
    /// exponential backoff. 4xx and malformed bodies fail without retry.
    async fn post_json(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let _permit = self
            .semaphore
            .acquire()
            .await
            .map_err(|_| BackendError::Transport("admission semaphore closed".to_string()))?;
        let url = format!("{}{}", self.base_url, path);
        let mut attempt = 0u32;
        loop {
            let mut builder = self.client.post(&url).json(body);
            if let Some(key) = &self.api_key {
                builder = builder.bearer_auth(key);
            }
            let retryable = match builder.send().await {
                Err(e) if e.is_timeout() => BackendError::Timeout(self.timeout_ms),
                Err(e) => return Err(BackendError::Transport(e.to_string())),
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp.json::<Value>().await.map_err(|e| {
                            BackendError::MalformedResponse(format!("response body: {e}"))
                        });
                    }
                    let detail: String = resp
                        .text()
                        .await
                        .unwrap_or_default()
                        .chars()
                        .take(200)
                        .collect();
                    let err = BackendError::HttpStatus {
                        status: status.as_u16(),
                        detail,
                    };
                    if status.is_server_error() {
                        err
                    } else {
                        return Err(err);
                    }
                }
            };
            if attempt >= self.max_retries {
                return Err(BackendError::RetriesExhausted {
                    attempts: attempt + 1,
                    last: retryable.to_string(),
                });
            }
            let delay = BACKOFF_BASE_MS << attempt;
            log::debug!(
                "backend {}: attempt {} failed ({retryable}); retrying in {delay} ms",
                self.id,
                attempt + 1
            );
            tokio::time::sleep(Duration::from_millis(delay)).await;
            attempt += 1;
        }
    }
}

#[async_trait]
impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    async fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if req.user.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let mut messages = Vec::new();
        if let Some(system) = &req.system {
            messages.push(json!({ "role": "system", "content": system }));
        }
        messages.push(json!({ "role": "user", "content": req.user }));
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": req.temperature,
        });
        if let Some(max_tokens) = req.max_tokens {
            body["max_tokens"] = json!(max_tokens);
        }
        let value = self.post_json("/v1/chat/completions", &body).await?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                BackendError::MalformedResponse(
                    "missing choices[0].message.content".to_string(),
                )
            })
    }

    async fn score_tokens(&self, text: &str) -> Result<Vec<TokenScore>, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if text.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let body = json!({
            "model": self.model,
            "prompt": text,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
        });
        let value = self.post_json("/v1/completions", &body).await?;
        let logprobs = &value["choices"][0]["logprobs"];
        if logprobs.is_null() {
            return Err(BackendError::Unsupported(
                "token scoring (endpoint returned no logprobs)".to_string(),
            ));
        }
        let tokens = logprobs["tokens"].as_array().ok_or_else(|| {
            BackendError::MalformedResponse("logprobs.tokens is not an array".to_string())
        })?;
        let scores = logprobs["token_logprobs"].as_array().ok_or_else(|| {
            BackendError::MalformedResponse("logprobs.token_logprobs is not an array".to_string())
        })?;
        if tokens.len() != scores.len() {
            return Err(BackendError::MalformedResponse(format!(
                "{} tokens but {} logprobs",
                tokens.len(),
                scores.len()
            )));
        }
        tokens
            .iter()
            .zip(scores.iter())
            .map(|(token, lp)| {
                let token = token
                    .as_str()
                    .ok_or_else(|| {
                        BackendError::MalformedResponse("non-string token".to_string())
                    })?
                    .to_string();
                // A null leading logprob is the OpenAI convention for the
                // first echoed token; treat it as certainty.
                let logprob = if lp.is_null() { 0.0 } else {
                    lp.as_f64().ok_or_else(|| {
                        BackendError::MalformedResponse("non-numeric logprob".to_string())
                    })?
                };
                if !logprob.is_finite() || logprob > 0.0 {
                    return Err(BackendError::MalformedResponse(format!(
                        "logprob {logprob} outside (-inf, 0]"
                    )));
                }
                Ok(TokenScore { token, logprob })
            })
            .collect()
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn debug_output_never_contains_the_key() {
        std::env::set_var("MPR_TEST_DEBUG_KEY", "sk-debug-sentinel");
        let spec = BackendSpec {
            api_key_env: Some("MPR_TEST_DEBUG_KEY".to_string()),
            ..BackendSpec::http("svc", "http://localhost:1/", "test-model")
        };
        let backend = HttpBackend::new(&spec).unwrap();
        let rendered = format!("{backend:?}");
        assert!(!rendered.contains("sk-debug-sentinel"));
        assert!(rendered.contains("api_key_set: true"));
        std::env::remove_var("MPR_TEST_DEBUG_KEY");
    }

    #[test]
    fn base_url_trailing_slash_is_trimmed() {
        let spec = BackendSpec::http("svc", "http://localhost:9/", "m");
        let backend = HttpBackend::new(&spec).unwrap();
        assert_eq!(backend.base_url, "http://localhost:9");
    }
}
