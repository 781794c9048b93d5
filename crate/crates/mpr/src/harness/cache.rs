//! Disk cache for backend responses, keyed by backend id, template version,
//! and the canonical serialized request. Corruption degrades to a miss;
//! errors are never cached.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::backend::{build_backend, Backend, BackendError};
use crate::core::{content_hash, BackendSpec, ChatRequest, TokenScore};

/// Hit/miss counters for one cached backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CachedValue {
    Text(String),
    Scores(Vec<TokenScore>),
}

/// Wraps a backend with a content-addressed response cache on disk. The
/// `calls()` counter delegates to the inner backend, so a fully cached run
/// reports zero calls.
pub struct CachedBackend {
    inner: Arc<dyn Backend>,
    dir: PathBuf,
    template_version: String,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl CachedBackend {
    pub fn new(
        inner: Arc<dyn Backend>,
        dir: impl Into<PathBuf>,
        template_version: impl Into<String>,
    ) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(CachedBackend {
            inner,
            dir,
            template_version: template_version.into(),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    fn key_path(&self, operation: &str, payload: &str) -> PathBuf {
        let key = content_hash(format!(
            "{}\n{}\n{operation}\n{payload}",
            self.inner.id(),
            self.template_version
        ));
        self.dir.join(format!("{key}.json"))
    }

    fn lookup(&self, path: &Path) -> Option<CachedValue> {
        let bytes = match std::fs::read(path) {
            Ok(bytes) => bytes,
            Err(err) if err.kind() == std::io::ErrorKind::NotFound => return None,
            Err(err) => {
                log::warn!("cache read failed for {}: {err}", path.display());
                return None;
            }
        };
        match serde_json::from_slice(&bytes) {
            Ok(value) => Some(value),
            Err(err) => {
                log::warn!(
                    "corrupted cache entry {} treated as a miss: {err}",
                    path.display()
                );
                None
            }
        }
    }

    /// Atomic write: temp file in the same directory, then rename.
    fn store(&self, path: &Path, value: &CachedValue) {
        let result = (|| -> std::io::Result<()> {
            let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
            serde_json::to_writer(&mut tmp, value)?;
            tmp.persist(path).map_err(|e| e.error)?;
            Ok(())
        })();
        if let Err(err) = result {
            log::warn!("cache write failed for {}: {err}", path.display());
        }
    }
}

#[async_trait]
impl Backend for CachedBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    async fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let payload = serde_json::to_string(req)
            .map_err(|e| BackendError::MalformedResponse(format!("unserializable request: {e}")))?;
        let path = self.key_path("complete", &payload);
        if let Some(CachedValue::Text(text)) = self.lookup(&path) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(text);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let text = self.inner.complete(req).await?;
        self.store(&path, &CachedValue::Text(text.clone()));
        Ok(text)
    }

    async fn score_tokens(&self, text: &str) -> Result<Vec<TokenScore>, BackendError> {
        let path = self.key_path("score", text);
        if let Some(CachedValue::Scores(scores)) = self.lookup(&path) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(scores);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let scores = self.inner.score_tokens(text).await?;
        self.store(&path, &CachedValue::Scores(scores.clone()));
        Ok(scores)
    }

    fn calls(&self) -> u64 {
        self.inner.calls()
    }
}

/// One-shot cached completion for a spec: builds the backend, then serves
/// the request through a cache rooted at `cache_dir`. Cache I/O problems
/// degrade to uncached calls; only backend errors propagate.
pub async fn cached_call(
    spec: &BackendSpec,
    req: &ChatRequest,
    cache_dir: &Path,
) -> Result<String, BackendError> {
    let backend = build_backend(spec)?;
    match CachedBackend::new(backend.clone(), cache_dir, "") {
        Ok(cached) => cached.complete(req).await,
        Err(err) => {
            log::warn!("cache unavailable at {}: {err}", cache_dir.display());
            backend.complete(req).await
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock_backend() -> Arc<dyn Backend> {
        build_backend(&BackendSpec::mock("mock")).unwrap()
    }

    fn request(user: &str) -> ChatRequest {
        ChatRequest::new("mock".to_string(), user.to_string())
    }

    #[tokio::test]
    async fn repeat_requests_hit_the_cache() {
        let dir = tempfile::tempdir().unwrap();
        let inner = mock_backend();
        let cached = CachedBackend::new(inner.clone(), dir.path(), "v1").unwrap();

        let req = request("Why is the sky blue?");
        let first = cached.complete(&req).await.unwrap();
        let second = cached.complete(&req).await.unwrap();
        assert_eq!(first, second);
        assert_eq!(inner.calls(), 1);
        assert_eq!(cached.calls(), 1);
        assert_eq!(cached.stats(), CacheStats { hits: 1, misses: 1 });
    }

    #[tokio::test]
    async fn request_fields_and_template_version_key_the_cache() {
        let dir = tempfile::tempdir().unwrap();
        let inner = mock_backend();
        let cached = CachedBackend::new(inner.clone(), dir.path(), "v1").unwrap();

        let mut warm = request("Why is the sky blue?");
        cached.complete(&warm).await.unwrap();
        warm.temperature = 0.7;
        cached.complete(&warm).await.unwrap();
        assert_eq!(inner.calls(), 2, "temperature is part of the key");

        let rekeyed = CachedBackend::new(inner.clone(), dir.path(), "v2").unwrap();
        rekeyed.complete(&request("Why is the sky blue?")).await.unwrap();
        assert_eq!(inner.calls(), 3, "template version is part of the key");
    }

    #[tokio::test]
    async fn corrupted_entries_degrade_to_misses() {
        let dir = tempfile::tempdir().unwrap();
        let inner = mock_backend();
        let cached = CachedBackend::new(inner.clone(), dir.path(), "v1").unwrap();

        let req = request("Why is the sky blue?");
        cached.complete(&req).await.unwrap();
        let entries: Vec<PathBuf> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        assert_eq!(entries.len(), 1);
        std::fs::write(&entries[0], b"{ not json").unwrap();

        let again = cached.complete(&req).await.unwrap();
        assert_eq!(again, "Responding to: Why is the sky blue?");
        assert_eq!(inner.calls(), 2, "corruption forces a re-fetch");
        assert_eq!(cached.stats().hits, 0);
    }

    #[tokio::test]
    async fn token_scores_are_cached_separately_from_completions() {
        let dir = tempfile::tempdir().unwrap();
        let inner = mock_backend();
        let cached = CachedBackend::new(inner.clone(), dir.path(), "v1").unwrap();

        let first = cached.score_tokens("hello there").await.unwrap();
        let second = cached.score_tokens("hello there").await.unwrap();
        assert_eq!(first, second);
        assert_eq!(inner.calls(), 1);
        assert_eq!(cached.stats(), CacheStats { hits: 1, misses: 1 });
    }

    #[tokio::test]
    async fn errors_are_never_cached() {
        let dir = tempfile::tempdir().unwrap();
        let table = dir.path().join("empty.json");
        std::fs::write(&table, r#"{"version":1,"rules":[]}"#).unwrap();
        let mut spec = BackendSpec::mock("empty");
        spec.mock_table = Some(table);
        let inner = build_backend(&spec).unwrap();
        let cache_dir = dir.path().join("cache");
        let cached = CachedBackend::new(inner.clone(), &cache_dir, "v1").unwrap();

        let req = request("no rule matches this");
        assert!(cached.complete(&req).await.is_err());
        assert!(cached.complete(&req).await.is_err());
        assert_eq!(inner.calls(), 2, "failures must not be served from cache");
        let cached_files = std::fs::read_dir(&cache_dir).unwrap().count();
        assert_eq!(cached_files, 0);
    }

    #[tokio::test]
    async fn one_shot_cached_call_reuses_the_store() {
        let dir = tempfile::tempdir().unwrap();
        let spec = BackendSpec::mock("mock");
        let req = request("Why is the sky blue?");
        let first = cached_call(&spec, &req, dir.path()).await.unwrap();
        let second = cached_call(&spec, &req, dir.path()).await.unwrap();
        assert_eq!(first, second);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
