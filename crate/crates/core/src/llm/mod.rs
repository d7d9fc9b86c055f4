//! Language-model access: providers, retries, response cache.

mod cache;
pub mod mock;
#[cfg(feature = "remote")]
pub mod remote;

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::{CacheEntry, ResponseCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemplateId {
    #[serde(rename = "TP_QUERY")]
    TpQuery,
    #[serde(rename = "CTP_QUERY")]
    CtpQuery,
    #[serde(rename = "FEEDBACK")]
    Feedback,
    #[serde(rename = "DIRECT_CF")]
    DirectCf,
}

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::TpQuery => "TP_QUERY",
            TemplateId::CtpQuery => "CTP_QUERY",
            TemplateId::Feedback => "FEEDBACK",
            TemplateId::DirectCf => "DIRECT_CF",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub template_id: TemplateId,
    pub rendered_text: String,
    pub temperature: f64,
    pub max_retries: u32,
    /// Reprompt counter. Attempts after the first get their own cache slot so
    /// a malformed cached reply is not served again.
    pub attempt: u32,
}

impl PromptRequest {
    pub fn new(template_id: TemplateId, rendered_text: String) -> Self {
        Self { template_id, rendered_text, temperature: 0.0, max_retries: 2, attempt: 0 }
    }

    pub fn reprompt(&self, attempt: u32) -> Self {
        Self { attempt, ..self.clone() }
    }

    /// Hex SHA-256 of the rendered text (salted with the attempt number
    /// for reprompts).
    pub fn text_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.rendered_text.as_bytes());
        if self.attempt > 0 {
            h.update(format!("\u{0}attempt={}", self.attempt).as_bytes());
        }
        hex(&h.finalize())
    }

    pub fn cache_key(&self, model_name: &str) -> String {
        format!("{}:{}:{}", self.template_id, self.text_hash(), model_name)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    RemoteApi,
    ScriptedMock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub provider: ProviderKind,
    pub model_name: String,
    /// Seconds.
    pub request_timeout: f64,
    pub max_parallel: usize,
    pub cache_path: Option<PathBuf>,
    /// OpenAI-compatible chat completions endpoint.
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// First retry delay in milliseconds; doubles on each further retry.
    pub backoff_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            provider: ProviderKind::ScriptedMock,
            model_name: "scripted-mock".into(),
            request_timeout: 60.0,
            max_parallel: 4,
            cache_path: None,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            backoff_ms: 500,
        }
    }
}

/// Failure reported by a provider for one attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderFailure {
    Transient(String),
    Timeout,
    Fatal(String),
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("provider failed after {attempts} attempts: {message}")]
    Provider { attempts: u32, message: String },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("invalid provider configuration: {0}")]
    Config(String),
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

/// Anything that can answer a rendered prompt.
pub trait Provider: Send + Sync {
    fn complete(&self, req: &PromptRequest) -> Result<String, ProviderFailure>;
}

/// Strips surrounding whitespace and matching quote characters.
pub fn normalize_response(text: &str) -> String {
    let mut s = text.trim();
    loop {
        let before = s;
        for (open, close) in [('"', '"'), ('\'', '\''), ('`', '`'), ('“', '”'), ('‘', '’')] {
            if s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
                s = s[open.len_utf8()..s.len() - close.len_utf8()].trim();
            }
        }
        if s == before {
            return s.to_string();
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> SemGuard<'_> {
        let mut n = self.free.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        SemGuard(self)
    }
}

struct SemGuard<'a>(&'a Semaphore);

impl Drop for SemGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Provider plus retry policy, concurrency bound and response cache. Safe
/// to share between threads.
pub struct LlmClient {
    provider: Box<dyn Provider>,
    pub config: ProviderConfig,
    cache: Option<ResponseCache>,
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    slots: Semaphore,
}

impl LlmClient {
    pub fn new(provider: Box<dyn Provider>, config: ProviderConfig) -> Result<Self, LlmError> {
        if config.max_parallel == 0 {
            return Err(LlmError::Config("max_parallel must be at least 1".into()));
        }
        let cache = match &config.cache_path {
            Some(p) => Some(ResponseCache::open(p)?),
            None => None,
        };
        let slots = Semaphore { free: Mutex::new(config.max_parallel), cv: Condvar::new() };
        Ok(Self { provider, config, cache, inflight: Mutex::new(HashMap::new()), slots })
    }

    /// Builds the provider named in `config`.
    pub fn from_config(config: ProviderConfig, mock: mock::ScriptedMock) -> Result<Self, LlmError> {
        let provider: Box<dyn Provider> = match config.provider {
            ProviderKind::ScriptedMock => Box::new(mock),
            #[cfg(feature = "remote")]
            ProviderKind::RemoteApi => Box::new(remote::RemoteApi::from_config(&config)?),
            #[cfg(not(feature = "remote"))]
            ProviderKind::RemoteApi => {
                return Err(LlmError::Config("built without the `remote` feature".into()));
            }
        };
        Self::new(provider, config)
    }

    /// Calls the provider, retrying transient failures and timeouts up to
    /// `req.max_retries` times with exponential backoff.
    pub fn complete(&self, req: &PromptRequest) -> Result<String, LlmError> {
        let attempts = req.max_retries + 1;
        let mut last = ProviderFailure::Transient(String::new());
        for k in 0..attempts {
            if k > 0 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (k - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            let result = {
                let _slot = self.slots.acquire();
                self.provider.complete(req)
            };
            match result {
                Ok(text) => return Ok(normalize_response(&text)),
                Err(ProviderFailure::Fatal(message)) => return Err(LlmError::Provider { attempts: k + 1, message }),
                Err(f) => {
                    tracing::warn!(attempt = k + 1, failure = ?f, "provider call failed");
                    last = f;
                }
            }
        }
        Err(match last {
            ProviderFailure::Timeout => LlmError::Timeout { attempts },
            ProviderFailure::Transient(message) | ProviderFailure::Fatal(message) => {
                LlmError::Provider { attempts, message }
            }
        })
    }

    /// Like [`complete`](Self::complete) but served from the cache when
    /// possible. Concurrent calls for one key make a single provider call.
    pub fn cached_complete(&self, req: &PromptRequest) -> Result<(String, bool), LlmError> {
        let Some(cache) = &self.cache else {
            return Ok((self.complete(req)?, false));
        };
        let key = req.cache_key(&self.config.model_name);
        if let Some(hit) = cache.get(&key) {
            return Ok((hit, true));
        }
        let lock = {
            let mut map = self.inflight.lock().unwrap();
            map.entry(key.clone()).or_default().clone()
        };
        let _guard = lock.lock().unwrap();
        if let Some(hit) = cache.get(&key) {
            return Ok((hit, true));
        }
        let response = self.complete(req)?;
        cache.insert(CacheEntry {
            key,
            template_id: req.template_id,
            model_name: self.config.model_name.clone(),
            response: response.clone(),
            timestamp: cache::now_secs(),
        })?;
        Ok((response, false))
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        calls: Arc<AtomicUsize>,
        fail: bool,
    }

    impl Provider for Counting {
        fn complete(&self, req: &PromptRequest) -> Result<String, ProviderFailure> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            if self.fail {
                Err(ProviderFailure::Transient("down".into()))
            } else {
                Ok(format!("  \"echo {}\" ", req.rendered_text.len()))
            }
        }
    }

    fn client(fail: bool, cache: Option<PathBuf>) -> (LlmClient, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        let cfg = ProviderConfig { cache_path: cache, backoff_ms: 1, ..Default::default() };
        (LlmClient::new(Box::new(Counting { calls: calls.clone(), fail }), cfg).unwrap(), calls)
    }

    #[test]
    fn retries_then_fails() {
        let (c, calls) = client(true, None);
        let err = c.complete(&PromptRequest::new(TemplateId::TpQuery, "x".into())).unwrap_err();
        assert!(matches!(err, LlmError::Provider { attempts: 3, .. }));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn responses_are_normalized() {
        let (c, _) = client(false, None);
        assert_eq!(c.complete(&PromptRequest::new(TemplateId::TpQuery, "abc".into())).unwrap(), "echo 3");
        assert_eq!(normalize_response(" '“hydroxyl”' \n"), "hydroxyl");
    }

    #[test]
    fn cache_hits_skip_the_provider() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let (c, calls) = client(false, Some(path.clone()));
        let req = PromptRequest::new(TemplateId::Feedback, "hello".into());
        assert_eq!(c.cached_complete(&req).unwrap(), ("echo 5".into(), false));
        assert_eq!(c.cached_complete(&req).unwrap(), ("echo 5".into(), true));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        // a reprompt gets its own slot
        assert!(!c.cached_complete(&req.reprompt(1)).unwrap().1);
        drop(c);
        let (c2, calls2) = client(false, Some(path.clone()));
        assert!(c2.cached_complete(&req).unwrap().1);
        assert_eq!(calls2.load(Ordering::SeqCst), 0);
        std::fs::remove_file(&path).unwrap();
        let (c3, _) = client(false, Some(path));
        assert!(!c3.cached_complete(&req).unwrap().1);
    }

    #[test]
    fn model_name_separates_entries() {
        let req = PromptRequest::new(TemplateId::TpQuery, "same".into());
        assert_ne!(req.cache_key("a"), req.cache_key("b"));
    }

    #[test]
    fn concurrent_callers_share_one_provider_call() {
        let dir = tempfile::tempdir().unwrap();
        let (c, calls) = client(false, Some(dir.path().join("c.jsonl")));
        let req = PromptRequest::new(TemplateId::CtpQuery, "shared".into());
        std::thread::scope(|s| {
            for _ in 0..16 {
                s.spawn(|| c.cached_complete(&req).unwrap());
            }
        });
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }
}
