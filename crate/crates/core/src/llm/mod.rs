//! Chat-completion access: an OpenAI-compatible HTTP client, deterministic
//! test backends, an append-only response cache and a bounded worker pool.

mod cache;
mod http;
mod pool;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, Cache, CacheEntry};
pub use http::{HttpBackend, RetryPolicy, API_KEY_ENV};
pub use pool::{complete_all, BatchOutcome, BatchStats};

pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("authentication rejected (HTTP {status}): {body}")]
    AuthError { status: u16, body: String },
    #[error("rate limited on all {attempts} attempts")]
    RateLimitExhausted { attempts: u32 },
    #[error("server error HTTP {status} on all {attempts} attempts")]
    ServerExhausted { status: u16, attempts: u32 },
    #[error("request timed out on all {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("transport failure on all {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no recorded response for request tag `{0}`")]
    MissingFixture(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LlmError {
    /// Retries were spent without success (as opposed to a hard rejection).
    pub fn is_exhaustion(&self) -> bool {
        matches!(
            self,
            LlmError::RateLimitExhausted { .. }
                | LlmError::ServerExhausted { .. }
                | LlmError::Timeout { .. }
                | LlmError::Transport { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Bookkeeping only (sample or chunk id); not part of the cache key.
    pub request_tag: String,
}

impl LlmRequest {
    /// A single-user-message request with temperature 0.
    pub fn user(model: impl Into<String>, prompt: impl Into<String>, request_tag: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            messages: vec![ChatMessage {
                role: Role::User,
                content: prompt.into(),
            }],
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            request_tag: request_tag.into(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(LlmError::InvalidRequest("at least one user message is required".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        Ok(())
    }

    pub fn last_user_message(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub content: String,
    pub finish_reason: String,
    pub usage: Usage,
    #[serde(default)]
    pub from_cache: bool,
    #[serde(default)]
    pub latency_ms: u64,
}

/// Where completions come from.
#[derive(Debug, Clone)]
pub enum Backend {
    Http(HttpBackend),
    /// Returns the last user message verbatim.
    Echo,
    /// Returns a well-formed response built from gold references, looked up
    /// by request tag.
    GoldOracle(HashMap<String, String>),
    /// Replays recorded responses, looked up by request tag.
    Fixture(HashMap<String, String>),
}

#[derive(Debug, Deserialize)]
struct FixtureLine {
    request_tag: String,
    content: String,
}

impl Backend {
    /// Loads a fixture JSONL of `{"request_tag", "content"}` lines. Later
    /// lines override earlier ones with the same tag.
    pub fn fixture_from_file(path: &Path) -> Result<Self, LlmError> {
        let mut table = HashMap::new();
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureLine = serde_json::from_str(&line)
                .map_err(|e| LlmError::MalformedResponse(format!("fixture line {}: {e}", i + 1)))?;
            table.insert(rec.request_tag, rec.content);
        }
        Ok(Backend::Fixture(table))
    }

    /// Short identity string for manifests (no credentials).
    pub fn identity(&self) -> String {
        match self {
            Backend::Http(h) => format!("http:{}", h.endpoint),
            Backend::Echo => "echo".into(),
            Backend::GoldOracle(_) => "gold_oracle".into(),
            Backend::Fixture(_) => "fixture".into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Backend::Http(_) => "http",
            Backend::Echo => "echo",
            Backend::GoldOracle(_) => "gold_oracle",
            Backend::Fixture(_) => "fixture",
        }
    }
}

fn synthesized(content: String, request: &LlmRequest) -> LlmResponse {
    let words = |s: &str| s.split_whitespace().count() as u64;
    LlmResponse {
        usage: Usage {
            prompt_tokens: request.messages.iter().map(|m| words(&m.content)).sum(),
            completion_tokens: words(&content),
        },
        content,
        finish_reason: "stop".into(),
        from_cache: false,
        latency_ms: 0,
    }
}

/// One completion from `backend`, without caching.
pub fn complete(backend: &Backend, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
    request.validate()?;
    let lookup = |table: &HashMap<String, String>| {
        table
            .get(&request.request_tag)
            .cloned()
            .ok_or_else(|| LlmError::MissingFixture(request.request_tag.clone()))
    };
    match backend {
        Backend::Http(http) => {
            let start = Instant::now();
            let mut response = http.complete(request)?;
            response.latency_ms = start.elapsed().as_millis() as u64;
            Ok(response)
        }
        Backend::Echo => Ok(synthesized(
            request.last_user_message().unwrap_or_default().to_string(),
            request,
        )),
        Backend::GoldOracle(table) | Backend::Fixture(table) => Ok(synthesized(lookup(table)?, request)),
    }
}

/// [`complete`] through `cache`: a hit returns the stored response with
/// `from_cache = true`; a miss calls the backend and appends the result.
pub fn cached_complete(cache: &Cache, backend: &Backend, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
    request.validate()?;
    let key = cache_key(request);
    if let Some(mut hit) = cache.get(&key) {
        hit.from_cache = true;
        return Ok(hit);
    }
    let response = complete(backend, request)?;
    cache.put(&key, request, &response)?;
    Ok(response)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_returns_last_user_message() {
        let r = complete(&Backend::Echo, &LlmRequest::user("m", "hi", "t")).unwrap();
        assert_eq!(r.content, "hi");
        assert!(!r.from_cache);
    }

    #[test]
    fn table_backends() {
        let table: HashMap<String, String> = [("s1".to_string(), "Refined Translation: x".to_string())].into();
        let oracle = Backend::GoldOracle(table.clone());
        assert_eq!(complete(&oracle, &LlmRequest::user("m", "p", "s1")).unwrap().content, "Refined Translation: x");
        assert!(matches!(
            complete(&oracle, &LlmRequest::user("m", "p", "s2")),
            Err(LlmError::MissingFixture(t)) if t == "s2"
        ));
    }

    #[test]
    fn fixture_file_replay() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fx.jsonl");
        let content = "Refined Transcription: ä \"q\"\nRefined Translation: ß\t!";
        std::fs::write(
            &p,
            format!("{}\n", serde_json::json!({"request_tag": "a", "content": content})),
        )
        .unwrap();
        let fx = Backend::fixture_from_file(&p).unwrap();
        assert_eq!(complete(&fx, &LlmRequest::user("m", "p", "a")).unwrap().content, content);
    }

    #[test]
    fn request_validation() {
        let mut r = LlmRequest::user("m", "p", "t");
        r.messages[0].role = Role::System;
        assert!(matches!(complete(&Backend::Echo, &r), Err(LlmError::InvalidRequest(_))));
        let mut r = LlmRequest::user("m", "p", "t");
        r.temperature = -1.0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn cached_completion() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(&dir.path().join("cache.jsonl")).unwrap();
        let req = LlmRequest::user("m", "hello", "t");
        let first = cached_complete(&cache, &Backend::Echo, &req).unwrap();
        let second = cached_complete(&cache, &Backend::Echo, &req).unwrap();
        assert!(!first.from_cache && second.from_cache);
        assert_eq!(first.content, second.content);
        assert_eq!(first.usage, second.usage);

        let mut warmer = req.clone();
        warmer.temperature = 0.7;
        assert!(!cached_complete(&cache, &Backend::Echo, &warmer).unwrap().from_cache);

        // Tags are bookkeeping: a retagged request still hits.
        let mut retagged = req.clone();
        retagged.request_tag = "other".into();
        assert!(cached_complete(&cache, &Backend::Echo, &retagged).unwrap().from_cache);
    }
}
