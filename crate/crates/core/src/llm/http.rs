use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{LlmError, LlmRequest, LlmResponse, Usage};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "STREFINE_API_KEY";

/// Exponential backoff: attempt `i` (0-based) waits
/// `min(base * 2^i, max_delay)`, scaled by a random factor in [0.5, 1.0]
/// when jitter is on. A `Retry-After` header raises the wait to at least
/// that many seconds, still capped at `max_delay`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(60),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        let factor = 2f64.powi(attempt.min(30) as i32);
        let mut d = self.base_delay.mul_f64(factor).min(self.max_delay);
        if self.jitter {
            d = d.mul_f64(rand::random_range(0.5..=1.0));
        }
        if let Some(ra) = retry_after {
            d = d.max(ra.min(self.max_delay));
        }
        d
    }
}

/// OpenAI-compatible chat-completions client.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    client: Client,
}

enum Failure {
    Retryable(Retry),
    Fatal(LlmError),
}

enum Retry {
    RateLimited(Option<Duration>),
    Server(u16),
    Timeout,
    Transport(String),
}

impl HttpBackend {
    /// `endpoint` is either a base URL (`http://host:port`, `.../v1`) or the
    /// full `.../chat/completions` URL.
    pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration, retry: RetryPolicy) -> Result<Self, LlmError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::InvalidRequest(format!("http client: {e}")))?;
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key,
            timeout,
            retry,
            client,
        })
    }

    /// Like [`HttpBackend::new`], reading the key from [`API_KEY_ENV`].
    pub fn from_env(endpoint: &str, timeout: Duration, retry: RetryPolicy) -> Result<Self, LlmError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(endpoint, key, timeout, retry)
    }

    pub fn url(&self) -> String {
        let e = &self.endpoint;
        if e.ends_with("/chat/completions") {
            e.clone()
        } else if e.ends_with("/v1") {
            format!("{e}/chat/completions")
        } else {
            format!("{e}/v1/chat/completions")
        }
    }

    pub fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let url = self.url();
        let attempts = self.retry.max_attempts.max(1);
        let mut last = Retry::Transport("no attempt made".into());
        for attempt in 0..attempts {
            match self.attempt(&url, &body) {
                Ok(r) => return Ok(r),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(why)) => {
                    let retry_after = match &why {
                        Retry::RateLimited(ra) => *ra,
                        _ => None,
                    };
                    if attempt + 1 < attempts {
                        let wait = self.retry.delay(attempt, retry_after);
                        log::warn!(
                            "request `{}` attempt {} failed ({}); retrying in {:?}",
                            request.request_tag,
                            attempt + 1,
                            describe(&why),
                            wait
                        );
                        std::thread::sleep(wait);
                    }
                    last = why;
                }
            }
        }
        Err(match last {
            Retry::RateLimited(_) => LlmError::RateLimitExhausted { attempts },
            Retry::Server(status) => LlmError::ServerExhausted { status, attempts },
            Retry::Timeout => LlmError::Timeout { attempts },
            Retry::Transport(message) => LlmError::Transport { attempts, message },
        })
    }

    fn attempt(&self, url: &str, body: &Value) -> Result<LlmResponse, Failure> {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                Failure::Retryable(Retry::Timeout)
            } else {
                Failure::Retryable(Retry::Transport(e.to_string()))
            }
        })?;
        let status = resp.status();
        let retry_after = resp
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                Failure::Retryable(Retry::Timeout)
            } else {
                Failure::Retryable(Retry::Transport(e.to_string()))
            }
        })?;
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Err(Failure::Fatal(LlmError::AuthError {
                status: status.as_u16(),
                body: text,
            }));
        }
        if status == StatusCode::TOO_MANY_REQUESTS {
            return Err(Failure::Retryable(Retry::RateLimited(retry_after)));
        }
        if status.is_server_error() {
            return Err(Failure::Retryable(Retry::Server(status.as_u16())));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(LlmError::Http {
                status: status.as_u16(),
                body: text,
            }));
        }
        parse_completion(&text).map_err(Failure::Fatal)
    }
}

fn describe(r: &Retry) -> String {
    match r {
        Retry::RateLimited(_) => "HTTP 429".into(),
        Retry::Server(s) => format!("HTTP {s}"),
        Retry::Timeout => "timeout".into(),
        Retry::Transport(m) => m.clone(),
    }
}

/// Extracts `choices[0].message.content` and friends from a
/// chat-completions body.
pub(crate) fn parse_completion(text: &str) -> Result<LlmResponse, LlmError> {
    let v: Value = serde_json::from_str(text).map_err(|e| LlmError::MalformedResponse(format!("not JSON: {e}")))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| LlmError::MalformedResponse("no choices".into()))?;
    let content = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::MalformedResponse("choices[0].message.content missing".into()))?;
    let finish_reason = choice
        .get("finish_reason")
        .and_then(Value::as_str)
        .unwrap_or("unknown")
        .to_string();
    let tokens = |k: &str| v.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(LlmResponse {
        content: content.to_string(),
        finish_reason,
        usage: Usage {
            prompt_tokens: tokens("prompt_tokens"),
            completion_tokens: tokens("completion_tokens"),
        },
        from_cache: false,
        latency_ms: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_forms() {
        let mk = |e: &str| HttpBackend::new(e, None, Duration::from_secs(1), RetryPolicy::default()).unwrap();
        assert_eq!(mk("http://h:1").url(), "http://h:1/v1/chat/completions");
        assert_eq!(mk("http://h:1/v1/").url(), "http://h:1/v1/chat/completions");
        assert_eq!(mk("http://h/x/chat/completions").url(), "http://h/x/chat/completions");
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(5),
            jitter: false,
        };
        let d: Vec<u64> = (0..4).map(|i| p.delay(i, None).as_secs()).collect();
        assert_eq!(d, vec![1, 2, 4, 5]);
        assert_eq!(p.delay(0, Some(Duration::from_secs(3))).as_secs(), 3);
        let j = RetryPolicy { jitter: true, ..p };
        for _ in 0..50 {
            let d = j.delay(1, None);
            assert!(d >= Duration::from_secs(1) && d <= Duration::from_secs(2));
        }
    }

    #[test]
    fn completion_parsing() {
        let r = parse_completion(
            r#"{"choices":[{"message":{"role":"assistant","content":"ok"},"finish_reason":"stop"}],"usage":{"prompt_tokens":3,"completion_tokens":1}}"#,
        )
        .unwrap();
        assert_eq!(r.content, "ok");
        assert_eq!(r.usage.prompt_tokens, 3);
        assert!(matches!(parse_completion("{}"), Err(LlmError::MalformedResponse(_))));
        assert!(matches!(parse_completion("<html>"), Err(LlmError::MalformedResponse(_))));
        assert!(matches!(
            parse_completion(r#"{"choices":[{"message":{"content":null}}]}"#),
            Err(LlmError::MalformedResponse(_))
        ));
    }
}
