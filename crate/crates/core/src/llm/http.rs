//! Chat-completion client for any endpoint speaking the common
//! `{model, messages[], temperature, max_tokens}` request shape.

use std::thread;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::StatusCode;

use super::{
    chat_request_body, BackendConfig, BackendError, ChatBackend, LlmResponse, PromptBundle, Usage,
};

const INITIAL_BACKOFF: Duration = Duration::from_millis(250);
const MAX_BACKOFF: Duration = Duration::from_secs(8);

pub struct HttpChatBackend {
    client: Client,
    backoff: Duration,
}

enum Failure {
    Transient(String),
    TimedOut,
    Fatal(BackendError),
}

impl HttpChatBackend {
    pub fn new() -> Self {
        Self {
            client: Client::new(),
            backoff: INITIAL_BACKOFF,
        }
    }

    /// Overrides the first retry delay (doubled on each further retry).
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn backend_id(config: &BackendConfig) -> String {
        format!("{}@{}", config.model_name, config.endpoint_url)
    }

    fn attempt(
        &self,
        body: &serde_json::Value,
        key: Option<&str>,
        config: &BackendConfig,
    ) -> Result<(String, Usage), Failure> {
        let backend = Self::backend_id(config);
        let mut request = self
            .client
            .post(&config.endpoint_url)
            .timeout(config.request_timeout())
            .json(body);
        if let Some(key) = key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                Failure::TimedOut
            } else {
                Failure::Transient(e.to_string())
            }
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            if e.is_timeout() {
                Failure::TimedOut
            } else {
                Failure::Transient(e.to_string())
            }
        })?;
        log::trace!("response from {backend} ({status}): {text}");

        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Err(Failure::Fatal(BackendError::Auth {
                backend,
                message: format!("{status}: {}", truncate(&text)),
            }));
        }
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Err(Failure::Transient(format!("{status}: {}", truncate(&text))));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(BackendError::Transport {
                backend,
                attempts: 1,
                message: format!("{status}: {}", truncate(&text)),
            }));
        }
        parse_completion(&text).ok_or_else(|| {
            Failure::Fatal(BackendError::Transport {
                backend,
                attempts: 1,
                message: format!("unexpected response body: {}", truncate(&text)),
            })
        })
    }
}

impl Default for HttpChatBackend {
    fn default() -> Self {
        Self::new()
    }
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(512) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn parse_completion(text: &str) -> Option<(String, Usage)> {
    let v: serde_json::Value = serde_json::from_str(text).ok()?;
    let content = v["choices"][0]["message"]["content"].as_str()?.to_string();
    let usage = Usage {
        prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
    };
    Some((content, usage))
}

impl ChatBackend for HttpChatBackend {
    fn id(&self) -> String {
        "http".to_string()
    }

    fn complete(
        &self,
        bundle: &PromptBundle,
        config: &BackendConfig,
    ) -> Result<LlmResponse, BackendError> {
        let backend = Self::backend_id(config);
        let key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| BackendError::Auth {
                backend: backend.clone(),
                message: format!("environment variable {var} is not set"),
            })?),
            None => None,
        };
        let body = chat_request_body(bundle, config);
        log::trace!(
            "request to {backend} (authorization: {}): {body}",
            if key.is_some() {
                "Bearer <redacted>"
            } else {
                "none"
            }
        );

        let started = Instant::now();
        let max_attempts = config.max_retries + 1;
        let mut delay = self.backoff;
        let mut last = Failure::Transient("no attempt made".into());
        for attempt in 1..=max_attempts {
            match self.attempt(&body, key.as_deref(), config) {
                Ok((raw, usage)) => {
                    return Ok(LlmResponse::from_text(raw, usage, started.elapsed()));
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(other) => {
                    if let Failure::Transient(m) = &other {
                        log::warn!("{backend}: attempt {attempt}/{max_attempts} failed: {m}");
                    } else {
                        log::warn!("{backend}: attempt {attempt}/{max_attempts} timed out");
                    }
                    last = other;
                }
            }
            if attempt < max_attempts {
                thread::sleep(delay);
                delay = (delay * 2).min(MAX_BACKOFF);
            }
        }
        Err(match last {
            Failure::TimedOut => BackendError::Timeout {
                backend,
                attempts: max_attempts,
            },
            Failure::Transient(message) => BackendError::Transport {
                backend,
                attempts: max_attempts,
                message,
            },
            Failure::Fatal(e) => e,
        })
    }
}
