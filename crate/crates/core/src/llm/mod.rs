//! Chat-model backends and prompt assembly for the generator, reflector and
//! optimizer roles.

mod extract;
mod http;
mod prompt;
mod scripted;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use extract::extract_code_block;
pub use http::HttpChatBackend;
pub use prompt::{
    assemble_generation_prompt, assemble_optimization_prompt, assemble_reflection_prompt,
    fresh_strategy_directive, KnowledgeBlock, PromptError, GENERATOR_SYSTEM, OPTIMIZER_SYSTEM,
    REFLECTOR_SYSTEM,
};
pub use scripted::{load_transcript, ScriptedBackend};

pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 8192;
pub const DEFAULT_REQUEST_TIMEOUT_SECS: f64 = 300.0;
pub const DEFAULT_MAX_RETRIES: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_timeout_secs: f64,
    /// Environment variable holding the API key. `None` sends no credential.
    pub api_key_env: Option<String>,
    /// Retries after the first attempt for transient transport failures.
    pub max_retries: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://localhost:8000/v1/chat/completions".to_string(),
            model_name: "default".to_string(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            request_timeout_secs: DEFAULT_REQUEST_TIMEOUT_SECS,
            api_key_env: None,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }
}

impl BackendConfig {
    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.request_timeout_secs.max(0.0))
    }

    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.temperature.is_nan() || self.temperature < 0.0 {
            problems.push(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            ));
        }
        if self.max_output_tokens == 0 {
            problems.push("max_output_tokens must be positive".to_string());
        }
        if !(self.request_timeout_secs > 0.0 && self.request_timeout_secs.is_finite()) {
            problems.push(format!(
                "request_timeout_secs must be positive, got {}",
                self.request_timeout_secs
            ));
        }
        problems
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Instruction,
    KnowledgeBlock,
    OneShotExemplar,
    ErrorTrace,
    PriorCode,
    PerfHistory,
    StrategyDirective,
}

impl SegmentKind {
    fn heading(self) -> &'static str {
        match self {
            SegmentKind::Instruction => "Task",
            SegmentKind::KnowledgeBlock => "Background knowledge",
            SegmentKind::OneShotExemplar => "Example kernel",
            SegmentKind::ErrorTrace => "Error trace",
            SegmentKind::PriorCode => "Previous attempt",
            SegmentKind::PerfHistory => "Measured candidate",
            SegmentKind::StrategyDirective => "What to do",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub segments: Vec<Segment>,
}

impl PromptBundle {
    pub fn new(system_text: impl Into<String>) -> Self {
        Self {
            system_text: system_text.into(),
            segments: Vec::new(),
        }
    }

    pub fn push(&mut self, kind: SegmentKind, text: impl Into<String>) {
        self.segments.push(Segment {
            kind,
            text: text.into(),
        });
    }

    pub fn kinds(&self) -> Vec<SegmentKind> {
        self.segments.iter().map(|s| s.kind).collect()
    }

    pub fn count(&self, kind: SegmentKind) -> usize {
        self.segments.iter().filter(|s| s.kind == kind).count()
    }

    /// The user message: segments in order, each under a markdown heading.
    pub fn render_user_text(&self) -> String {
        self.segments
            .iter()
            .map(|s| format!("## {}\n{}", s.kind.heading(), s.text))
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    /// Short stable hash of the bundle contents.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.system_text.as_bytes());
        for s in &self.segments {
            hasher.update([0u8]);
            hasher.update(format!("{:?}", s.kind).as_bytes());
            hasher.update([0u8]);
            hasher.update(s.text.as_bytes());
        }
        hex::encode(&hasher.finalize()[..8])
    }
}

/// Chat-completion request body: one system and one user message.
pub fn chat_request_body(bundle: &PromptBundle, config: &BackendConfig) -> serde_json::Value {
    serde_json::json!({
        "model": config.model_name,
        "messages": [
            {"role": "system", "content": bundle.system_text},
            {"role": "user", "content": bundle.render_user_text()},
        ],
        "temperature": config.temperature,
        "max_tokens": config.max_output_tokens,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponse {
    pub raw_text: String,
    pub extracted_code: Option<String>,
    pub usage: Usage,
    pub latency: Duration,
}

impl LlmResponse {
    pub fn from_text(raw_text: String, usage: Usage, latency: Duration) -> Self {
        Self {
            extracted_code: extract_code_block(&raw_text),
            raw_text,
            usage,
            latency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend {backend}: transport failure after {attempts} attempt(s): {message}")]
    Transport {
        backend: String,
        attempts: u32,
        message: String,
    },
    #[error("backend {backend}: authentication failed: {message}")]
    Auth { backend: String, message: String },
    #[error("backend {backend}: request timed out after {attempts} attempt(s)")]
    Timeout { backend: String, attempts: u32 },
}

/// A chat model. Calls are independent; implementations must be callable
/// from many threads at once.
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> String;

    fn complete(
        &self,
        bundle: &PromptBundle,
        config: &BackendConfig,
    ) -> Result<LlmResponse, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(
        &self,
        bundle: &PromptBundle,
        config: &BackendConfig,
    ) -> Result<LlmResponse, BackendError> {
        (**self).complete(bundle, config)
    }
}
