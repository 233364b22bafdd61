use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use super::{BackendConfig, BackendError, ChatBackend, LlmResponse, PromptBundle, Usage};

/// Replays a fixed transcript of responses, one per call, in order.
#[derive(Debug)]
pub struct ScriptedBackend {
    name: String,
    transcript: Mutex<VecDeque<String>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(transcript: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            name: "scripted".to_string(),
            transcript: Mutex::new(transcript.into_iter().map(Into::into).collect()),
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn remaining(&self) -> usize {
        self.transcript
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .len()
    }
}

/// Reads a transcript file: a JSON array of response strings.
pub fn load_transcript(path: &Path) -> std::io::Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{}: {e}", path.display()),
        )
    })
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn complete(
        &self,
        bundle: &PromptBundle,
        _config: &BackendConfig,
    ) -> Result<LlmResponse, BackendError> {
        let next = self
            .transcript
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .pop_front();
        let raw = next.ok_or_else(|| BackendError::Transport {
            backend: self.id(),
            attempts: 0,
            message: "transcript exhausted".to_string(),
        })?;
        let usage = Usage {
            prompt_tokens: word_count(&bundle.system_text) + word_count(&bundle.render_user_text()),
            completion_tokens: word_count(&raw),
        };
        Ok(LlmResponse::from_text(raw, usage, Duration::ZERO))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echoes_transcript_in_order() {
        let b = ScriptedBackend::new(["def k(): ...", "```\nB\n```"]);
        let cfg = BackendConfig::default();
        let bundle = PromptBundle::new("s");
        let r1 = b.complete(&bundle, &cfg).unwrap();
        assert_eq!(r1.raw_text, "def k(): ...");
        assert_eq!(r1.extracted_code, None);
        let r2 = b.complete(&bundle, &cfg).unwrap();
        assert_eq!(r2.extracted_code.as_deref(), Some("B"));
    }

    #[test]
    fn exhausted_transcript_is_transport_error_without_retries() {
        let b = ScriptedBackend::new(Vec::<String>::new());
        let err = b
            .complete(&PromptBundle::new("s"), &BackendConfig::default())
            .unwrap_err();
        assert!(matches!(err, BackendError::Transport { attempts: 0, .. }));
        assert!(err.to_string().contains("scripted"));
    }

    #[test]
    fn concurrent_callers_each_get_a_distinct_response() {
        let b = ScriptedBackend::new((0..64).map(|i| i.to_string()));
        let cfg = BackendConfig::default();
        let bundle = PromptBundle::new("s");
        let mut seen: Vec<u32> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..8)
                .map(|_| {
                    s.spawn(|| {
                        (0..8)
                            .map(|_| b.complete(&bundle, &cfg).unwrap().raw_text.parse().unwrap())
                            .collect::<Vec<u32>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().unwrap())
                .collect()
        });
        seen.sort();
        assert_eq!(seen, (0..64).collect::<Vec<_>>());
    }
}
