//! TOML run configuration. Relative paths resolve against the config file's
//! directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use kernel_agent::agent::{AgentConfig, EvalConfig};
use kernel_agent::llm::BackendConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Replays recorded responses from transcript files.
    #[default]
    Scripted,
    Http,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Replica `i` replays `transcripts[i % len]`.
    pub transcripts: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorKind {
    /// In-process stand-in that interprets `# mock:` directives.
    #[default]
    Mock,
    Subprocess,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorSection {
    pub kind: ExecutorKind,
    /// Runner program and arguments.
    pub command: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendSection,
    pub llm: BackendConfig,
    pub agent: AgentConfig,
    pub executor: ExecutorSection,
    pub eval: EvalConfig,
    /// Text prepended to generation prompts.
    pub knowledge: Option<PathBuf>,
    /// Overrides the corpus named in the manifest.
    pub corpus: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.backend.transcripts.iter_mut().for_each(resolve);
        config.knowledge.iter_mut().for_each(resolve);
        config.corpus.iter_mut().for_each(resolve);
        if let Some(program) = config.executor.command.first_mut() {
            let candidate = base.join(&*program);
            if program.contains('/') && Path::new(program).is_relative() {
                *program = candidate.to_string_lossy().into_owned();
            }
        }
        Ok(config)
    }

    /// Every problem with the configuration, one line each.
    pub fn violations(&self) -> Vec<String> {
        let mut out: Vec<String> = self.agent.validate();
        out.extend(self.llm.validate());
        if self.backend.kind == BackendKind::Scripted && self.backend.transcripts.is_empty() {
            out.push("backend.kind = \"scripted\" needs at least one transcript".into());
        }
        if self.executor.kind == ExecutorKind::Subprocess && self.executor.command.is_empty() {
            out.push("executor.kind = \"subprocess\" needs a command".into());
        }
        if !(self.eval.timeout_secs > 0.0 && self.eval.timeout_secs.is_finite()) {
            out.push(format!(
                "eval.timeout_secs must be positive, got {}",
                self.eval.timeout_secs
            ));
        }
        if self.eval.timing.timed_runs == 0 {
            out.push("eval.timed_runs must be at least 1".into());
        }
        out
    }

    pub fn ensure_valid(&self) -> anyhow::Result<()> {
        let v = self.violations();
        if v.is_empty() {
            return Ok(());
        }
        bail!("invalid configuration:\n  {}", v.join("\n  "))
    }
}

/// Agent features that can be switched off for an ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
#[allow(clippy::enum_variant_names)]
pub enum Ablation {
    NoKnowledge,
    NoOneShot,
    NoOptimizer,
}

impl Ablation {
    pub fn apply(self, agent: &mut AgentConfig) {
        match self {
            Ablation::NoKnowledge => agent.knowledge_enabled = false,
            Ablation::NoOneShot => agent.one_shot_enabled = false,
            Ablation::NoOptimizer => agent.optimizer_enabled = false,
        }
    }
}
