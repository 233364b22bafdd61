//! Prompt assembly. Every function here is pure: the same inputs always
//! produce a byte-identical bundle.

use std::path::Path;

use thiserror::Error;

use super::{PromptBundle, SegmentKind};
use crate::agent::{AgentMemory, PerfHistory};
use crate::retrieval::CorpusEntry;
use crate::task::KernelTask;

pub const GENERATOR_SYSTEM: &str = "You are an expert GPU kernel engineer who writes \
correct and fast Triton kernels for AMD Instinct GPUs. Answer with a brief plan followed by \
the complete Python module in one fenced code block.";

pub const REFLECTOR_SYSTEM: &str = "You are an expert GPU kernel engineer debugging a Triton \
kernel that failed its functionality tests. Diagnose the failure from the code and its error \
trace before rewriting anything. Finish with the complete corrected Python module in one \
fenced code block.";

pub const OPTIMIZER_SYSTEM: &str = "You are an expert GPU kernel engineer tuning correct \
Triton kernels for latency and efficiency on AMD Instinct GPUs. Finish with the complete \
revised Python module in one fenced code block.";

const REFLECT_DIRECTIVE: &str = "The most recent attempt above failed. Work out what caused \
the failure, state the fix you will apply, then give the corrected module.";

const OPTIMIZE_DIRECTIVE: &str = "The candidates above are functionally correct and listed \
from slowest to fastest, each with its speedup over the reference kernel. Propose an \
optimization strategy that should beat the fastest one, then give the revised module. It \
must remain functionally equivalent.";

const FRESH_STRATEGY_DIRECTIVE: &str = "Earlier approaches to this task kept failing and have \
been discarded. Choose a different implementation strategy and write the kernel from scratch.";

/// Operator-supplied domain and hardware guidance, passed through verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBlock(pub String);

impl KnowledgeBlock {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        std::fs::read_to_string(path).map(Self)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("reflection needs a non-empty error trace")]
    EmptyTrace,
    #[error("optimization needs at least one measured candidate")]
    EmptyHistory,
    #[error("performance history entry {0} did not pass every test")]
    IncorrectEntry(usize),
}

fn fenced(code: &str) -> String {
    format!("```python\n{code}\n```")
}

fn instruction_text(task: &KernelTask) -> String {
    format!(
        "{}\n\nThe module must define a callable named `{}`.",
        task.instruction.trim_end(),
        task.entry_point
    )
}

/// `[knowledge_block?, one_shot_exemplar?, instruction]`. With neither
/// optional input this is the plain direct prompt.
pub fn assemble_generation_prompt(
    task: &KernelTask,
    exemplar: Option<&CorpusEntry>,
    knowledge: Option<&KnowledgeBlock>,
) -> PromptBundle {
    let mut bundle = PromptBundle::new(GENERATOR_SYSTEM);
    if let Some(k) = knowledge {
        bundle.push(SegmentKind::KnowledgeBlock, k.as_str());
    }
    if let Some(e) = exemplar {
        bundle.push(SegmentKind::OneShotExemplar, fenced(&e.code));
    }
    bundle.push(SegmentKind::Instruction, instruction_text(task));
    bundle
}

/// Instruction, then up to `window` (prior_code, error_trace) pairs ending
/// with the current failure, then the repair directive. `memory.reflections`
/// holds earlier failures of the current strategy, not the current one.
pub fn assemble_reflection_prompt(
    task: &KernelTask,
    failed_code: &str,
    error_trace: &str,
    memory: &AgentMemory,
    window: usize,
) -> Result<PromptBundle, PromptError> {
    if error_trace.trim().is_empty() {
        return Err(PromptError::EmptyTrace);
    }
    let window = window.max(1);
    let earlier = &memory.reflections[memory.reflections.len().saturating_sub(window - 1)..];

    let mut bundle = PromptBundle::new(REFLECTOR_SYSTEM);
    bundle.push(SegmentKind::Instruction, instruction_text(task));
    let pairs = earlier
        .iter()
        .map(|r| (r.code.as_str(), r.error_trace.as_str()))
        .chain(std::iter::once((failed_code, error_trace)));
    for (code, trace) in pairs {
        bundle.push(SegmentKind::PriorCode, fenced(code));
        bundle.push(
            SegmentKind::ErrorTrace,
            format!("```text\n{}\n```", trace.trim_end()),
        );
    }
    bundle.push(SegmentKind::StrategyDirective, REFLECT_DIRECTIVE);
    Ok(bundle)
}

/// Instruction, one perf_history segment per correct candidate in
/// ascending speedup order, then the optimization directive.
pub fn assemble_optimization_prompt(
    task: &KernelTask,
    history: &PerfHistory,
) -> Result<PromptBundle, PromptError> {
    if history.is_empty() {
        return Err(PromptError::EmptyHistory);
    }
    if let Some(i) = history
        .entries()
        .iter()
        .position(|e| !e.report.all_passed())
    {
        return Err(PromptError::IncorrectEntry(i));
    }
    let mut bundle = PromptBundle::new(OPTIMIZER_SYSTEM);
    bundle.push(SegmentKind::Instruction, instruction_text(task));
    for entry in history.entries() {
        bundle.push(
            SegmentKind::PerfHistory,
            format!("speedup: {:.4}x\n{}", entry.speedup, fenced(&entry.code)),
        );
    }
    bundle.push(SegmentKind::StrategyDirective, OPTIMIZE_DIRECTIVE);
    Ok(bundle)
}

/// Appended to a generation prompt after the agent abandons a strategy.
pub fn fresh_strategy_directive(bundle: &mut PromptBundle) {
    bundle.push(SegmentKind::StrategyDirective, FRESH_STRATEGY_DIRECTIVE);
}
