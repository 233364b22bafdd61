//! Per-task generate / evaluate / reflect / optimize loop.
//!
//! Each iteration produces one [`CandidateAttempt`]:
//!
//! 1. Build a prompt for the current phase and ask the backend for code.
//!    `generate` uses the task (plus the retrieved exemplar and knowledge
//!    block when enabled), `reflect` the latest failures of the current
//!    strategy, `optimize` the ascending performance history.
//! 2. Evaluate the code: functionality first, latency only when every test
//!    passes.
//! 3. A correct candidate enters the performance history and the next
//!    iteration optimizes (or regenerates when the optimizer is off). A
//!    failing one is queued for reflection; once `max_perf_debug_num`
//!    consecutive failures pile up under one strategy, the reflections are
//!    dropped, `strategy_id` is bumped and the next iteration generates
//!    from scratch.
//!
//! A failed optimization never displaces the best correct candidate.

mod memory;

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use memory::{AgentMemory, BestCorrect, PerfEntry, PerfHistory, Reflection};

use crate::executor::{ExecutionReport, ExecutionRequest, Executor, ExecutorError, TimingConfig};
use crate::llm::{
    assemble_generation_prompt, assemble_optimization_prompt, assemble_reflection_prompt,
    fresh_strategy_directive, BackendConfig, ChatBackend, KnowledgeBlock,
};
use crate::metrics::kernel_speedup;
use crate::retrieval::{retrieval_query, retrieve_top1, CorpusEntry};
use crate::task::KernelTask;

pub const DEFAULT_MAX_ITERATIONS: u32 = 10;
pub const DEFAULT_MAX_PERF_DEBUG_NUM: u32 = 3;
pub const DEFAULT_REFLECTION_WINDOW: u32 = 3;
pub const DEFAULT_EXEC_TIMEOUT_SECS: f64 = 600.0;

/// Trace recorded for a response with no fenced code block.
pub const NO_CODE_TRACE: &str = "no code block in response";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub max_iterations: u32,
    pub max_perf_debug_num: u32,
    pub reflection_window: u32,
    pub optimizer_enabled: bool,
    pub one_shot_enabled: bool,
    pub knowledge_enabled: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            max_perf_debug_num: DEFAULT_MAX_PERF_DEBUG_NUM,
            reflection_window: DEFAULT_REFLECTION_WINDOW,
            optimizer_enabled: true,
            one_shot_enabled: true,
            knowledge_enabled: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.max_iterations == 0 {
            problems.push("max_iterations must be at least 1".to_string());
        }
        if self.max_perf_debug_num == 0 {
            problems.push("max_perf_debug_num must be at least 1".to_string());
        }
        if self.reflection_window == 0 {
            problems.push("reflection_window must be at least 1".to_string());
        }
        problems
    }
}

/// Settings handed to the executor for every candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(flatten)]
    pub timing: TimingConfig,
    pub timeout_secs: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            timing: TimingConfig::default(),
            timeout_secs: DEFAULT_EXEC_TIMEOUT_SECS,
        }
    }
}

impl EvalConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Generate,
    Reflect,
    Optimize,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Generate => "generate",
            Phase::Reflect => "reflect",
            Phase::Optimize => "optimize",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAttempt {
    pub attempt_id: String,
    pub task_id: String,
    pub replica: usize,
    pub iteration_index: u32,
    pub phase: Phase,
    pub strategy_id: u32,
    pub code: String,
    /// Absent when the response had no extractable code.
    pub report: Option<ExecutionReport>,
    /// Present only when every test passed.
    pub speedup: Option<f64>,
    pub prompt_fingerprint: String,
}

impl CandidateAttempt {
    pub fn call_ok(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.call_ok)
    }

    pub fn exec_ok(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.all_passed())
    }

    pub fn error_trace(&self) -> Option<String> {
        match &self.report {
            None => Some(NO_CODE_TRACE.to_string()),
            Some(r) if r.all_passed() => None,
            Some(r) => Some(r.failure_trace()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum TaskOutcome {
    Completed,
    BackendExhausted(String),
    ExecutorUnavailable(String),
    LogWriteFailed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub task_id: String,
    pub replica: usize,
    pub attempts: Vec<CandidateAttempt>,
    pub memory: AgentMemory,
    pub outcome: TaskOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("candidate code is empty")]
    EmptyCode,
    #[error(transparent)]
    ExecutorUnavailable(#[from] ExecutorError),
}

/// Receives each attempt as soon as it is complete.
pub trait AttemptSink {
    fn record(&mut self, attempt: &CandidateAttempt) -> std::io::Result<()>;
}

impl AttemptSink for Vec<CandidateAttempt> {
    fn record(&mut self, attempt: &CandidateAttempt) -> std::io::Result<()> {
        self.push(attempt.clone());
        Ok(())
    }
}

/// Discards attempts.
pub struct NullSink;

impl AttemptSink for NullSink {
    fn record(&mut self, _: &CandidateAttempt) -> std::io::Result<()> {
        Ok(())
    }
}

/// Collaborators shared by every task of one replica.
#[derive(Clone, Copy)]
pub struct AgentContext<'a> {
    pub backend: &'a dyn ChatBackend,
    pub backend_config: &'a BackendConfig,
    pub executor: &'a dyn Executor,
    pub corpus: &'a [CorpusEntry],
    /// Ids that must never be used as exemplars.
    pub benchmark_ids: &'a BTreeSet<String>,
    pub knowledge: Option<&'a KnowledgeBlock>,
    pub eval: EvalConfig,
    pub replica: usize,
}

pub fn should_reset_strategy(consecutive_debug_failures: u32, config: &AgentConfig) -> bool {
    consecutive_debug_failures >= config.max_perf_debug_num
}

/// Runs `code` against the task's tests. The returned report always
/// satisfies the cascade: no test results without a successful call and
/// latencies only when every test passed.
pub fn evaluate_cascaded(
    code: &str,
    task: &KernelTask,
    executor: &dyn Executor,
    eval: &EvalConfig,
) -> Result<ExecutionReport, AgentError> {
    if code.trim().is_empty() {
        return Err(AgentError::EmptyCode);
    }
    let request = ExecutionRequest {
        candidate_code: code.to_string(),
        reference_code: task.reference_code.clone(),
        entry_point: task.entry_point.clone(),
        tests: task.test_spec.clone(),
        timing: eval.timing,
        timeout: eval.timeout(),
    };
    Ok(executor.execute(&request)?.into_cascaded())
}

/// The exemplar a task's generation prompts use, if any.
pub fn select_exemplar<'a>(
    task: &KernelTask,
    config: &AgentConfig,
    ctx: &AgentContext<'a>,
) -> Option<&'a CorpusEntry> {
    if !config.one_shot_enabled {
        return None;
    }
    let mut exclude = ctx.benchmark_ids.clone();
    exclude.insert(task.task_id.clone());
    let (query, _) = retrieval_query(task);
    retrieve_top1(query, ctx.corpus, &exclude).map(|r| r.entry)
}

/// Runs the loop for one task until `max_iterations` attempts are made or
/// a collaborator fails. The log always holds every completed attempt.
pub fn run_task(
    task: &KernelTask,
    config: &AgentConfig,
    ctx: &AgentContext<'_>,
    sink: &mut dyn AttemptSink,
) -> AttemptLog {
    let exemplar = select_exemplar(task, config, ctx);
    let knowledge = if config.knowledge_enabled {
        ctx.knowledge
    } else {
        None
    };

    let mut memory = AgentMemory::default();
    let mut attempts = Vec::new();
    let mut phase = Phase::Generate;
    let mut strategy_id = 0u32;
    let mut consecutive_failures = 0u32;
    // The failure the next reflect prompt is about.
    let mut pending: Option<Reflection> = None;
    let mut outcome = TaskOutcome::Completed;

    for iteration in 0..config.max_iterations {
        let bundle = match phase {
            Phase::Generate => {
                let mut b = assemble_generation_prompt(task, exemplar, knowledge);
                if strategy_id > 0 {
                    fresh_strategy_directive(&mut b);
                }
                b
            }
            Phase::Reflect => {
                let failed = pending.as_ref().expect("reflect phase follows a failure");
                assemble_reflection_prompt(
                    task,
                    &failed.code,
                    &failed.error_trace,
                    &memory,
                    config.reflection_window as usize,
                )
                .expect("failure traces are never empty")
            }
            Phase::Optimize => assemble_optimization_prompt(task, &memory.perf_history)
                .expect("optimize phase follows a recorded correct candidate"),
        };
        if let Some(failed) = pending.take() {
            memory.reflections.push(failed);
        }

        let response = match ctx.backend.complete(&bundle, ctx.backend_config) {
            Ok(r) => r,
            Err(e) => {
                outcome = TaskOutcome::BackendExhausted(e.to_string());
                break;
            }
        };

        let code = response.extracted_code.unwrap_or_default();
        let report = if code.trim().is_empty() {
            None
        } else {
            match evaluate_cascaded(&code, task, ctx.executor, &ctx.eval) {
                Ok(r) => Some(r),
                Err(AgentError::ExecutorUnavailable(e)) => {
                    outcome = TaskOutcome::ExecutorUnavailable(e.to_string());
                    break;
                }
                Err(AgentError::EmptyCode) => None,
            }
        };
        let speedup = report
            .as_ref()
            .filter(|r| r.all_passed())
            .and_then(|r| kernel_speedup(r).ok());

        let attempt = CandidateAttempt {
            attempt_id: format!("{}:{}:{}", task.task_id, ctx.replica, iteration),
            task_id: task.task_id.clone(),
            replica: ctx.replica,
            iteration_index: iteration,
            phase,
            strategy_id,
            code,
            report,
            speedup,
            prompt_fingerprint: bundle.fingerprint(),
        };

        match (speedup, &attempt.report) {
            (Some(s), Some(report)) => {
                memory.record_correct(&attempt.code, s, report);
                memory.clear_reflections();
                consecutive_failures = 0;
                phase = if config.optimizer_enabled {
                    Phase::Optimize
                } else {
                    Phase::Generate
                };
            }
            _ => {
                consecutive_failures += 1;
                let failure = Reflection {
                    code: attempt.code.clone(),
                    error_trace: attempt
                        .error_trace()
                        .unwrap_or_else(|| NO_CODE_TRACE.into()),
                };
                if should_reset_strategy(consecutive_failures, config) {
                    memory.clear_reflections();
                    strategy_id += 1;
                    consecutive_failures = 0;
                    phase = Phase::Generate;
                } else {
                    pending = Some(failure);
                    phase = Phase::Reflect;
                }
            }
        }

        let write = sink.record(&attempt);
        attempts.push(attempt);
        if let Err(e) = write {
            outcome = TaskOutcome::LogWriteFailed(e.to_string());
            break;
        }
    }

    AttemptLog {
        task_id: task.task_id.clone(),
        replica: ctx.replica,
        attempts,
        memory,
        outcome,
    }
}
