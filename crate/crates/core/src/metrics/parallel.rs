//! Runs independent replicas of a benchmark side by side, one log file
//! per replica.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{RunHeader, RunLogWriter};
use crate::agent::{run_task, AgentConfig, AgentContext, EvalConfig, TaskOutcome};
use crate::executor::Executor;
use crate::llm::{BackendConfig, ChatBackend, KnowledgeBlock};
use crate::retrieval::CorpusEntry;
use crate::task::BenchmarkManifest;

/// Everything the replicas share.
pub struct ParallelContext<'a> {
    pub manifest: &'a BenchmarkManifest,
    pub agent: &'a AgentConfig,
    pub backend_config: &'a BackendConfig,
    pub executor: &'a dyn Executor,
    pub corpus: &'a [CorpusEntry],
    pub knowledge: Option<&'a KnowledgeBlock>,
    pub eval: EvalConfig,
    /// Copied into each log with the replica index filled in.
    pub header: RunHeader,
    pub out_dir: &'a Path,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplicaStatus {
    /// Every task ran; some may have stopped early on a backend error.
    Completed,
    /// The replica stopped before finishing its tasks.
    Failed(String),
    Panicked(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaRun {
    pub replica: usize,
    pub log_path: PathBuf,
    pub status: ReplicaStatus,
    pub outcomes: Vec<(String, TaskOutcome)>,
    pub attempts: usize,
}

pub fn replica_log_name(replica: usize) -> String {
    format!("replica-{replica:03}.jsonl")
}

/// Runs `replicas` replicas on at most `workers` threads. `backend_for`
/// builds the backend each replica talks to. A replica that fails or
/// panics does not affect the others. Results are ordered by replica.
pub fn run_parallel<F>(
    ctx: &ParallelContext<'_>,
    replicas: usize,
    workers: usize,
    backend_for: F,
) -> Vec<ReplicaRun>
where
    F: Fn(usize) -> Result<Box<dyn ChatBackend>, String> + Sync,
{
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(replicas));
    let threads = workers.clamp(1, replicas.max(1));
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let replica = next.fetch_add(1, Ordering::SeqCst);
                if replica >= replicas {
                    break;
                }
                let log_path = ctx.out_dir.join(replica_log_name(replica));
                let run = catch_unwind(AssertUnwindSafe(|| {
                    run_replica(ctx, replica, &log_path, &backend_for)
                }))
                .unwrap_or_else(|payload| {
                    let message = payload
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| payload.downcast_ref::<String>().cloned())
                        .unwrap_or_else(|| "unknown panic".into());
                    log::error!("replica {replica} panicked: {message}");
                    ReplicaRun {
                        replica,
                        log_path: log_path.clone(),
                        status: ReplicaStatus::Panicked(message),
                        outcomes: Vec::new(),
                        attempts: 0,
                    }
                });
                results.lock().unwrap_or_else(|e| e.into_inner()).push(run);
            });
        }
    });
    let mut results = results.into_inner().unwrap_or_else(|e| e.into_inner());
    results.sort_by_key(|r| r.replica);
    results
}

fn run_replica<F>(
    ctx: &ParallelContext<'_>,
    replica: usize,
    log_path: &Path,
    backend_for: &F,
) -> ReplicaRun
where
    F: Fn(usize) -> Result<Box<dyn ChatBackend>, String>,
{
    let mut run = ReplicaRun {
        replica,
        log_path: log_path.to_path_buf(),
        status: ReplicaStatus::Completed,
        outcomes: Vec::new(),
        attempts: 0,
    };
    let backend = match backend_for(replica) {
        Ok(b) => b,
        Err(e) => {
            run.status = ReplicaStatus::Failed(format!("backend: {e}"));
            return run;
        }
    };
    let mut header = ctx.header.clone();
    header.replica = replica;
    header.backend_id = backend.id();
    let mut writer = match RunLogWriter::create(log_path, &header) {
        Ok(w) => w,
        Err(e) => {
            run.status = ReplicaStatus::Failed(format!("{}: {e}", log_path.display()));
            return run;
        }
    };
    let benchmark_ids: BTreeSet<String> = ctx.manifest.task_ids();
    let agent_ctx = AgentContext {
        backend: backend.as_ref(),
        backend_config: ctx.backend_config,
        executor: ctx.executor,
        corpus: ctx.corpus,
        benchmark_ids: &benchmark_ids,
        knowledge: ctx.knowledge,
        eval: ctx.eval,
        replica,
    };
    for task in &ctx.manifest.tasks {
        let log = run_task(task, ctx.agent, &agent_ctx, &mut writer);
        run.attempts += log.attempts.len();
        let outcome = log.outcome;
        match &outcome {
            TaskOutcome::Completed => {}
            TaskOutcome::BackendExhausted(e) => {
                log::warn!("replica {replica}, task {}: {e}", task.task_id);
            }
            TaskOutcome::ExecutorUnavailable(e) | TaskOutcome::LogWriteFailed(e) => {
                run.status = ReplicaStatus::Failed(format!("task {}: {e}", task.task_id));
            }
        }
        run.outcomes.push((task.task_id.clone(), outcome));
        if run.status != ReplicaStatus::Completed {
            break;
        }
    }
    run
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::MockExecutor;
    use crate::llm::ScriptedBackend;
    use crate::metrics::{read_log_dir, read_run_log};
    use crate::task::{BenchmarkManifest, KernelTask, ManifestStyle};

    fn manifest() -> BenchmarkManifest {
        BenchmarkManifest {
            name: "toy".into(),
            style: ManifestStyle::Graded,
            exemplar_corpus_ref: None,
            tasks: vec![
                KernelTask::new("add", "Add."),
                KernelTask::new("add2", "Add again."),
            ],
            corpus: Vec::new(),
        }
    }

    fn reply(d: &str) -> String {
        format!("```python\ndef add(a, b):\n    return a + b\n# mock: {d}\n```")
    }

    #[test]
    fn replicas_write_separate_logs_and_isolate_failures() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest();
        let agent = AgentConfig {
            max_iterations: 2,
            ..AgentConfig::default()
        };
        let bcfg = BackendConfig::default();
        let exec = MockExecutor::default();
        let header = RunHeader::new(
            &m,
            "scripted",
            agent.clone(),
            bcfg.clone(),
            EvalConfig::default(),
        );
        let ctx = ParallelContext {
            manifest: &m,
            agent: &agent,
            backend_config: &bcfg,
            executor: &exec,
            corpus: &[],
            knowledge: None,
            eval: EvalConfig::default(),
            header,
            out_dir: dir.path(),
        };
        let runs =
            run_parallel(&ctx, 3, 2, |r| match r {
                1 => Err("no credentials".into()),
                2 => panic!("boom"),
                _ => Ok(Box::new(ScriptedBackend::new(vec![reply("correct"); 4]))
                    as Box<dyn ChatBackend>),
            });
        assert_eq!(
            runs.iter().map(|r| r.replica).collect::<Vec<_>>(),
            [0, 1, 2]
        );
        assert_eq!(runs[0].status, ReplicaStatus::Completed);
        assert_eq!(runs[0].attempts, 4);
        assert!(matches!(runs[1].status, ReplicaStatus::Failed(_)));
        assert_eq!(runs[2].status, ReplicaStatus::Panicked("boom".into()));

        let log = read_run_log(&runs[0].log_path).unwrap();
        assert_eq!(log.records.len(), 4);
        assert_eq!(log.header.replica, 0);
        assert_eq!(read_log_dir(dir.path()).unwrap().len(), 1);
    }
}
