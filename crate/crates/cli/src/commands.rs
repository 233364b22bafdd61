use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, Context};
use serde::Serialize;

use kernel_agent::agent::{evaluate_cascaded, AgentConfig, EvalConfig, TaskOutcome};
use kernel_agent::executor::{
    BoundedExecutor, ExecutionReport, ExecutionRequest, Executor, MockExecutor,
    OwnedRequestDocument, SubprocessExecutor, TimingConfig,
};
use kernel_agent::llm::{
    load_transcript, BackendConfig, ChatBackend, HttpChatBackend, KnowledgeBlock, ScriptedBackend,
};
use kernel_agent::metrics::{
    kernel_speedup, read_log_dir, render_scaling_csv, render_scaling_table, report as summarise,
    run_parallel, scaling_table, Grouping, ParallelContext, ReplicaStatus, RunHeader, Selector,
};
use kernel_agent::retrieval::{load_corpus, retrieve_top1};
use kernel_agent::task::{load_manifest, BenchmarkManifest, ManifestError};

use crate::config::{Ablation, BackendKind, ExecutorKind, RunConfig};
use crate::{
    EvaluateArgs, GlobalArgs, MockRunnerArgs, ReportArgs, RetrieveArgs, RunArgs, ScalingArgs,
    ValidateArgs,
};

pub enum Fault {
    /// Bad arguments, config or manifest.
    Input(anyhow::Error),
    /// The engine could not produce results.
    Engine(anyhow::Error),
}

impl Fault {
    fn input(e: impl Into<anyhow::Error>) -> Self {
        Fault::Input(e.into())
    }

    fn engine(e: impl Into<anyhow::Error>) -> Self {
        Fault::Engine(e.into())
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Fault::Input(e) | Fault::Engine(e) => e,
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            Fault::Input(_) => 2,
            Fault::Engine(_) => 1,
        }
    }
}

type CmdResult = Result<(), Fault>;

fn load_benchmark(path: &Path) -> Result<BenchmarkManifest, Fault> {
    load_manifest(path).map_err(|e| match &e {
        ManifestError::Validation(violations) => {
            let lines: Vec<String> = violations
                .iter()
                .map(|v| format!("{:?} [{}]: {}", v.code, v.task_id, v.message))
                .collect();
            Fault::Input(anyhow!(
                "{} is invalid:\n  {}",
                path.display(),
                lines.join("\n  ")
            ))
        }
        _ => Fault::input(e),
    })
}

fn load_config(global: &GlobalArgs) -> Result<RunConfig, Fault> {
    let path = global
        .config
        .as_deref()
        .ok_or_else(|| Fault::Input(anyhow!("--config is required")))?;
    RunConfig::load(path).map_err(Fault::Input)
}

fn build_executor(config: &RunConfig, workers: usize) -> Box<dyn Executor> {
    let limit = workers.max(1);
    match config.executor.kind {
        ExecutorKind::Mock => Box::new(BoundedExecutor::new(MockExecutor::default(), limit)),
        ExecutorKind::Subprocess => {
            let runner = SubprocessExecutor::from_command(&config.executor.command)
                .expect("validated: command is non-empty");
            Box::new(BoundedExecutor::new(runner, limit))
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Fault> {
    let text = serde_json::to_string_pretty(value).map_err(Fault::engine)?;
    std::fs::write(path, text + "\n")
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Fault::Engine)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Written once, before the first attempt.
#[derive(Serialize)]
struct RunManifest<'a> {
    benchmark: &'a str,
    manifest_path: &'a Path,
    replicas: usize,
    ablations: &'a [Ablation],
    backend_kind: BackendKind,
    executor_kind: ExecutorKind,
    agent: &'a AgentConfig,
    backend: &'a BackendConfig,
    eval: &'a EvalConfig,
    started_at: &'a str,
    engine_version: &'a str,
}

#[derive(Serialize)]
struct ReplicaSummary {
    replica: usize,
    log: PathBuf,
    status: String,
    attempts: usize,
    /// Tasks that stopped before their iteration budget, with the reason.
    interrupted: Vec<(String, TaskOutcome)>,
}

#[derive(Serialize)]
struct Completion {
    finished_at: String,
    replicas: Vec<ReplicaSummary>,
}

pub fn run(global: &GlobalArgs, args: &RunArgs) -> CmdResult {
    let out = global
        .out
        .as_deref()
        .ok_or_else(|| Fault::Input(anyhow!("--out is required for run")))?;
    if args.replicas == 0 {
        return Err(Fault::Input(anyhow!("--replicas must be at least 1")));
    }
    let mut config = load_config(global)?;
    if let Some(n) = args.iterations {
        config.agent.max_iterations = n;
    }
    for a in &args.ablate {
        a.apply(&mut config.agent);
    }
    config.ensure_valid().map_err(Fault::Input)?;
    let mut manifest = load_benchmark(&args.manifest)?;
    if let Some(path) = &config.corpus {
        manifest.corpus = load_corpus(path).map_err(Fault::input)?;
    }
    let knowledge = match (&config.knowledge, config.agent.knowledge_enabled) {
        (Some(path), true) => Some(
            KnowledgeBlock::load(path)
                .with_context(|| format!("cannot read knowledge file {}", path.display()))
                .map_err(Fault::Input)?,
        ),
        _ => None,
    };
    let transcripts = config
        .backend
        .transcripts
        .iter()
        .map(|p| load_transcript(p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(Fault::input)?;

    std::fs::create_dir_all(out)
        .with_context(|| format!("cannot create {}", out.display()))
        .map_err(Fault::Engine)?;
    if read_log_dir(out).is_ok() {
        return Err(Fault::Input(anyhow!(
            "{} already holds run logs; choose an empty directory",
            out.display()
        )));
    }

    let header = RunHeader::new(
        &manifest,
        "",
        config.agent.clone(),
        config.llm.clone(),
        config.eval,
    );
    write_json(
        &out.join("run.json"),
        &RunManifest {
            benchmark: &manifest.name,
            manifest_path: &args.manifest,
            replicas: args.replicas,
            ablations: &args.ablate,
            backend_kind: config.backend.kind,
            executor_kind: config.executor.kind,
            agent: &config.agent,
            backend: &config.llm,
            eval: &config.eval,
            started_at: &header.started_at,
            engine_version: &header.engine_version,
        },
    )?;

    let executor = build_executor(&config, global.workers);
    let ctx = ParallelContext {
        manifest: &manifest,
        agent: &config.agent,
        backend_config: &config.llm,
        executor: executor.as_ref(),
        corpus: &manifest.corpus,
        knowledge: knowledge.as_ref(),
        eval: config.eval,
        header,
        out_dir: out,
    };
    let kind = config.backend.kind;
    let runs = run_parallel(&ctx, args.replicas, global.workers, |replica| {
        Ok(match kind {
            BackendKind::Scripted => {
                let script = &transcripts[replica % transcripts.len()];
                Box::new(ScriptedBackend::new(script.iter().cloned())) as Box<dyn ChatBackend>
            }
            BackendKind::Http => Box::new(HttpChatBackend::new()),
        })
    });

    let mut faults = Vec::new();
    let replicas: Vec<ReplicaSummary> = runs
        .into_iter()
        .map(|r| {
            let status = match &r.status {
                ReplicaStatus::Completed => "completed".to_string(),
                ReplicaStatus::Failed(m) => format!("failed: {m}"),
                ReplicaStatus::Panicked(m) => format!("panicked: {m}"),
            };
            let interrupted: Vec<(String, TaskOutcome)> = r
                .outcomes
                .into_iter()
                .filter(|(_, o)| *o != TaskOutcome::Completed)
                .collect();
            if r.status != ReplicaStatus::Completed || !interrupted.is_empty() {
                faults.push(format!("replica {}: {status}", r.replica));
            }
            for (task, outcome) in &interrupted {
                log::warn!("replica {}, task {task}: {outcome:?}", r.replica);
            }
            ReplicaSummary {
                replica: r.replica,
                log: r.log_path,
                status,
                attempts: r.attempts,
                interrupted,
            }
        })
        .collect();
    write_json(
        &out.join("completion.json"),
        &Completion {
            finished_at: now(),
            replicas,
        },
    )?;

    match read_log_dir(out).map_err(Fault::engine).and_then(|logs| {
        let summary =
            summarise(&logs, Grouping::Difficulty, Selector::Best, false).map_err(Fault::engine)?;
        std::fs::write(out.join("summary.json"), summary.to_json() + "\n")
            .map_err(Fault::engine)?;
        print!("{}", summary.render_table());
        let points = scaling_table(&logs, logs.len() as u64).map_err(Fault::engine)?;
        std::fs::write(out.join("scaling.csv"), render_scaling_csv(&points)).map_err(Fault::engine)
    }) {
        Ok(()) => {}
        Err(e) => faults.push(format!("summary: {:#}", e.error())),
    }

    if faults.is_empty() {
        Ok(())
    } else {
        Err(Fault::Engine(anyhow!(
            "run finished with engine faults:\n  {}",
            faults.join("\n  ")
        )))
    }
}

fn output_dir<'a>(global: &'a GlobalArgs, logs: &'a Path) -> Result<&'a Path, Fault> {
    let dir = global.out.as_deref().unwrap_or(logs);
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(Fault::Engine)?;
    Ok(dir)
}

pub fn report(global: &GlobalArgs, args: &ReportArgs) -> CmdResult {
    let logs = read_log_dir(&args.logs).map_err(Fault::input)?;
    let summary =
        summarise(&logs, args.group, args.selector, args.conditional).map_err(Fault::input)?;
    let dir = output_dir(global, &args.logs)?;
    std::fs::write(dir.join("summary.json"), summary.to_json() + "\n").map_err(Fault::engine)?;
    print!("{}", summary.render_table());
    Ok(())
}

pub fn scaling(global: &GlobalArgs, args: &ScalingArgs) -> CmdResult {
    let logs = read_log_dir(&args.logs).map_err(Fault::input)?;
    let max_k = args.max_k.unwrap_or(logs.len() as u64);
    let points = scaling_table(&logs, max_k).map_err(Fault::input)?;
    let dir = output_dir(global, &args.logs)?;
    std::fs::write(dir.join("scaling.csv"), render_scaling_csv(&points)).map_err(Fault::engine)?;
    print!("{}", render_scaling_table(&points));
    Ok(())
}

pub fn retrieve(args: &RetrieveArgs) -> CmdResult {
    let query = std::fs::read_to_string(&args.query_file)
        .with_context(|| format!("cannot read {}", args.query_file.display()))
        .map_err(Fault::Input)?;
    let corpus = load_corpus(&args.corpus).map_err(Fault::input)?;
    let exclude: BTreeSet<String> = match &args.manifest {
        Some(p) => load_benchmark(p)?.task_ids(),
        None => BTreeSet::new(),
    };
    let hit = retrieve_top1(&query, &corpus, &exclude)
        .ok_or_else(|| Fault::Input(anyhow!("no eligible corpus entry")))?;
    println!("{}\t{:.6}", hit.entry.entry_id, hit.score.value());
    Ok(())
}

pub fn validate(global: &GlobalArgs, args: &ValidateArgs) -> CmdResult {
    let manifest = load_benchmark(&args.manifest)?;
    if global.config.is_some() {
        load_config(global)?.ensure_valid().map_err(Fault::Input)?;
    }
    let counts: Vec<String> = manifest
        .difficulty_counts()
        .iter()
        .map(|(d, n)| format!("level {d}: {n}"))
        .collect();
    println!(
        "{}: {} tasks ({}), {} corpus entries",
        manifest.name,
        manifest.tasks.len(),
        counts.join(", "),
        manifest.corpus.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct Evaluated {
    task_id: String,
    call_ok: bool,
    exec_ok: bool,
    speedup: Option<f64>,
    error_trace: Option<String>,
}

pub fn evaluate(global: &GlobalArgs, args: &EvaluateArgs) -> CmdResult {
    let config = match &global.config {
        Some(_) => load_config(global)?,
        None => RunConfig::default(),
    };
    let manifest = load_benchmark(&args.manifest)?;
    let executor = build_executor(&config, global.workers);
    let mut results = Vec::new();
    for task in &manifest.tasks {
        let path = args.kernels.join(format!("{}.py", task.task_id));
        let report = match std::fs::read_to_string(&path) {
            Ok(code) => match evaluate_cascaded(&code, task, executor.as_ref(), &config.eval) {
                Ok(r) => r,
                Err(kernel_agent::agent::AgentError::EmptyCode) => {
                    ExecutionReport::call_failure("kernel file is empty")
                }
                Err(e) => return Err(Fault::engine(e)),
            },
            Err(_) => ExecutionReport::call_failure(format!("missing {}", path.display())),
        };
        let speedup = kernel_speedup(&report).ok();
        println!(
            "{:<24} call_ok={:<5} exec_ok={:<5} speedup={}",
            task.task_id,
            report.call_ok,
            report.all_passed(),
            speedup.map_or_else(|| "-".into(), |s| format!("{s:.3}x"))
        );
        results.push(Evaluated {
            task_id: task.task_id.clone(),
            call_ok: report.call_ok,
            exec_ok: report.all_passed(),
            speedup,
            error_trace: report.error_trace.clone(),
        });
    }
    if let Some(out) = &global.out {
        std::fs::create_dir_all(out).map_err(Fault::engine)?;
        write_json(&out.join("evaluation.json"), &results)?;
    }
    Ok(())
}

pub fn mock_runner(global: &GlobalArgs, args: &MockRunnerArgs) -> CmdResult {
    let mut input = String::new();
    match &args.input {
        Some(p) => input = std::fs::read_to_string(p).map_err(Fault::input)?,
        None => {
            std::io::stdin()
                .read_to_string(&mut input)
                .map_err(Fault::engine)?;
        }
    }
    let report = match serde_json::from_str::<OwnedRequestDocument>(&input) {
        Ok(doc) => MockExecutor::default().run(&ExecutionRequest {
            candidate_code: doc.candidate_code,
            reference_code: doc.reference_code,
            entry_point: doc.entry_point,
            tests: doc.tests,
            timing: TimingConfig {
                warmup_runs: doc.warmup_runs,
                timed_runs: doc.timed_runs,
            },
            timeout: Duration::from_secs(1),
        }),
        Err(e) => ExecutionReport::call_failure(format!("malformed request: {e}")),
    };
    let text = serde_json::to_string(&report).map_err(Fault::engine)?;
    match &global.out {
        Some(p) => std::fs::write(p, text).map_err(Fault::engine)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(Fault::engine)?;
        }
    }
    Ok(())
}
