//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Set `UPDATE_GOLDEN=1` to rewrite the state-machine
//! golden file.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use kernel_agent::agent::{
    run_task, select_exemplar, AgentConfig, AgentContext, AttemptLog, EvalConfig, NullSink, Phase,
    TaskOutcome,
};
use kernel_agent::executor::{
    ExecutionReport, ExecutionRequest, Executor, MockExecutor, SubprocessExecutor, TestResult,
    TimingConfig,
};
use kernel_agent::llm::{BackendConfig, ScriptedBackend};
use kernel_agent::metrics::{
    call_accuracy, exec_accuracy, kernel_speedup, pass_at_k, read_run_log, report, scaling_table,
    AttemptRecord, Grouping, MetricsError, RunHeader, RunLog, Selector, TaskRef,
};
use kernel_agent::retrieval::{retrieve_top1, CorpusEntry};
use kernel_agent::task::{KernelTask, TestCase};

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

// pass@k against brute force

fn brute_force_pass_at_k(n: u32, c: u32, k: u32) -> f64 {
    let mut hit = 0u64;
    let mut total = 0u64;
    for subset in 0u32..(1 << n) {
        if subset.count_ones() != k {
            continue;
        }
        total += 1;
        // Samples 0..c are the correct ones.
        if subset & ((1u32 << c) - 1) != 0 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

fn pass_at_k_oracle() -> Check {
    let started = Instant::now();
    for n in 1..=8u32 {
        for c in 0..=n {
            for k in 1..=n {
                let got = pass_at_k(n as u64, c as u64, k as u64).map_err(|e| e.to_string())?;
                let want = brute_force_pass_at_k(n, c, k);
                ensure!(
                    (got - want).abs() <= 1e-12,
                    "n={n} c={c} k={k}: {got} vs enumeration {want}"
                );
            }
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(())
}

// Accuracy fixtures

fn header(tasks: Vec<TaskRef>) -> RunHeader {
    RunHeader {
        benchmark: "fixture".into(),
        backend_id: "fixture".into(),
        replica: 0,
        agent: AgentConfig::default(),
        backend: BackendConfig::default(),
        eval: EvalConfig::default(),
        tasks,
        started_at: "2026-01-01T00:00:00Z".into(),
        engine_version: "0".into(),
    }
}

fn record(task_id: &str, call_ok: bool, exec_ok: bool) -> AttemptRecord {
    AttemptRecord {
        task_id: task_id.into(),
        replica: 0,
        iteration: 0,
        phase: Phase::Generate,
        strategy_id: 0,
        call_ok,
        tests_passed: if exec_ok {
            3
        } else if call_ok {
            1
        } else {
            0
        },
        tests_total: if call_ok { 3 } else { 0 },
        speedup: exec_ok.then_some(1.0),
        trace_digest: None,
    }
}

/// Writes `log` to disk and reads it back, so the fixture passes through
/// the same parser as real logs.
fn via_disk(log: &RunLog) -> Result<RunLog, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("replica-000.jsonl");
    std::fs::write(&path, log.to_jsonl()).map_err(|e| e.to_string())?;
    read_run_log(&path).map_err(|e| e.to_string())
}

fn per_difficulty_fixture() -> Check {
    let totals = [3usize, 27, 65, 84, 5];
    let exec_ok = [2usize, 23, 39, 32, 1];
    let expected = [66.67, 85.19, 60.00, 38.10, 20.00];
    let mut tasks = Vec::new();
    let mut records = Vec::new();
    for (level, (&total, &ok)) in totals.iter().zip(&exec_ok).enumerate() {
        for i in 0..total {
            let id = format!("L{}-{i:03}", level + 1);
            tasks.push(TaskRef {
                id: id.clone(),
                difficulty: level as u8 + 1,
            });
            records.push(record(&id, true, i < ok));
        }
    }
    let mut log = RunLog::new(header(tasks));
    log.records = records;
    let log = via_disk(&log)?;
    let s =
        report(&[log], Grouping::Difficulty, Selector::Best, false).map_err(|e| e.to_string())?;
    for (level, want) in expected.iter().enumerate() {
        let row = s
            .group(level as u8 + 1)
            .ok_or_else(|| format!("no row for level {}", level + 1))?;
        let got = 100.0 * row.exec_accuracy;
        ensure!(
            (got - want).abs() <= 0.01,
            "level {}: {got:.4} vs {want}",
            level + 1
        );
    }
    let overall = 100.0 * s.overall().exec_accuracy;
    ensure!(
        (overall - 52.72).abs() <= 0.01,
        "overall {overall:.4} vs 52.72"
    );
    ensure!(
        s.overall().n_tasks == 184,
        "overall has {} tasks",
        s.overall().n_tasks
    );
    Ok(())
}

fn overall_accuracy_fixture() -> Check {
    let mut tasks = Vec::new();
    let mut records = Vec::new();
    for i in 0..184 {
        let id = format!("t{i:03}");
        tasks.push(TaskRef {
            id: id.clone(),
            difficulty: 1,
        });
        records.push(record(&id, i < 27, i < 16));
    }
    let mut log = RunLog::new(header(tasks));
    log.records = records;
    let log = via_disk(&log)?;
    let call = 100.0 * call_accuracy(&log, Selector::Best).map_err(|e| e.to_string())?;
    let exec = 100.0 * exec_accuracy(&log, Selector::Best).map_err(|e| e.to_string())?;
    ensure!(
        (call - 14.67).abs() <= 0.01,
        "call accuracy {call:.4} vs 14.67"
    );
    ensure!(
        (exec - 8.70).abs() <= 0.01,
        "exec accuracy {exec:.4} vs 8.70"
    );
    Ok(())
}

// Speedup

fn timed(id: &str, reference: f64, candidate: f64) -> TestResult {
    TestResult {
        test_id: id.into(),
        passed: true,
        max_abs_err: 0.0,
        candidate_latency_ms: Some(candidate),
        reference_latency_ms: Some(reference),
    }
}

fn speedup_formula() -> Check {
    let mut r = ExecutionReport {
        call_ok: true,
        error_trace: None,
        test_results: vec![timed("a", 4.0, 2.0), timed("b", 3.0, 3.0)],
        timed_out: false,
    };
    let s = kernel_speedup(&r).map_err(|e| e.to_string())?;
    ensure!(s == 1.5, "speedup {s} vs 1.5");
    r.test_results[0].passed = false;
    ensure!(
        matches!(kernel_speedup(&r), Err(MetricsError::NotExecOk)),
        "a failed test still produced a speedup"
    );
    ensure!(
        matches!(
            kernel_speedup(&ExecutionReport::call_failure("boom")),
            Err(MetricsError::NotExecOk)
        ),
        "a failed call still produced a speedup"
    );
    Ok(())
}

// State machine

fn reply(directive: &str) -> String {
    format!("Kernel below.\n```python\ndef add(a, b):\n    return a + b\n# mock: {directive}\n```")
}

fn add_task() -> KernelTask {
    let mut t = KernelTask::new("add", "Add two vectors.");
    t.reference_code = "def add(a, b):\n    return a + b\n".into();
    t.test_spec = vec![TestCase::new("t0", 7), TestCase::new("t1", 8)];
    t
}

fn scripted_run(transcript: &[String], config: &AgentConfig) -> AttemptLog {
    let backend = ScriptedBackend::new(transcript.to_vec());
    let executor = MockExecutor::default();
    let ids = BTreeSet::new();
    let bcfg = BackendConfig::default();
    let ctx = AgentContext {
        backend: &backend,
        backend_config: &bcfg,
        executor: &executor,
        corpus: &[],
        benchmark_ids: &ids,
        knowledge: None,
        eval: EvalConfig::default(),
        replica: 0,
    };
    run_task(&add_task(), config, &ctx, &mut NullSink)
}

fn render(log: &AttemptLog, best: Option<&[Option<f64>]>) -> String {
    let mut out = String::new();
    for (i, a) in log.attempts.iter().enumerate() {
        let speedup = a.speedup.map_or("-".to_string(), |s| format!("{s:.4}"));
        out.push_str(&format!(
            "{} {} s{} {} {}",
            a.iteration_index,
            a.phase,
            a.strategy_id,
            if a.exec_ok() { "pass" } else { "fail" },
            speedup
        ));
        if let Some(best) = best {
            let b = best[i].map_or("-".to_string(), |s| format!("{s:.4}"));
            out.push_str(&format!(" best={b}"));
        }
        out.push('\n');
    }
    out
}

fn long_transcript() -> Vec<String> {
    [
        "compile-error",
        "correct latency=4,4 ref=4,4",
        "correct latency=2,4 ref=4,4",
        "wrong",
        "correct latency=5,5 ref=4,4",
        "correct latency=1,2 ref=4,4",
        "runtime-error",
        "timeout",
        "wrong offset=0.1",
        "correct latency=2,2 ref=4,4",
        "sub",
        "correct latency=1,1 ref=4,4",
        "correct latency=8,8 ref=4,4",
        "compile-error",
        "compile-error",
        "compile-error",
        "correct latency=0.5,1 ref=4,4",
        "wrong",
        "correct latency=1,1 ref=4,4",
        "correct latency=0.5,0.5 ref=4,4",
    ]
    .iter()
    .map(|d| reply(d))
    .collect()
}

fn state_machine_traces() -> Check {
    let mut golden = String::new();

    // (a) fail, fail, pass
    let a_cfg = AgentConfig {
        max_iterations: 3,
        ..AgentConfig::default()
    };
    let a = scripted_run(&[reply("wrong"), reply("wrong"), reply("correct")], &a_cfg);
    let phases: Vec<Phase> = a.attempts.iter().map(|x| x.phase).collect();
    ensure!(
        phases == [Phase::Generate, Phase::Reflect, Phase::Reflect],
        "trace a phases {phases:?}"
    );
    ensure!(
        a.attempts[2].exec_ok(),
        "trace a: third attempt not correct"
    );
    ensure!(
        a.outcome == TaskOutcome::Completed,
        "trace a: {:?}",
        a.outcome
    );
    golden.push_str("# fail, fail, pass\n");
    golden.push_str(&render(&a, None));

    // (b) persistent failures with a reset threshold of two
    let b_cfg = AgentConfig {
        max_iterations: 5,
        max_perf_debug_num: 2,
        ..AgentConfig::default()
    };
    let b = scripted_run(&vec![reply("wrong"); 5], &b_cfg);
    let third = &b.attempts[2];
    ensure!(
        third.strategy_id == 1 && third.phase == Phase::Generate,
        "trace b attempt 3: strategy {} phase {}",
        third.strategy_id,
        third.phase
    );
    golden.push_str("# persistent failures, reset after 2\n");
    golden.push_str(&render(&b, None));

    // (c) best correct speedup over 20 iterations
    let transcript = long_transcript();
    let mut best = Vec::new();
    for n in 1..=20u32 {
        let cfg = AgentConfig {
            max_iterations: n,
            ..AgentConfig::default()
        };
        let log = scripted_run(&transcript[..n as usize], &cfg);
        best.push(log.memory.best_correct.as_ref().map(|b| b.speedup));
    }
    for w in best.windows(2) {
        let (prev, next) = (w[0].unwrap_or(0.0), w[1].unwrap_or(0.0));
        ensure!(next >= prev, "best speedup fell from {prev} to {next}");
        ensure!(w[0].is_none() || w[1].is_some(), "best correct was lost");
    }
    let c = scripted_run(
        &transcript,
        &AgentConfig {
            max_iterations: 20,
            ..AgentConfig::default()
        },
    );
    ensure!(
        c.attempts.len() == 20,
        "trace c made {} attempts",
        c.attempts.len()
    );
    golden.push_str("# twenty iterations\n");
    golden.push_str(&render(&c, Some(&best)));

    // Determinism: a second run renders identically.
    let again = scripted_run(
        &transcript,
        &AgentConfig {
            max_iterations: 20,
            ..AgentConfig::default()
        },
    );
    ensure!(
        render(&again, Some(&best)) == render(&c, Some(&best)),
        "reruns differ"
    );

    let path = fixtures().join("state_machine.golden");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &golden).map_err(|e| e.to_string())?;
    }
    let want = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    ensure!(want == golden, "golden mismatch; got:\n{golden}");
    Ok(())
}

// Monotonicity

fn run_property<S: Strategy>(
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Check {
    let mut runner = TestRunner::new(Config {
        cases: 256,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn random_log(outcomes: &[(bool, bool)], replica: usize) -> RunLog {
    let mut h = header(
        (0..outcomes.len())
            .map(|i| TaskRef {
                id: format!("t{i:03}"),
                difficulty: (i % 5) as u8 + 1,
            })
            .collect(),
    );
    h.replica = replica;
    let mut log = RunLog::new(h);
    for (i, &(call, exec)) in outcomes.iter().enumerate() {
        let mut r = record(&format!("t{i:03}"), call, call && exec);
        r.replica = replica;
        log.records.push(r);
    }
    log
}

fn monotonicity() -> Check {
    run_property((1u64..=100, 0.0f64..=1.0), |(n, frac)| {
        let c = (frac * n as f64).round() as u64;
        let mut prev = 0.0;
        for k in 1..=n {
            let v = pass_at_k(n, c, k).unwrap();
            prop_assert!(v >= prev - 1e-15, "k: n={} c={} k={}", n, c, k);
            prev = v;
        }
        for k in [1, n / 2 + 1, n] {
            let mut prev = 0.0;
            for c in 0..=n {
                let v = pass_at_k(n, c, k).unwrap();
                prop_assert!(v >= prev - 1e-15, "c: n={} c={} k={}", n, c, k);
                prev = v;
            }
        }
        Ok(())
    })?;

    run_property(
        prop::collection::vec((any::<bool>(), any::<bool>()), 1..60),
        |outcomes| {
            let log = random_log(&outcomes, 0);
            for sel in [Selector::Best, Selector::Final] {
                prop_assert!(
                    exec_accuracy(&log, sel).unwrap() <= call_accuracy(&log, sel).unwrap()
                );
            }
            Ok(())
        },
    )?;

    run_property(
        (1usize..8, 1usize..12).prop_flat_map(|(replicas, tasks)| {
            prop::collection::vec(
                prop::collection::vec((any::<bool>(), any::<bool>()), tasks),
                replicas,
            )
        }),
        |per_replica| {
            let logs: Vec<RunLog> = per_replica
                .iter()
                .enumerate()
                .map(|(i, o)| random_log(o, i))
                .collect();
            let table = scaling_table(&logs, logs.len() as u64).unwrap();
            for w in table.windows(2) {
                prop_assert!(w[1].call_pass_at_k >= w[0].call_pass_at_k - 1e-12);
                prop_assert!(w[1].exec_pass_at_k >= w[0].exec_pass_at_k - 1e-12);
                prop_assert!(w[0].exec_pass_at_k <= w[0].call_pass_at_k + 1e-12);
            }
            Ok(())
        },
    )
}

// Retrieval

fn retrieval_determinism() -> Check {
    let softmax = "def softmax(x):\n    z = x - x.max()\n    e = exp(z)\n    return e / e.sum()\n";
    let corpus = vec![
        CorpusEntry::new("matmul", "def matmul(a, b):\n    return a @ b\n"),
        CorpusEntry::new("softmax_ref", softmax),
        CorpusEntry::new("relu", "def relu(x):\n    return max(x, 0)\n"),
    ];
    let none = BTreeSet::new();
    let hit = retrieve_top1(softmax, &corpus, &none).ok_or("no hit")?;
    ensure!(
        hit.entry.entry_id == "softmax_ref",
        "self retrieval got {}",
        hit.entry.entry_id
    );
    ensure!(hit.score.value() == 1.0, "self score {}", hit.score.value());

    let twins = vec![
        CorpusEntry::new("zeta", "def f(x): return x * 2"),
        CorpusEntry::new("alpha", "def f(x): return x * 2"),
        CorpusEntry::new("mid", "def f(x): return x * 2"),
    ];
    for _ in 0..3 {
        let hit = retrieve_top1("def f(x): return x * 2", &twins, &none).ok_or("no hit")?;
        ensure!(
            hit.entry.entry_id == "alpha",
            "tie broke to {}",
            hit.entry.entry_id
        );
    }

    // Corpus seeded with an entry that collides with a benchmark task id.
    let mut task = KernelTask::new("softmax_ref", "Row softmax.");
    task.reference_code = softmax.into();
    let ids: BTreeSet<String> = ["softmax_ref".to_string(), "relu".to_string()].into();
    let backend = ScriptedBackend::new(Vec::<String>::new());
    let bcfg = BackendConfig::default();
    let exec = MockExecutor::default();
    let ctx = AgentContext {
        backend: &backend,
        backend_config: &bcfg,
        executor: &exec,
        corpus: &corpus,
        benchmark_ids: &ids,
        knowledge: None,
        eval: EvalConfig::default(),
        replica: 0,
    };
    let chosen = select_exemplar(&task, &AgentConfig::default(), &ctx).ok_or("no exemplar")?;
    ensure!(
        !ids.contains(&chosen.entry_id),
        "exemplar {} is a benchmark task",
        chosen.entry_id
    );
    ensure!(chosen.entry_id == "matmul", "exemplar {}", chosen.entry_id);
    Ok(())
}

// Protocol robustness

fn stub(script: &str) -> SubprocessExecutor {
    SubprocessExecutor::new("sh", vec!["-c".into(), script.into()])
        .with_grace(Duration::from_millis(200))
}

fn request(timeout: Duration) -> ExecutionRequest {
    ExecutionRequest {
        candidate_code: "def add(a, b): return a + b".into(),
        reference_code: "def add(a, b): return a + b".into(),
        entry_point: "add".into(),
        tests: vec![TestCase::new("t0", 1)],
        timing: TimingConfig::default(),
        timeout,
    }
}

fn protocol_robustness() -> Check {
    let cases = [
        (
            "garbage output",
            "cat >/dev/null; echo '<<not a report>>'",
            5.0,
        ),
        ("nonzero exit", "cat >/dev/null; echo oops >&2; exit 3", 5.0),
        ("timeout", "cat >/dev/null; sleep 30", 0.3),
    ];
    for (name, script, timeout) in cases {
        let started = Instant::now();
        let report = stub(script)
            .execute(&request(Duration::from_secs_f64(timeout)))
            .map_err(|e| format!("{name}: {e}"))?;
        ensure!(!report.call_ok, "{name}: call_ok was true");
        ensure!(report.test_results.is_empty(), "{name}: has test results");
        ensure!(
            report.error_trace.as_deref().is_some_and(|t| !t.is_empty()),
            "{name}: no trace"
        );
        if name == "timeout" {
            ensure!(report.timed_out, "timeout not flagged");
            ensure!(
                started.elapsed() < Duration::from_secs(5),
                "timeout took {:?}",
                started.elapsed()
            );
        }
    }

    // The agent keeps going when every evaluation comes back broken.
    let backend = ScriptedBackend::new(vec![reply("correct"); 3]);
    let executor = stub("cat >/dev/null; echo garbage");
    let ids = BTreeSet::new();
    let bcfg = BackendConfig::default();
    let ctx = AgentContext {
        backend: &backend,
        backend_config: &bcfg,
        executor: &executor,
        corpus: &[],
        benchmark_ids: &ids,
        knowledge: None,
        eval: EvalConfig::default(),
        replica: 0,
    };
    let cfg = AgentConfig {
        max_iterations: 3,
        ..AgentConfig::default()
    };
    let log = run_task(&add_task(), &cfg, &ctx, &mut NullSink);
    ensure!(
        log.outcome == TaskOutcome::Completed,
        "outcome {:?}",
        log.outcome
    );
    ensure!(log.attempts.len() == 3, "{} attempts", log.attempts.len());
    ensure!(
        log.attempts.iter().all(|a| !a.call_ok()),
        "an attempt was call_ok"
    );
    Ok(())
}

fn main() {
    let criteria: [Criterion; 8] = [
        (
            "pass@k matches subset enumeration for n <= 8",
            pass_at_k_oracle,
        ),
        (
            "per-difficulty exec accuracy from fixture log",
            per_difficulty_fixture,
        ),
        (
            "overall call/exec accuracy from fixture log",
            overall_accuracy_fixture,
        ),
        ("kernel speedup formula and NotExecOk", speedup_formula),
        (
            "agent state-machine traces against golden file",
            state_machine_traces,
        ),
        ("pass@k, accuracy and scaling monotonicity", monotonicity),
        (
            "exemplar retrieval determinism and overlap exclusion",
            retrieval_determinism,
        ),
        (
            "runner garbage, crash and timeout become call failures",
            protocol_robustness,
        ),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".to_string()));
        match result {
            Ok(()) => println!("PASS  {name}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!(
        "{} of {} acceptance criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
