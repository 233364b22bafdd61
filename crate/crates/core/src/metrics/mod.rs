//! Call accuracy, execution accuracy, speedup, pass@k and the tables
//! built from them.

mod log;
mod parallel;
mod report;
mod scaling;

use std::path::PathBuf;

use thiserror::Error;

pub use self::log::{
    read_log_dir, read_run_log, AttemptRecord, RunHeader, RunLog, RunLogWriter, TaskRef,
};
pub use parallel::{replica_log_name, run_parallel, ParallelContext, ReplicaRun, ReplicaStatus};
pub use report::{report, sequential_table, Grouping, MetricsSummary, SequentialPoint, SummaryRow};
pub use scaling::{render_scaling_csv, render_scaling_table, scaling_table, ScalingPoint};

use crate::executor::ExecutionReport;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("log contains no tasks")]
    EmptyLog,
    #[error("pass@k undefined for n={n}, c={c}, k={k}")]
    Domain { n: u64, c: u64, k: u64 },
    #[error("speedup is only defined when every test passed")]
    NotExecOk,
    #[error("replica logs do not match: {0}")]
    MismatchedReplicas(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Mean over tests of reference latency / candidate latency.
pub fn kernel_speedup(report: &ExecutionReport) -> Result<f64, MetricsError> {
    if !report.all_passed() {
        return Err(MetricsError::NotExecOk);
    }
    let mut sum = 0.0;
    for t in &report.test_results {
        match (t.reference_latency_ms, t.candidate_latency_ms) {
            (Some(r), Some(c)) if r > 0.0 && c > 0.0 => sum += r / c,
            _ => return Err(MetricsError::NotExecOk),
        }
    }
    Ok(sum / report.test_results.len() as f64)
}

/// Unbiased pass@k, `1 - C(n-c, k) / C(n, k)`, as a running product so it
/// never forms a binomial coefficient.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, MetricsError> {
    if c > n || k == 0 || k > n {
        return Err(MetricsError::Domain { n, c, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    let miss = (0..k).fold(1.0f64, |acc, i| acc * (n - c - i) as f64 / (n - i) as f64);
    Ok(1.0 - miss)
}

/// Which attempt stands for a task within one replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selector {
    /// Fastest fully correct attempt; otherwise the last call-ok attempt;
    /// otherwise the last attempt.
    #[default]
    Best,
    /// The last attempt, whatever it was.
    Final,
    /// As `Best`, restricted to iterations `<=` the given index.
    UpToIteration(u32),
}

impl Selector {
    pub fn select<'a>(
        self,
        records: impl IntoIterator<Item = &'a AttemptRecord>,
    ) -> Option<&'a AttemptRecord> {
        let mut records: Vec<&AttemptRecord> = records.into_iter().collect();
        records.sort_by_key(|r| r.iteration);
        if let Selector::UpToIteration(i) = self {
            records.retain(|r| r.iteration <= i);
        }
        if self == Selector::Final {
            return records.last().copied();
        }
        let mut best: Option<&AttemptRecord> = None;
        for r in records.iter().filter(|r| r.exec_ok()) {
            let s = r.speedup.unwrap_or(0.0);
            if best.is_none_or(|b| s > b.speedup.unwrap_or(0.0)) {
                best = Some(r);
            }
        }
        best.or_else(|| records.iter().rev().find(|r| r.call_ok).copied())
            .or_else(|| records.last().copied())
    }
}

impl std::str::FromStr for Selector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "best" => Ok(Selector::Best),
            "final" => Ok(Selector::Final),
            _ => s
                .strip_prefix("iter:")
                .and_then(|i| i.parse().ok())
                .map(Selector::UpToIteration)
                .ok_or_else(|| format!("unknown selector `{s}` (best, final, iter:<n>)")),
        }
    }
}

/// Outcome of one task in one replica.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TaskResult {
    pub call_ok: bool,
    pub exec_ok: bool,
    pub speedup: Option<f64>,
}

/// One result per task (id order); tasks without records count as failed.
pub fn task_results(log: &RunLog, selector: Selector) -> Vec<(String, TaskResult)> {
    log.task_ids()
        .into_iter()
        .map(|id| {
            let result = selector
                .select(log.records_for(&id))
                .map(|r| TaskResult {
                    call_ok: r.call_ok,
                    exec_ok: r.exec_ok(),
                    speedup: if r.exec_ok() { r.speedup } else { None },
                })
                .unwrap_or_default();
            (id, result)
        })
        .collect()
}

pub fn call_accuracy(log: &RunLog, selector: Selector) -> Result<f64, MetricsError> {
    fraction(log, selector, |r| r.call_ok)
}

/// Share of all tasks whose selected attempt passed every test.
pub fn exec_accuracy(log: &RunLog, selector: Selector) -> Result<f64, MetricsError> {
    fraction(log, selector, |r| r.exec_ok)
}

fn fraction(
    log: &RunLog,
    selector: Selector,
    hit: impl Fn(&TaskResult) -> bool,
) -> Result<f64, MetricsError> {
    let results = task_results(log, selector);
    if results.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let hits = results.iter().filter(|(_, r)| hit(r)).count();
    Ok(hits as f64 / results.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{AgentConfig, EvalConfig, Phase};
    use crate::executor::TestResult;
    use crate::llm::BackendConfig;
    use proptest::prelude::*;

    fn binom(n: u64, k: u64) -> f64 {
        if k > n {
            return 0.0;
        }
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    fn report(pairs: &[(f64, f64)]) -> ExecutionReport {
        ExecutionReport {
            call_ok: true,
            error_trace: None,
            test_results: pairs
                .iter()
                .enumerate()
                .map(|(i, &(r, c))| TestResult {
                    test_id: format!("t{i}"),
                    passed: true,
                    max_abs_err: 0.0,
                    candidate_latency_ms: Some(c),
                    reference_latency_ms: Some(r),
                })
                .collect(),
            timed_out: false,
        }
    }

    #[test]
    fn speedup_examples() {
        assert_eq!(
            kernel_speedup(&report(&[(3.0, 3.0), (5.0, 5.0)])).unwrap(),
            1.0
        );
        assert_eq!(
            kernel_speedup(&report(&[(4.0, 2.0), (3.0, 3.0)])).unwrap(),
            1.5
        );
        let mut failing = report(&[(4.0, 2.0), (3.0, 3.0)]);
        failing.test_results[1].passed = false;
        assert!(matches!(
            kernel_speedup(&failing),
            Err(MetricsError::NotExecOk)
        ));
        assert!(matches!(
            kernel_speedup(&ExecutionReport::call_failure("x")),
            Err(MetricsError::NotExecOk)
        ));
    }

    #[test]
    fn pass_at_k_examples() {
        assert_eq!(pass_at_k(10, 0, 5).unwrap(), 0.0);
        assert_eq!(pass_at_k(10, 10, 1).unwrap(), 1.0);
        assert!((pass_at_k(5, 2, 2).unwrap() - 0.7).abs() < 1e-15);
        assert!(pass_at_k(3, 4, 1).is_err());
        assert!(pass_at_k(3, 1, 0).is_err());
        assert!(pass_at_k(3, 1, 4).is_err());
    }

    #[test]
    fn pass_at_k_is_stable_for_large_n() {
        let v = pass_at_k(10_000, 37, 5_000).unwrap();
        assert!(v.is_finite() && (0.0..=1.0).contains(&v));
        let v = pass_at_k(10_000, 1, 1).unwrap();
        assert!((v - 1e-4).abs() < 1e-15);
    }

    fn log_with(outcomes: &[(bool, bool)]) -> RunLog {
        let mut log = RunLog::new(RunHeader {
            benchmark: "b".into(),
            backend_id: "x".into(),
            replica: 0,
            agent: AgentConfig::default(),
            backend: BackendConfig::default(),
            eval: EvalConfig::default(),
            tasks: (0..outcomes.len())
                .map(|i| TaskRef {
                    id: format!("t{i:02}"),
                    difficulty: 1,
                })
                .collect(),
            started_at: String::new(),
            engine_version: String::new(),
        });
        for (i, &(call, exec)) in outcomes.iter().enumerate() {
            log.records.push(AttemptRecord {
                task_id: format!("t{i:02}"),
                replica: 0,
                iteration: 0,
                phase: Phase::Generate,
                strategy_id: 0,
                call_ok: call,
                tests_passed: if exec { 2 } else { 1.min(call as u32) },
                tests_total: if call { 2 } else { 0 },
                speedup: exec.then_some(1.0),
                trace_digest: None,
            });
        }
        log
    }

    #[test]
    fn accuracy_counts_fixture_records() {
        let outcomes: Vec<(bool, bool)> = (0..8).map(|i| (i < 3, i < 1)).collect();
        let log = log_with(&outcomes);
        assert_eq!(call_accuracy(&log, Selector::Best).unwrap(), 0.375);
        assert_eq!(exec_accuracy(&log, Selector::Best).unwrap(), 0.125);
        let all = log_with(&[(true, false); 4]);
        assert_eq!(call_accuracy(&all, Selector::Best).unwrap(), 1.0);
        assert_eq!(exec_accuracy(&all, Selector::Best).unwrap(), 0.0);
    }

    #[test]
    fn tasks_without_records_count_as_failures() {
        let mut log = log_with(&[(true, true), (true, true)]);
        log.records.pop();
        assert_eq!(exec_accuracy(&log, Selector::Best).unwrap(), 0.5);
    }

    #[test]
    fn empty_log_is_an_error() {
        assert!(matches!(
            call_accuracy(&log_with(&[]), Selector::Best),
            Err(MetricsError::EmptyLog)
        ));
    }

    #[test]
    fn selectors() {
        let mk = |iteration, call_ok, exec, speedup: Option<f64>| AttemptRecord {
            task_id: "t".into(),
            replica: 0,
            iteration,
            phase: Phase::Generate,
            strategy_id: 0,
            call_ok,
            tests_passed: if exec { 1 } else { 0 },
            tests_total: if call_ok { 1 } else { 0 },
            speedup,
            trace_digest: None,
        };
        let records = vec![
            mk(0, false, false, None),
            mk(1, true, true, Some(2.0)),
            mk(2, true, true, Some(1.0)),
            mk(3, true, false, None),
        ];
        assert_eq!(Selector::Best.select(&records).unwrap().iteration, 1);
        assert_eq!(Selector::Final.select(&records).unwrap().iteration, 3);
        assert_eq!(
            Selector::UpToIteration(0)
                .select(&records)
                .unwrap()
                .iteration,
            0
        );
        assert_eq!(
            "iter:4".parse::<Selector>().unwrap(),
            Selector::UpToIteration(4)
        );
        assert!("nope".parse::<Selector>().is_err());
    }

    proptest! {
        #[test]
        fn pass_at_k_matches_closed_form(n in 1u64..40, c_frac in 0.0f64..=1.0, k_frac in 0.0f64..=1.0) {
            let c = (c_frac * n as f64).floor() as u64;
            let k = 1 + (k_frac * (n - 1) as f64).floor() as u64;
            let expect = 1.0 - binom(n - c, k) / binom(n, k);
            prop_assert!((pass_at_k(n, c, k).unwrap() - expect).abs() < 1e-9);
        }

        #[test]
        fn exec_never_exceeds_call(outcomes in prop::collection::vec((any::<bool>(), any::<bool>()), 1..40)) {
            let outcomes: Vec<(bool, bool)> = outcomes.into_iter().map(|(c, e)| (c, c && e)).collect();
            let log = log_with(&outcomes);
            prop_assert!(exec_accuracy(&log, Selector::Best).unwrap() <= call_accuracy(&log, Selector::Best).unwrap());
        }
    }
}
