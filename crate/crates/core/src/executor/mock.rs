//! Deterministic in-process executor for tests and dry runs.
//!
//! The mock "runs" a toy elementwise-add kernel. Each test draws two seeded
//! input vectors, the reference output is their sum and the candidate's
//! output is derived from a directive embedded in the candidate code as a
//! comment line:
//!
//! ```text
//! # mock: <outcome> [key=value ...]
//! ```
//!
//! Outcomes: `correct`, `wrong` (adds `offset` to the outputs of the listed
//! `tests`, or all of them), `sub` (computes `a - b`), `compile-error`,
//! `runtime-error`, `timeout`. Keys: `latency` and `ref` take comma-separated
//! millisecond medians cycled over the tests, `tests` takes test ids,
//! `offset` a real number and `message` a single word for error traces.
//! The last directive line wins; code without one gets the executor's
//! default outcome.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::compare::{compare_outputs, HostTensor};
use super::protocol::{ExecutionReport, ExecutionRequest, TestResult};
use super::{Executor, ExecutorError};
use crate::task::TestCase;

const INPUT_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockOutcome {
    Correct,
    Wrong,
    Subtract,
    CompileError,
    RuntimeError,
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockDirective {
    pub outcome: MockOutcome,
    pub latency_ms: Vec<f64>,
    pub reference_ms: Vec<f64>,
    pub tests: Option<Vec<String>>,
    pub offset: f64,
    pub message: Option<String>,
}

impl MockDirective {
    pub fn new(outcome: MockOutcome) -> Self {
        Self {
            outcome,
            latency_ms: vec![1.0],
            reference_ms: vec![1.0],
            tests: None,
            offset: 1.0,
            message: None,
        }
    }

    /// Finds and parses the last `mock:` directive in `code`.
    pub fn find(code: &str) -> Option<Result<Self, String>> {
        code.lines()
            .filter_map(|line| {
                let rest = line.trim_start().strip_prefix('#')?.trim_start();
                rest.strip_prefix("mock:")
            })
            .next_back()
            .map(Self::parse)
    }

    pub fn parse(body: &str) -> Result<Self, String> {
        let mut words = body.split_whitespace();
        let outcome = match words.next() {
            Some("correct") => MockOutcome::Correct,
            Some("wrong") => MockOutcome::Wrong,
            Some("sub") => MockOutcome::Subtract,
            Some("compile-error") => MockOutcome::CompileError,
            Some("runtime-error") => MockOutcome::RuntimeError,
            Some("timeout") => MockOutcome::Timeout,
            Some(other) => return Err(format!("unknown mock outcome `{other}`")),
            None => return Err("empty mock directive".into()),
        };
        let mut d = Self::new(outcome);
        for word in words {
            let (key, value) = word
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got `{word}`"))?;
            match key {
                "latency" => d.latency_ms = parse_list(value)?,
                "ref" => d.reference_ms = parse_list(value)?,
                "tests" => d.tests = Some(value.split(',').map(str::to_string).collect()),
                "offset" => {
                    d.offset = value.parse().map_err(|_| format!("bad offset `{value}`"))?
                }
                "message" => d.message = Some(value.to_string()),
                _ => return Err(format!("unknown mock key `{key}`")),
            }
        }
        Ok(d)
    }

    fn affects(&self, test: &TestCase) -> bool {
        self.tests.as_ref().is_none_or(|ids| ids.contains(&test.id))
    }
}

fn parse_list(value: &str) -> Result<Vec<f64>, String> {
    let list: Vec<f64> = value
        .split(',')
        .map(|v| v.parse::<f64>().map_err(|_| format!("bad number `{v}`")))
        .collect::<Result<_, _>>()?;
    if list.is_empty() || list.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(format!("latencies must be positive: `{value}`"));
    }
    Ok(list)
}

#[derive(Debug, Clone)]
pub struct MockExecutor {
    default: MockDirective,
}

impl Default for MockExecutor {
    fn default() -> Self {
        Self::new(MockDirective::new(MockOutcome::Correct))
    }
}

impl MockExecutor {
    pub fn new(default: MockDirective) -> Self {
        Self { default }
    }

    /// Seeded inputs of a test; identical seeds give bit-identical inputs.
    pub fn test_inputs(test: &TestCase) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(test.seed);
        let a = (0..INPUT_LEN).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = (0..INPUT_LEN).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (a, b)
    }

    /// Runs a request without the executor trait's error wrapper.
    pub fn run(&self, request: &ExecutionRequest) -> ExecutionReport {
        let directive = match MockDirective::find(&request.candidate_code) {
            Some(Ok(d)) => d,
            Some(Err(e)) => return ExecutionReport::call_failure(format!("SyntaxError: {e}")),
            None => self.default.clone(),
        };
        let message = directive.message.clone();
        match directive.outcome {
            MockOutcome::CompileError => {
                return ExecutionReport::call_failure(format!(
                    "CompilationError: {}",
                    message.as_deref().unwrap_or("invalid kernel")
                ))
            }
            MockOutcome::RuntimeError => {
                return ExecutionReport::call_failure(format!(
                    "RuntimeError: {}",
                    message.as_deref().unwrap_or("kernel raised")
                ))
            }
            MockOutcome::Timeout => {
                return ExecutionReport::timeout("kernel exceeded the execution time limit")
            }
            _ => {}
        }

        let mut results = Vec::with_capacity(request.tests.len());
        for test in &request.tests {
            let (a, b) = Self::test_inputs(test);
            let reference: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let candidate: Vec<f64> = match directive.outcome {
                MockOutcome::Subtract => a.iter().zip(&b).map(|(x, y)| x - y).collect(),
                MockOutcome::Wrong if directive.affects(test) => {
                    reference.iter().map(|v| v + directive.offset).collect()
                }
                _ => reference.clone(),
            };
            let cmp = compare_outputs(
                &HostTensor::vector(candidate),
                &HostTensor::vector(reference),
                test.rtol,
                test.atol,
            );
            results.push(TestResult {
                test_id: test.id.clone(),
                passed: cmp.passed,
                max_abs_err: cmp.max_abs_err,
                candidate_latency_ms: None,
                reference_latency_ms: None,
            });
        }
        if results.iter().all(|r| r.passed) {
            for (i, r) in results.iter_mut().enumerate() {
                r.candidate_latency_ms = Some(cycle(&directive.latency_ms, i));
                r.reference_latency_ms = Some(cycle(&directive.reference_ms, i));
            }
        }
        ExecutionReport {
            call_ok: true,
            error_trace: None,
            test_results: results,
            timed_out: false,
        }
    }
}

fn cycle(values: &[f64], i: usize) -> f64 {
    values[i % values.len()]
}

impl Executor for MockExecutor {
    fn execute(&self, request: &ExecutionRequest) -> Result<ExecutionReport, ExecutorError> {
        Ok(self.run(request))
    }
}
