//! Request and report documents exchanged with a kernel runner.
//!
//! Both are single JSON documents. Field names are normative; see
//! `docs/PROTOCOL.md` at the repository root.

use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::task::TestCase;

pub const DEFAULT_WARMUP_RUNS: u32 = 10;
pub const DEFAULT_TIMED_RUNS: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingConfig {
    pub warmup_runs: u32,
    pub timed_runs: u32,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            warmup_runs: DEFAULT_WARMUP_RUNS,
            timed_runs: DEFAULT_TIMED_RUNS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionRequest {
    pub candidate_code: String,
    pub reference_code: String,
    pub entry_point: String,
    pub tests: Vec<TestCase>,
    pub timing: TimingConfig,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RequestError {
    #[error("request has no tests")]
    NoTests,
    #[error("timeout must be positive")]
    ZeroTimeout,
    #[error("timed_runs must be at least 1")]
    NoTimedRuns,
}

impl ExecutionRequest {
    pub fn validate(&self) -> Result<(), RequestError> {
        if self.tests.is_empty() {
            return Err(RequestError::NoTests);
        }
        if self.timeout.is_zero() {
            return Err(RequestError::ZeroTimeout);
        }
        if self.timing.timed_runs == 0 {
            return Err(RequestError::NoTimedRuns);
        }
        Ok(())
    }

    /// The wire document sent to a runner.
    pub fn to_document(&self) -> RequestDocument<'_> {
        RequestDocument {
            candidate_code: &self.candidate_code,
            reference_code: &self.reference_code,
            entry_point: &self.entry_point,
            tests: &self.tests,
            warmup_runs: self.timing.warmup_runs,
            timed_runs: self.timing.timed_runs,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RequestDocument<'a> {
    pub candidate_code: &'a str,
    pub reference_code: &'a str,
    pub entry_point: &'a str,
    pub tests: &'a [TestCase],
    pub warmup_runs: u32,
    pub timed_runs: u32,
}

/// Owned form of [`RequestDocument`], used by runners reading a request.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OwnedRequestDocument {
    pub candidate_code: String,
    pub reference_code: String,
    pub entry_point: String,
    pub tests: Vec<TestCase>,
    #[serde(default = "default_warmup")]
    pub warmup_runs: u32,
    #[serde(default = "default_timed")]
    pub timed_runs: u32,
}

fn default_warmup() -> u32 {
    DEFAULT_WARMUP_RUNS
}

fn default_timed() -> u32 {
    DEFAULT_TIMED_RUNS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestResult {
    #[serde(rename = "id")]
    pub test_id: String,
    pub passed: bool,
    /// Non-finite values travel as JSON `null` and read back as `+inf`.
    #[serde(serialize_with = "ser_err", deserialize_with = "de_err")]
    pub max_abs_err: f64,
    #[serde(default)]
    pub candidate_latency_ms: Option<f64>,
    #[serde(default)]
    pub reference_latency_ms: Option<f64>,
}

fn ser_err<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn de_err<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Cascaded outcome of running one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionReport {
    pub call_ok: bool,
    #[serde(default)]
    pub error_trace: Option<String>,
    #[serde(default)]
    pub test_results: Vec<TestResult>,
    #[serde(default)]
    pub timed_out: bool,
}

impl ExecutionReport {
    /// A report for a candidate that did not compile or run.
    pub fn call_failure(trace: impl Into<String>) -> Self {
        Self {
            call_ok: false,
            error_trace: Some(trace.into()),
            test_results: Vec::new(),
            timed_out: false,
        }
    }

    pub fn timeout(trace: impl Into<String>) -> Self {
        Self {
            timed_out: true,
            ..Self::call_failure(trace)
        }
    }

    /// Compiled, ran and passed every test.
    pub fn all_passed(&self) -> bool {
        self.call_ok && !self.test_results.is_empty() && self.test_results.iter().all(|t| t.passed)
    }

    pub fn tests_passed(&self) -> usize {
        self.test_results.iter().filter(|t| t.passed).count()
    }

    /// Text handed to the reflector when the candidate failed.
    pub fn failure_trace(&self) -> String {
        if let Some(trace) = self.error_trace.as_deref().filter(|t| !t.trim().is_empty()) {
            return trace.to_string();
        }
        let failed: Vec<String> = self
            .test_results
            .iter()
            .filter(|t| !t.passed)
            .map(|t| {
                if t.max_abs_err.is_finite() {
                    format!(
                        "test {} failed: max abs error {:e}",
                        t.test_id, t.max_abs_err
                    )
                } else {
                    format!("test {} failed: output shape mismatch or NaN", t.test_id)
                }
            })
            .collect();
        if failed.is_empty() {
            "candidate failed without a trace".to_string()
        } else {
            failed.join("\n")
        }
    }

    /// Enforces the cascade on a report of unknown provenance: no test
    /// results without a successful call, no latencies unless every test
    /// passed.
    pub fn into_cascaded(mut self) -> Self {
        if !self.call_ok {
            self.test_results.clear();
            if self
                .error_trace
                .as_deref()
                .is_none_or(|t| t.trim().is_empty())
            {
                self.error_trace = Some("candidate failed to compile or run".to_string());
            }
        } else if !self.all_passed() {
            for t in &mut self.test_results {
                t.candidate_latency_ms = None;
                t.reference_latency_ms = None;
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("runner output is not a report document: {0}")]
    Malformed(String),
    #[error("report violates the protocol: {0}")]
    Invalid(String),
}

/// Parses and checks a runner's report document.
pub fn parse_report(bytes: &[u8]) -> Result<ExecutionReport, ProtocolError> {
    let report: ExecutionReport =
        serde_json::from_slice(bytes).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    validate_report(&report)?;
    Ok(report)
}

pub fn validate_report(report: &ExecutionReport) -> Result<(), ProtocolError> {
    let invalid = |m: String| Err(ProtocolError::Invalid(m));
    if !report.call_ok && !report.test_results.is_empty() {
        return invalid("call_ok is false but test_results is not empty".into());
    }
    if report.timed_out && report.call_ok {
        return invalid("timed_out report must have call_ok false".into());
    }
    for t in &report.test_results {
        for (name, v) in [
            ("candidate_latency_ms", t.candidate_latency_ms),
            ("reference_latency_ms", t.reference_latency_ms),
        ] {
            match v {
                Some(ms) if !t.passed => {
                    return invalid(format!("test {} failed but reports {name}={ms}", t.test_id))
                }
                Some(ms) if !(ms.is_finite() && ms > 0.0) => {
                    return invalid(format!("test {} has non-positive {name}={ms}", t.test_id))
                }
                _ => {}
            }
        }
        if t.max_abs_err.is_nan() || t.max_abs_err < 0.0 {
            return invalid(format!("test {} has invalid max_abs_err", t.test_id));
        }
    }
    Ok(())
}
