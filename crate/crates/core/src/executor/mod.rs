//! Candidate execution: wire protocol, runner drivers and output comparison.

mod compare;
mod mock;
mod protocol;
mod subprocess;

use std::sync::{Condvar, Mutex};

use thiserror::Error;

pub use compare::{compare_outputs, Comparison, HostTensor};
pub use mock::{MockDirective, MockExecutor, MockOutcome};
pub use protocol::{
    parse_report, validate_report, ExecutionReport, ExecutionRequest, OwnedRequestDocument,
    ProtocolError, RequestDocument, RequestError, TestResult, TimingConfig, DEFAULT_TIMED_RUNS,
    DEFAULT_WARMUP_RUNS,
};
pub use subprocess::{SubprocessExecutor, DEFAULT_GRACE};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecutorError {
    #[error("executor `{runner}` unavailable: {reason}")]
    Unavailable { runner: String, reason: String },
}

/// Runs one candidate against its tests. Failures of the candidate itself
/// (compile errors, crashes, timeouts, malformed runner output) are
/// reported in the [`ExecutionReport`]; `Err` means the executor could not
/// run anything at all.
pub trait Executor: Send + Sync {
    fn execute(&self, request: &ExecutionRequest) -> Result<ExecutionReport, ExecutorError>;
}

impl<E: Executor + ?Sized> Executor for std::sync::Arc<E> {
    fn execute(&self, request: &ExecutionRequest) -> Result<ExecutionReport, ExecutorError> {
        (**self).execute(request)
    }
}

impl<E: Executor + ?Sized> Executor for &E {
    fn execute(&self, request: &ExecutionRequest) -> Result<ExecutionReport, ExecutorError> {
        (**self).execute(request)
    }
}

/// Caps the number of concurrent `execute` calls on the wrapped executor.
pub struct BoundedExecutor<E> {
    inner: E,
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl<E: Executor> BoundedExecutor<E> {
    pub fn new(inner: E, limit: usize) -> Self {
        Self {
            inner,
            limit: limit.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }
}

impl<E: Executor> Executor for BoundedExecutor<E> {
    fn execute(&self, request: &ExecutionRequest) -> Result<ExecutionReport, ExecutorError> {
        {
            let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
            while *n >= self.limit {
                n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
            }
            *n += 1;
        }
        let result = self.inner.execute(request);
        *self.in_flight.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        self.freed.notify_one();
        result
    }
}
