//! Runs candidates in a separate runner process.
//!
//! The request document goes to the runner's stdin and one report document
//! is read from its stdout. The runner is started in its own process group
//! so a timeout kills everything it spawned.

use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{parse_report, ExecutionReport, ExecutionRequest};
use super::{Executor, ExecutorError};

/// Bytes kept from each of stdout and stderr.
const MAX_CAPTURE: usize = 4 * 1024 * 1024;
const POLL_INTERVAL: Duration = Duration::from_millis(5);
pub const DEFAULT_GRACE: Duration = Duration::from_millis(500);

#[derive(Debug, Clone)]
pub struct SubprocessExecutor {
    program: String,
    args: Vec<String>,
    /// Extra time allowed for reaping the process and draining pipes after a kill.
    grace: Duration,
}

impl SubprocessExecutor {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
            grace: DEFAULT_GRACE,
        }
    }

    /// Splits a command line given as a list into program and arguments.
    pub fn from_command(command: &[String]) -> Option<Self> {
        let (program, args) = command.split_first()?;
        Some(Self::new(program.clone(), args.to_vec()))
    }

    pub fn with_grace(mut self, grace: Duration) -> Self {
        self.grace = grace;
        self
    }

    fn describe(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

enum Outcome {
    Exited(ExitStatus),
    TimedOut,
}

impl Executor for SubprocessExecutor {
    fn execute(&self, request: &ExecutionRequest) -> Result<ExecutionReport, ExecutorError> {
        let payload =
            serde_json::to_vec(&request.to_document()).expect("request document serialises");

        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0)
            .spawn()
            .map_err(|e| ExecutorError::Unavailable {
                runner: self.describe(),
                reason: e.to_string(),
            })?;

        let mut stdin = child.stdin.take().expect("stdin is piped");
        // A runner may exit without reading its input; a broken pipe is not an error here.
        let writer = thread::spawn(move || {
            let _ = stdin.write_all(&payload);
        });
        let stdout = spawn_reader(child.stdout.take().expect("stdout is piped"));
        let stderr = spawn_reader(child.stderr.take().expect("stderr is piped"));

        let outcome = wait_with_timeout(&mut child, request.timeout);
        let drain_deadline = Instant::now() + self.grace;
        let out = collect(&stdout, drain_deadline);
        let err = collect(&stderr, drain_deadline);
        let _ = writer.join();

        let report = match outcome {
            Outcome::TimedOut => ExecutionReport::timeout(format!(
                "runner killed after exceeding timeout of {:?}\n{}",
                request.timeout,
                describe_output(&out, &err)
            )),
            Outcome::Exited(status) if !status.success() => ExecutionReport::call_failure(format!(
                "runner crashed ({status})\n{}",
                describe_output(&out, &err)
            )),
            Outcome::Exited(_) => match parse_report(&out) {
                Ok(report) => report,
                Err(e) => {
                    ExecutionReport::call_failure(format!("{e}\n{}", describe_output(&out, &err)))
                }
            },
        };
        Ok(report)
    }
}

fn spawn_reader<R: Read + Send + 'static>(mut reader: R) -> mpsc::Receiver<Vec<u8>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut buf = Vec::new();
        let mut chunk = [0u8; 8192];
        loop {
            match reader.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = MAX_CAPTURE.saturating_sub(buf.len());
                    buf.extend_from_slice(&chunk[..n.min(room)]);
                }
            }
        }
        let _ = tx.send(buf);
    });
    rx
}

fn collect(rx: &mpsc::Receiver<Vec<u8>>, deadline: Instant) -> Vec<u8> {
    let wait = deadline.saturating_duration_since(Instant::now());
    rx.recv_timeout(wait).unwrap_or_default()
}

fn wait_with_timeout(child: &mut Child, timeout: Duration) -> Outcome {
    let start = Instant::now();
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return Outcome::Exited(status),
            Ok(None) => {}
            Err(_) => break,
        }
        if start.elapsed() >= timeout {
            break;
        }
        thread::sleep(POLL_INTERVAL);
    }
    kill_group(child);
    let _ = child.wait();
    Outcome::TimedOut
}

fn kill_group(child: &mut Child) {
    let pid = child.id() as libc::pid_t;
    // SAFETY: signalling a process group we created; failure is harmless.
    unsafe {
        libc::killpg(pid, libc::SIGKILL);
    }
    let _ = child.kill();
}

fn describe_output(stdout: &[u8], stderr: &[u8]) -> String {
    format!(
        "--- stdout ---\n{}\n--- stderr ---\n{}",
        String::from_utf8_lossy(stdout),
        String::from_utf8_lossy(stderr)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::TestCase;

    fn request() -> ExecutionRequest {
        ExecutionRequest {
            candidate_code: "k".into(),
            reference_code: "r".into(),
            entry_point: "k".into(),
            tests: vec![TestCase::new("t0", 1)],
            timing: Default::default(),
            timeout: Duration::from_secs(5),
        }
    }

    #[test]
    fn command_list_splits_into_program_and_args() {
        let cmd = vec!["python3".to_string(), "-m".into(), "runner".into()];
        let e = SubprocessExecutor::from_command(&cmd).unwrap();
        assert_eq!(e.describe(), "python3 -m runner");
        assert!(SubprocessExecutor::from_command(&[]).is_none());
    }

    #[test]
    fn missing_program_is_unavailable() {
        let e = SubprocessExecutor::new("/nonexistent/kernel-runner", Vec::new());
        match e.execute(&request()) {
            Err(ExecutorError::Unavailable { runner, .. }) => {
                assert_eq!(runner, "/nonexistent/kernel-runner")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn runner_receives_the_request_document() {
        let e = SubprocessExecutor::new(
            "sh",
            vec![
                "-c".into(),
                r#"grep -q '"entry_point":"k"' && printf '{"call_ok":false,"error_trace":"seen"}'"#
                    .into(),
            ],
        );
        let r = e.execute(&request()).unwrap();
        assert_eq!(r.error_trace.as_deref(), Some("seen"));
    }

    #[test]
    fn captured_output_is_bounded() {
        let e = SubprocessExecutor::new(
            "sh",
            vec![
                "-c".into(),
                "cat >/dev/null; head -c 6000000 /dev/zero | tr '\\0' x".into(),
            ],
        );
        let r = e.execute(&request()).unwrap();
        assert!(!r.call_ok);
        assert!(r.error_trace.unwrap().len() < MAX_CAPTURE + 1024);
    }
}
