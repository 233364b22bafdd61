//! Line-delimited run logs: a header line followed by one record per attempt.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::MetricsError;
use crate::agent::{AgentConfig, AttemptSink, CandidateAttempt, EvalConfig, Phase};
use crate::llm::BackendConfig;
use crate::task::BenchmarkManifest;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskRef {
    pub id: String,
    pub difficulty: u8,
}

/// Run manifest carried as the first line of every replica log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub benchmark: String,
    pub backend_id: String,
    pub replica: usize,
    pub agent: AgentConfig,
    pub backend: BackendConfig,
    pub eval: EvalConfig,
    pub tasks: Vec<TaskRef>,
    pub started_at: String,
    pub engine_version: String,
}

impl RunHeader {
    pub fn new(
        benchmark: &BenchmarkManifest,
        backend_id: impl Into<String>,
        agent: AgentConfig,
        backend: BackendConfig,
        eval: EvalConfig,
    ) -> Self {
        Self {
            benchmark: benchmark.name.clone(),
            backend_id: backend_id.into(),
            replica: 0,
            agent,
            backend,
            eval,
            tasks: benchmark
                .tasks
                .iter()
                .map(|t| TaskRef {
                    id: t.task_id.clone(),
                    difficulty: t.difficulty,
                })
                .collect(),
            started_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// One attempt as stored in a log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub task_id: String,
    pub replica: usize,
    pub iteration: u32,
    pub phase: Phase,
    pub strategy_id: u32,
    pub call_ok: bool,
    pub tests_passed: u32,
    pub tests_total: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_digest: Option<String>,
}

impl AttemptRecord {
    pub fn exec_ok(&self) -> bool {
        self.call_ok && self.tests_total > 0 && self.tests_passed == self.tests_total
    }

    pub fn key(&self) -> (&str, usize, u32) {
        (&self.task_id, self.replica, self.iteration)
    }
}

impl From<&CandidateAttempt> for AttemptRecord {
    fn from(a: &CandidateAttempt) -> Self {
        let (call_ok, passed, total) = match &a.report {
            Some(r) => (
                r.call_ok,
                r.tests_passed() as u32,
                r.test_results.len() as u32,
            ),
            None => (false, 0, 0),
        };
        Self {
            task_id: a.task_id.clone(),
            replica: a.replica,
            iteration: a.iteration_index,
            phase: a.phase,
            strategy_id: a.strategy_id,
            call_ok,
            tests_passed: passed,
            tests_total: total,
            speedup: a.speedup,
            trace_digest: a.error_trace().map(|t| digest(&t)),
        }
    }
}

fn digest(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub records: Vec<AttemptRecord>,
}

impl RunLog {
    pub fn new(header: RunHeader) -> Self {
        Self {
            header,
            records: Vec::new(),
        }
    }

    /// Every task named by the header or by a record, in id order.
    pub fn task_ids(&self) -> BTreeSet<String> {
        self.header
            .tasks
            .iter()
            .map(|t| t.id.clone())
            .chain(self.records.iter().map(|r| r.task_id.clone()))
            .collect()
    }

    pub fn difficulty(&self, task_id: &str) -> Option<u8> {
        self.header
            .tasks
            .iter()
            .find(|t| t.id == task_id)
            .map(|t| t.difficulty)
    }

    pub fn records_for<'a>(&'a self, task_id: &'a str) -> impl Iterator<Item = &'a AttemptRecord> {
        self.records.iter().filter(move |r| r.task_id == task_id)
    }

    /// Records ordered by (task_id, replica, iteration).
    pub fn sorted_records(&self) -> Vec<&AttemptRecord> {
        let mut v: Vec<&AttemptRecord> = self.records.iter().collect();
        v.sort_by(|a, b| a.key().cmp(&b.key()));
        v
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serialises");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serialises"));
            out.push('\n');
        }
        out
    }

    /// Parses a log. A malformed final line is taken to be a record cut
    /// off by a crash and is dropped; malformed lines elsewhere are errors.
    pub fn parse(text: &str, origin: &Path) -> Result<Self, MetricsError> {
        let parse_err = |line: usize, message: String| MetricsError::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty())
            .collect();
        let Some(&(first_no, first)) = lines.first() else {
            return Err(MetricsError::EmptyLog);
        };
        let header: RunHeader =
            serde_json::from_str(first).map_err(|e| parse_err(first_no, e.to_string()))?;
        let mut log = RunLog::new(header);
        let mut keys = BTreeSet::new();
        let last = lines.len() - 1;
        for (idx, &(no, line)) in lines.iter().enumerate().skip(1) {
            match serde_json::from_str::<AttemptRecord>(line) {
                Ok(r) => {
                    if !keys.insert((r.task_id.clone(), r.replica, r.iteration)) {
                        return Err(parse_err(
                            no,
                            format!(
                                "duplicate record for task {} replica {} iteration {}",
                                r.task_id, r.replica, r.iteration
                            ),
                        ));
                    }
                    log.records.push(r);
                }
                Err(e) if idx == last => {
                    log::warn!(
                        "{}:{no}: dropping truncated final record: {e}",
                        origin.display()
                    );
                }
                Err(e) => return Err(parse_err(no, e.to_string())),
            }
        }
        Ok(log)
    }
}

pub fn read_run_log(path: &Path) -> Result<RunLog, MetricsError> {
    let file = File::open(path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| MetricsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        text.push_str(&line);
        text.push('\n');
    }
    RunLog::parse(&text, path)
}

/// Reads every `*.jsonl` log in `dir`, sorted by file name.
pub fn read_log_dir(dir: &Path) -> Result<Vec<RunLog>, MetricsError> {
    let entries = std::fs::read_dir(dir).map_err(|source| MetricsError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    paths.iter().map(|p| read_run_log(p)).collect()
}

/// Appends records to a log file, flushing after each one.
pub struct RunLogWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl RunLogWriter {
    /// Creates (truncating) `path` and writes the header line.
    pub fn create(path: &Path, header: &RunHeader) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = Self {
            out: BufWriter::new(File::create(path)?),
            path: path.to_path_buf(),
        };
        w.write_line(&serde_json::to_string(header).map_err(std::io::Error::other)?)?;
        Ok(w)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &AttemptRecord) -> std::io::Result<()> {
        self.write_line(&serde_json::to_string(record).map_err(std::io::Error::other)?)
    }

    fn write_line(&mut self, line: &str) -> std::io::Result<()> {
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}

impl AttemptSink for RunLogWriter {
    fn record(&mut self, attempt: &CandidateAttempt) -> std::io::Result<()> {
        self.append(&AttemptRecord::from(attempt))
    }
}
