//! Benchmark tasks and manifest loading.
//!
//! A manifest is one JSON document listing tasks; each task points at its
//! reference kernel source by a path relative to the manifest. The exemplar
//! corpus used for 1-shot prompting is referenced the same way and must not
//! share any id with the benchmark.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::{self, CorpusEntry, CorpusError};

pub const DEFAULT_RTOL: f64 = 1e-3;
pub const DEFAULT_ATOL: f64 = 1e-3;
/// Difficulty assigned to tasks of manifests that do not grade difficulty.
pub const DEFAULT_DIFFICULTY: u8 = 3;

/// One seeded unit test of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub seed: u64,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
}

fn default_rtol() -> f64 {
    DEFAULT_RTOL
}

fn default_atol() -> f64 {
    DEFAULT_ATOL
}

impl TestCase {
    pub fn new(id: impl Into<String>, seed: u64) -> Self {
        Self {
            id: id.into(),
            seed,
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
        }
    }
}

/// One benchmark entry.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTask {
    pub task_id: String,
    pub instruction: String,
    /// Path of the reference kernel, relative to the manifest directory.
    pub code_path: PathBuf,
    pub reference_code: String,
    /// Callable the runner invokes; defaults to the task id.
    pub entry_point: String,
    pub test_spec: Vec<TestCase>,
    pub difficulty: u8,
    pub tags: Vec<String>,
}

impl KernelTask {
    /// Builds an in-memory task with one default test. Mostly useful for fixtures.
    pub fn new(task_id: impl Into<String>, instruction: impl Into<String>) -> Self {
        let task_id = task_id.into();
        Self {
            code_path: PathBuf::from(format!("{task_id}.py")),
            entry_point: task_id.clone(),
            task_id,
            instruction: instruction.into(),
            reference_code: String::new(),
            test_spec: vec![TestCase::new("t0", 0)],
            difficulty: DEFAULT_DIFFICULTY,
            tags: Vec::new(),
        }
    }
}

/// Machine-readable reason a task fails validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    InvalidDifficulty,
    EmptyTestSpec,
    NegativeTolerance,
    EmptyTaskId,
    DuplicateTestId,
    DuplicateTaskId,
    CorpusOverlap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub task_id: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} [{}]: {}", self.code, self.task_id, self.message)
    }
}

/// Checks the invariants of a single task. Violations are returned, never raised.
pub fn validate_task(task: &KernelTask) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |code, message: String| {
        out.push(Violation {
            code,
            task_id: task.task_id.clone(),
            message,
        })
    };
    if task.task_id.trim().is_empty() {
        push(ViolationCode::EmptyTaskId, "task id is empty".to_string());
    }
    if !(1..=5).contains(&task.difficulty) {
        push(
            ViolationCode::InvalidDifficulty,
            format!("difficulty {} is outside 1..=5", task.difficulty),
        );
    }
    if task.test_spec.is_empty() {
        push(
            ViolationCode::EmptyTestSpec,
            "task has no tests".to_string(),
        );
    }
    let mut seen = BTreeSet::new();
    for test in &task.test_spec {
        let negative = |x: f64| x.is_nan() || x < 0.0;
        if negative(test.rtol) || negative(test.atol) {
            push(
                ViolationCode::NegativeTolerance,
                format!(
                    "test {} has invalid tolerance rtol={} atol={}",
                    test.id, test.rtol, test.atol
                ),
            );
        }
        if !seen.insert(test.id.as_str()) {
            push(
                ViolationCode::DuplicateTestId,
                format!("test id {} appears more than once", test.id),
            );
        }
    }
    out
}

/// How a manifest treats difficulty labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestStyle {
    /// Every task must carry a difficulty.
    #[default]
    Graded,
    /// Difficulty is optional and defaults to [`DEFAULT_DIFFICULTY`].
    Ungraded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkManifest {
    pub name: String,
    pub style: ManifestStyle,
    pub exemplar_corpus_ref: Option<PathBuf>,
    pub tasks: Vec<KernelTask>,
    /// Entries of the exemplar corpus, loaded from `exemplar_corpus_ref`.
    pub corpus: Vec<CorpusEntry>,
}

impl BenchmarkManifest {
    pub fn task_ids(&self) -> BTreeSet<String> {
        self.tasks.iter().map(|t| t.task_id.clone()).collect()
    }

    /// Number of tasks per difficulty level, in ascending level order.
    pub fn difficulty_counts(&self) -> BTreeMap<u8, usize> {
        let mut counts = BTreeMap::new();
        for task in &self.tasks {
            *counts.entry(task.difficulty).or_insert(0) += 1;
        }
        counts
    }

    pub fn task(&self, task_id: &str) -> Option<&KernelTask> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("manifest validation failed: {}", format_violations(.0))]
    Validation(Vec<Violation>),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl ManifestError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ManifestError::Validation(v) => v,
            _ => &[],
        }
    }
}

// On-disk document shapes.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    name: String,
    #[serde(default)]
    style: ManifestStyle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exemplar_corpus_ref: Option<PathBuf>,
    #[serde(default)]
    tasks: Vec<TaskDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskDoc {
    id: String,
    instruction: String,
    code_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entry_point: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    difficulty: Option<u8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    tags: Vec<String>,
    #[serde(default)]
    tests: Vec<TestCase>,
}

/// Loads and validates a benchmark manifest together with its exemplar corpus.
pub fn load_manifest(path: &Path) -> Result<BenchmarkManifest, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let doc: ManifestDoc = serde_json::from_str(&text).map_err(|e| ManifestError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut violations = Vec::new();
    let mut tasks = Vec::with_capacity(doc.tasks.len());
    for t in doc.tasks {
        let difficulty = match (t.difficulty, doc.style) {
            (Some(d), _) => d,
            (None, ManifestStyle::Ungraded) => DEFAULT_DIFFICULTY,
            (None, ManifestStyle::Graded) => {
                violations.push(Violation {
                    code: ViolationCode::InvalidDifficulty,
                    task_id: t.id.clone(),
                    message: "graded manifest task has no difficulty".to_string(),
                });
                0
            }
        };
        let code_file = base.join(&t.code_path);
        let reference_code =
            fs::read_to_string(&code_file).map_err(|source| ManifestError::Io {
                path: code_file.clone(),
                source,
            })?;
        let task = KernelTask {
            entry_point: t.entry_point.unwrap_or_else(|| t.id.clone()),
            task_id: t.id,
            instruction: t.instruction,
            code_path: t.code_path,
            reference_code,
            test_spec: t.tests,
            difficulty,
            tags: t.tags,
        };
        violations.extend(
            validate_task(&task)
                .into_iter()
                // The missing-difficulty case was already reported above.
                .filter(|v| !(v.code == ViolationCode::InvalidDifficulty && task.difficulty == 0)),
        );
        tasks.push(task);
    }

    let mut ids = BTreeSet::new();
    for task in &tasks {
        if !ids.insert(task.task_id.as_str()) {
            violations.push(Violation {
                code: ViolationCode::DuplicateTaskId,
                task_id: task.task_id.clone(),
                message: "task id appears more than once".to_string(),
            });
        }
    }

    let corpus = match &doc.exemplar_corpus_ref {
        Some(rel) => retrieval::load_corpus(&base.join(rel))?,
        None => Vec::new(),
    };
    for entry in &corpus {
        if ids.contains(entry.entry_id.as_str()) {
            violations.push(Violation {
                code: ViolationCode::CorpusOverlap,
                task_id: entry.entry_id.clone(),
                message: "exemplar corpus contains a benchmark task id".to_string(),
            });
        }
    }

    if !violations.is_empty() {
        return Err(ManifestError::Validation(violations));
    }
    Ok(BenchmarkManifest {
        name: doc.name,
        style: doc.style,
        exemplar_corpus_ref: doc.exemplar_corpus_ref,
        tasks,
        corpus,
    })
}

/// Writes `manifest` into `dir`: the manifest document as `manifest.json`,
/// each task's reference code at its `code_path`, and the corpus (when
/// referenced) at `exemplar_corpus_ref`. Returns the manifest path.
pub fn write_manifest(manifest: &BenchmarkManifest, dir: &Path) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let doc = ManifestDoc {
        name: manifest.name.clone(),
        style: manifest.style,
        exemplar_corpus_ref: manifest.exemplar_corpus_ref.clone(),
        tasks: manifest
            .tasks
            .iter()
            .map(|t| TaskDoc {
                id: t.task_id.clone(),
                instruction: t.instruction.clone(),
                code_path: t.code_path.clone(),
                entry_point: (t.entry_point != t.task_id).then(|| t.entry_point.clone()),
                difficulty: Some(t.difficulty),
                tags: t.tags.clone(),
                tests: t.test_spec.clone(),
            })
            .collect(),
    };
    for task in &manifest.tasks {
        write_file(&dir.join(&task.code_path), &task.reference_code)?;
    }
    if let Some(rel) = &manifest.exemplar_corpus_ref {
        retrieval::write_corpus(&manifest.corpus, &dir.join(rel))?;
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&doc).map_err(std::io::Error::other)?;
    fs::write(&path, text)?;
    Ok(path)
}

pub(crate) fn write_file(path: &Path, contents: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)
}
