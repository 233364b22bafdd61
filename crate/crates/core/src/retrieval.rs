//! 1-shot exemplar retrieval by code similarity.
//!
//! Code is reduced to a multiset of lexical tokens and compared with a
//! weighted Jaccard score. Retrieval picks the single most similar corpus
//! entry, breaking ties by the lexicographically smallest id.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::KernelTask;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub entry_id: String,
    pub code: String,
    pub instruction: Option<String>,
    /// Source file relative to the corpus document.
    pub code_path: PathBuf,
}

impl CorpusEntry {
    pub fn new(entry_id: impl Into<String>, code: impl Into<String>) -> Self {
        let entry_id = entry_id.into();
        Self {
            code_path: PathBuf::from(format!("{entry_id}.py")),
            entry_id,
            code: code.into(),
            instruction: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read corpus file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse corpus {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("corpus entry id {0} appears more than once")]
    DuplicateId(String),
    #[error("corpus entry {0} has empty code")]
    EmptyCode(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusDoc {
    entries: Vec<EntryDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryDoc {
    id: String,
    code_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    instruction: Option<String>,
}

/// Loads a corpus document and the code files it references.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusEntry>, CorpusError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let doc: CorpusDoc = serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen = BTreeSet::new();
    let mut entries = Vec::with_capacity(doc.entries.len());
    for e in doc.entries {
        if !seen.insert(e.id.clone()) {
            return Err(CorpusError::DuplicateId(e.id));
        }
        let file = base.join(&e.code_path);
        let code = fs::read_to_string(&file).map_err(io_err(&file))?;
        if code.trim().is_empty() {
            return Err(CorpusError::EmptyCode(e.id));
        }
        entries.push(CorpusEntry {
            entry_id: e.id,
            code,
            instruction: e.instruction,
            code_path: e.code_path,
        });
    }
    Ok(entries)
}

pub fn write_corpus(entries: &[CorpusEntry], path: &Path) -> std::io::Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for e in entries {
        crate::task::write_file(&base.join(&e.code_path), &e.code)?;
    }
    let doc = CorpusDoc {
        entries: entries
            .iter()
            .map(|e| EntryDoc {
                id: e.entry_id.clone(),
                code_path: e.code_path.clone(),
                instruction: e.instruction.clone(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&doc).map_err(std::io::Error::other)?;
    crate::task::write_file(path, &text)
}

/// Token multiset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenBag(BTreeMap<String, u32>);

impl TokenBag {
    pub fn count(&self, token: &str) -> u32 {
        self.0.get(token).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.0.values().map(|&c| c as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }

    fn add(&mut self, token: String) {
        *self.0.entry(token).or_insert(0) += 1;
    }
}

impl<S: Into<String>> FromIterator<(S, u32)> for TokenBag {
    fn from_iter<I: IntoIterator<Item = (S, u32)>>(iter: I) -> Self {
        let mut bag = TokenBag::default();
        for (tok, n) in iter {
            if n > 0 {
                *bag.0.entry(tok.into()).or_insert(0) += n;
            }
        }
        bag
    }
}

const OPERATORS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "...", "**", "//", "==", "!=", "<=", ">=", "->", "+=", "-=", "*=",
    "/=", "%=", "&=", "|=", "^=", "@=", "<<", ">>", ":=",
];

/// Lexes Python-like kernel source into a token multiset. Comments and
/// string literals are dropped, identifiers are lowercased and any other
/// non-space character becomes a one-character token.
pub fn tokenize_code(code: &str) -> TokenBag {
    let chars: Vec<char> = code.chars().collect();
    let mut bag = TokenBag::default();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '\'' || c == '"' {
            i = skip_string(&chars, i);
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            let is_prefix = word.len() <= 2
                && word.chars().all(|c| "rbfuRBFU".contains(c))
                && i < chars.len()
                && (chars[i] == '\'' || chars[i] == '"');
            if is_prefix {
                i = skip_string(&chars, i);
            } else {
                bag.add(word.to_lowercase());
            }
        } else if c.is_ascii_digit()
            || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let start = i;
            while i < chars.len() {
                let d = chars[i];
                let exponent_sign = (d == '+' || d == '-')
                    && matches!(chars[i - 1], 'e' | 'E')
                    && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit());
                if d.is_ascii_alphanumeric() || d == '_' || d == '.' || exponent_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            bag.add(chars[start..i].iter().collect::<String>().to_lowercase());
        } else {
            let op = OPERATORS.iter().find(|op| {
                let n = op.chars().count();
                i + n <= chars.len() && chars[i..i + n].iter().copied().eq(op.chars())
            });
            match op {
                Some(op) => {
                    i += op.chars().count();
                    bag.add((*op).to_string());
                }
                None => {
                    i += 1;
                    bag.add(c.to_string());
                }
            }
        }
    }
    bag
}

/// Returns the index just past the string literal starting at `start`.
fn skip_string(chars: &[char], start: usize) -> usize {
    let quote = chars[start];
    let triple = chars.len() >= start + 3 && chars[start + 1] == quote && chars[start + 2] == quote;
    let mut i = if triple { start + 3 } else { start + 1 };
    while i < chars.len() {
        let c = chars[i];
        if c == '\\' {
            i += 2;
            continue;
        }
        if triple {
            if c == quote && chars.len() >= i + 3 && chars[i + 1] == quote && chars[i + 2] == quote
            {
                return i + 3;
            }
        } else if c == quote {
            return i + 1;
        } else if c == '\n' {
            // Unterminated single-line literal.
            return i;
        }
        i += 1;
    }
    chars.len()
}

/// Similarity in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub fn new(value: f64) -> Self {
        Self(if value.is_nan() {
            0.0
        } else {
            value.clamp(0.0, 1.0)
        })
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Weighted Jaccard: `Σ min(a, b) / Σ max(a, b)`; two empty bags score 1.
pub fn similarity(a: &TokenBag, b: &TokenBag) -> SimilarityScore {
    let mut min_sum = 0u64;
    let mut max_sum = 0u64;
    for (tok, ca) in a.iter() {
        let cb = b.count(tok);
        min_sum += u64::from(ca.min(cb));
        max_sum += u64::from(ca.max(cb));
    }
    for (tok, cb) in b.iter() {
        if a.count(tok) == 0 {
            max_sum += u64::from(cb);
        }
    }
    if max_sum == 0 {
        return SimilarityScore(1.0);
    }
    SimilarityScore::new(min_sum as f64 / max_sum as f64)
}

/// Pluggable similarity between query code and a corpus entry. An
/// embedding service can be plugged in here in place of [`TokenJaccard`].
pub trait CodeSimilarity: Send + Sync {
    fn score(&self, query_code: &str, entry: &CorpusEntry) -> SimilarityScore;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TokenJaccard;

impl CodeSimilarity for TokenJaccard {
    fn score(&self, query_code: &str, entry: &CorpusEntry) -> SimilarityScore {
        similarity(&tokenize_code(query_code), &tokenize_code(&entry.code))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retrieved<'a> {
    pub entry: &'a CorpusEntry,
    pub score: SimilarityScore,
}

/// Most similar entry of `corpus` not in `exclude`, by token Jaccard.
pub fn retrieve_top1<'a>(
    query_code: &str,
    corpus: &'a [CorpusEntry],
    exclude: &BTreeSet<String>,
) -> Option<Retrieved<'a>> {
    retrieve_top1_with(&TokenJaccard, query_code, corpus, exclude)
}

pub fn retrieve_top1_with<'a>(
    measure: &dyn CodeSimilarity,
    query_code: &str,
    corpus: &'a [CorpusEntry],
    exclude: &BTreeSet<String>,
) -> Option<Retrieved<'a>> {
    let mut best: Option<Retrieved<'a>> = None;
    for entry in corpus.iter().filter(|e| !exclude.contains(&e.entry_id)) {
        let score = measure.score(query_code, entry);
        let better = match &best {
            None => true,
            Some(b) => {
                score.value() > b.score.value()
                    || (score.value() == b.score.value() && entry.entry_id < b.entry.entry_id)
            }
        };
        if better {
            best = Some(Retrieved { entry, score });
        }
    }
    best
}

/// What a task offers as the retrieval query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuerySource {
    ReferenceCode,
    /// No code available yet; the instruction text stands in.
    Instruction,
}

pub fn retrieval_query(task: &KernelTask) -> (&str, QuerySource) {
    if task.reference_code.trim().is_empty() {
        log::warn!(
            "task {} has no reference code; retrieving exemplar by instruction text",
            task.task_id
        );
        (&task.instruction, QuerySource::Instruction)
    } else {
        (&task.reference_code, QuerySource::ReferenceCode)
    }
}
