use serde::{Deserialize, Serialize};

use crate::executor::ExecutionReport;

/// A correct candidate together with its measured speedup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfEntry {
    pub code: String,
    pub speedup: f64,
    pub report: ExecutionReport,
}

/// Performance history, kept sorted by ascending speedup so the fastest
/// candidate is always last.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerfHistory {
    entries: Vec<PerfEntry>,
}

impl PerfHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts after any entries with an equal speedup, so equal entries
    /// keep their arrival order.
    pub fn insert(&mut self, entry: PerfEntry) {
        let at = self.entries.partition_point(|e| e.speedup <= entry.speedup);
        self.entries.insert(at, entry);
    }

    pub fn entries(&self) -> &[PerfEntry] {
        &self.entries
    }

    pub fn best(&self) -> Option<&PerfEntry> {
        self.entries.last()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl FromIterator<PerfEntry> for PerfHistory {
    fn from_iter<I: IntoIterator<Item = PerfEntry>>(iter: I) -> Self {
        let mut h = PerfHistory::new();
        for e in iter {
            h.insert(e);
        }
        h
    }
}

/// One failed candidate and the trace it produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reflection {
    pub code: String,
    pub error_trace: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCorrect {
    pub code: String,
    pub speedup: f64,
}

/// Per-task memory: failures of the current strategy and every correct
/// candidate seen so far.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentMemory {
    pub reflections: Vec<Reflection>,
    pub perf_history: PerfHistory,
    pub best_correct: Option<BestCorrect>,
}

impl AgentMemory {
    /// Records a candidate that passed every test. Returns `false` and
    /// records nothing if the report is not fully passing.
    pub fn record_correct(&mut self, code: &str, speedup: f64, report: &ExecutionReport) -> bool {
        if !report.all_passed() {
            return false;
        }
        self.perf_history.insert(PerfEntry {
            code: code.to_string(),
            speedup,
            report: report.clone(),
        });
        let improves = self
            .best_correct
            .as_ref()
            .is_none_or(|b| speedup > b.speedup);
        if improves {
            self.best_correct = Some(BestCorrect {
                code: code.to_string(),
                speedup,
            });
        }
        true
    }

    pub fn record_failure(&mut self, code: &str, error_trace: &str) {
        self.reflections.push(Reflection {
            code: code.to_string(),
            error_trace: error_trace.to_string(),
        });
    }

    pub fn clear_reflections(&mut self) {
        self.reflections.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::TestResult;
    use proptest::prelude::*;

    fn passing() -> ExecutionReport {
        ExecutionReport {
            call_ok: true,
            error_trace: None,
            test_results: vec![TestResult {
                test_id: "t".into(),
                passed: true,
                max_abs_err: 0.0,
                candidate_latency_ms: Some(1.0),
                reference_latency_ms: Some(1.0),
            }],
            timed_out: false,
        }
    }

    fn entry(speedup: f64) -> PerfEntry {
        PerfEntry {
            code: format!("k{speedup}"),
            speedup,
            report: passing(),
        }
    }

    #[test]
    fn history_sorts_ascending() {
        let h: PerfHistory = [1.4, 0.9, 1.1].into_iter().map(entry).collect();
        let order: Vec<f64> = h.entries().iter().map(|e| e.speedup).collect();
        assert_eq!(order, [0.9, 1.1, 1.4]);
        assert_eq!(h.best().unwrap().speedup, 1.4);
    }

    #[test]
    fn failing_report_is_not_recorded() {
        let mut m = AgentMemory::default();
        assert!(!m.record_correct("k", 2.0, &ExecutionReport::call_failure("x")));
        assert!(m.perf_history.is_empty());
        assert!(m.best_correct.is_none());
    }

    proptest! {
        #[test]
        fn best_matches_history_max_and_never_decreases(
            speedups in prop::collection::vec(0.01f64..10.0, 1..20)
        ) {
            let mut m = AgentMemory::default();
            let mut last_best = 0.0;
            for s in &speedups {
                m.record_correct("k", *s, &passing());
                let best = m.best_correct.as_ref().unwrap().speedup;
                prop_assert!(best >= last_best);
                last_best = best;
                let entries = m.perf_history.entries();
                prop_assert!(entries.windows(2).all(|w| w[0].speedup <= w[1].speedup));
                prop_assert_eq!(best, entries.last().unwrap().speedup);
            }
        }
    }
}
