//! Accuracy and speedup summaries, optionally split by difficulty.

use std::collections::BTreeMap;

use serde::Serialize;

use super::scaling::check_replicas;
use super::{task_results, MetricsError, RunLog, Selector, TaskResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Grouping {
    #[default]
    Difficulty,
    None,
}

impl std::str::FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "difficulty" => Ok(Grouping::Difficulty),
            "none" => Ok(Grouping::None),
            _ => Err(format!("unknown grouping `{s}` (difficulty, none)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub group: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<u8>,
    /// (task, replica) units in the group.
    pub n_tasks: usize,
    pub n_call_ok: usize,
    pub n_exec_ok: usize,
    pub call_accuracy: f64,
    pub exec_accuracy: f64,
    /// Mean over exec-ok units; absent when there are none.
    pub mean_speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub benchmark: String,
    pub replicas: usize,
    pub selector: String,
    /// Exec accuracy uses call-ok units as its denominator.
    pub conditional: bool,
    /// Per-group rows followed by an `overall` row.
    pub rows: Vec<SummaryRow>,
}

impl MetricsSummary {
    pub fn overall(&self) -> &SummaryRow {
        self.rows.last().expect("summary always has an overall row")
    }

    pub fn group(&self, difficulty: u8) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.difficulty == Some(difficulty))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serialises")
    }

    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>6} {:>8} {:>8} {:>9} {:>9} {:>9}\n",
            "group", "tasks", "call_ok", "exec_ok", "call (%)", "exec (%)", "speedup"
        );
        for r in &self.rows {
            let speedup = r
                .mean_speedup
                .map_or_else(|| "-".to_string(), |s| format!("{s:.3}x"));
            out.push_str(&format!(
                "{:<10} {:>6} {:>8} {:>8} {:>9.2} {:>9.2} {:>9}\n",
                r.group,
                r.n_tasks,
                r.n_call_ok,
                r.n_exec_ok,
                100.0 * r.call_accuracy,
                100.0 * r.exec_accuracy,
                speedup
            ));
        }
        out
    }
}

fn selector_name(s: Selector) -> String {
    match s {
        Selector::Best => "best".into(),
        Selector::Final => "final".into(),
        Selector::UpToIteration(i) => format!("iter:{i}"),
    }
}

fn row(
    group: String,
    difficulty: Option<u8>,
    units: &[TaskResult],
    conditional: bool,
) -> SummaryRow {
    let n_tasks = units.len();
    let n_call_ok = units.iter().filter(|u| u.call_ok).count();
    let n_exec_ok = units.iter().filter(|u| u.exec_ok).count();
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let mut speedups: Vec<f64> = units.iter().filter_map(|u| u.speedup).collect();
    speedups.sort_by(f64::total_cmp);
    let mean_speedup =
        (!speedups.is_empty()).then(|| speedups.iter().sum::<f64>() / speedups.len() as f64);
    SummaryRow {
        group,
        difficulty,
        n_tasks,
        n_call_ok,
        n_exec_ok,
        call_accuracy: ratio(n_call_ok, n_tasks),
        exec_accuracy: ratio(n_exec_ok, if conditional { n_call_ok } else { n_tasks }),
        mean_speedup,
    }
}

/// Pools every (task, replica) unit of `logs` and summarises them.
pub fn report(
    logs: &[RunLog],
    grouping: Grouping,
    selector: Selector,
    conditional: bool,
) -> Result<MetricsSummary, MetricsError> {
    check_replicas(logs)?;
    let mut groups: BTreeMap<u8, Vec<TaskResult>> = BTreeMap::new();
    let mut all = Vec::new();
    for log in logs {
        for (id, result) in task_results(log, selector) {
            if grouping == Grouping::Difficulty {
                let d = log.difficulty(&id).unwrap_or(0);
                groups.entry(d).or_default().push(result);
            }
            all.push(result);
        }
    }
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|(d, units)| row(format!("level-{d}"), Some(d), &units, conditional))
        .collect();
    rows.push(row("overall".into(), None, &all, conditional));
    Ok(MetricsSummary {
        benchmark: logs[0].header.benchmark.clone(),
        replicas: logs.len(),
        selector: selector_name(selector),
        conditional,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SequentialPoint {
    /// Attempts allowed, counting from one.
    pub iterations: u32,
    pub call_accuracy: f64,
    pub exec_accuracy: f64,
}

/// Accuracy if each task had stopped after 1, 2, ... `max_iterations`
/// attempts.
pub fn sequential_table(
    logs: &[RunLog],
    max_iterations: u32,
) -> Result<Vec<SequentialPoint>, MetricsError> {
    (1..=max_iterations)
        .map(|n| {
            let s = report(logs, Grouping::None, Selector::UpToIteration(n - 1), false)?;
            let o = s.overall();
            Ok(SequentialPoint {
                iterations: n,
                call_accuracy: o.call_accuracy,
                exec_accuracy: o.exec_accuracy,
            })
        })
        .collect()
}
