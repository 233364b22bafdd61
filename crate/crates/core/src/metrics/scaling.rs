//! pass@k over independent replicas of the same run.

use std::collections::BTreeSet;

use serde::Serialize;

use super::{pass_at_k, task_results, MetricsError, RunLog, Selector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingPoint {
    pub k: u64,
    pub call_pass_at_k: f64,
    pub exec_pass_at_k: f64,
}

/// Fails unless every log covers the same benchmark, task set and agent
/// settings, with distinct replica indices.
pub(crate) fn check_replicas(logs: &[RunLog]) -> Result<(), MetricsError> {
    let Some(first) = logs.first() else {
        return Err(MetricsError::EmptyLog);
    };
    let tasks = first.task_ids();
    if tasks.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let mut seen = BTreeSet::new();
    for log in logs {
        let h = &log.header;
        if h.benchmark != first.header.benchmark {
            return Err(MetricsError::MismatchedReplicas(format!(
                "benchmark `{}` vs `{}`",
                h.benchmark, first.header.benchmark
            )));
        }
        if log.task_ids() != tasks {
            return Err(MetricsError::MismatchedReplicas(format!(
                "replica {} covers a different task set",
                h.replica
            )));
        }
        if h.agent != first.header.agent {
            return Err(MetricsError::MismatchedReplicas(format!(
                "replica {} ran with different agent settings",
                h.replica
            )));
        }
        if !seen.insert(h.replica) {
            return Err(MetricsError::MismatchedReplicas(format!(
                "replica index {} appears twice",
                h.replica
            )));
        }
    }
    Ok(())
}

/// pass@k for k = 1..=max_k, averaged over tasks. Each replica contributes
/// one sample per task.
pub fn scaling_table(logs: &[RunLog], max_k: u64) -> Result<Vec<ScalingPoint>, MetricsError> {
    check_replicas(logs)?;
    let n = logs.len() as u64;
    if max_k == 0 || max_k > n {
        return Err(MetricsError::Domain { n, c: 0, k: max_k });
    }
    let per_replica: Vec<_> = logs
        .iter()
        .map(|l| task_results(l, Selector::Best))
        .collect();
    let tasks: Vec<&String> = per_replica[0].iter().map(|(id, _)| id).collect();
    let mut counts = vec![(0u64, 0u64); tasks.len()];
    for results in &per_replica {
        for (slot, (_, r)) in counts.iter_mut().zip(results) {
            slot.0 += r.call_ok as u64;
            slot.1 += r.exec_ok as u64;
        }
    }
    (1..=max_k)
        .map(|k| {
            let mut call = 0.0;
            let mut exec = 0.0;
            for &(c_call, c_exec) in &counts {
                call += pass_at_k(n, c_call, k)?;
                exec += pass_at_k(n, c_exec, k)?;
            }
            let t = counts.len() as f64;
            Ok(ScalingPoint {
                k,
                call_pass_at_k: call / t,
                exec_pass_at_k: exec / t,
            })
        })
        .collect()
}

pub fn render_scaling_csv(points: &[ScalingPoint]) -> String {
    let mut out = String::from("k,call_pass_at_k,exec_pass_at_k\n");
    for p in points {
        out.push_str(&format!(
            "{},{:.6},{:.6}\n",
            p.k, p.call_pass_at_k, p.exec_pass_at_k
        ));
    }
    out
}

pub fn render_scaling_table(points: &[ScalingPoint]) -> String {
    let mut out = format!("{:>4}  {:>10}  {:>10}\n", "k", "call (%)", "exec (%)");
    for p in points {
        out.push_str(&format!(
            "{:>4}  {:>10.2}  {:>10.2}\n",
            p.k,
            100.0 * p.call_pass_at_k,
            100.0 * p.exec_pass_at_k
        ));
    }
    out
}
