//! Key-node and step-level scoring of recorded agent runs.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no results to score")]
    EmptyInput,
    #[error("task {0} has a different number of runs than the first task")]
    RaggedMatrix(usize),
    #[error("invalid record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyNodeResult {
    pub task_id: String,
    pub key_nodes_total: u32,
    pub key_nodes_completed: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyNodeMetrics {
    /// Mean of per-task completion ratios.
    pub avg_step_sr: f64,
    /// Completed key nodes over all key nodes.
    pub completion_rate: f64,
    /// Fraction of tasks missing at most `tolerance` key nodes.
    pub task_sr: f64,
    pub tolerance: u32,
}

pub fn keynode_metrics(results: &[KeyNodeResult], tolerance: u32) -> Result<KeyNodeMetrics, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut ratio_sum = 0.0;
    let mut completed = 0u64;
    let mut total = 0u64;
    let mut passed = 0usize;
    for r in results {
        if r.key_nodes_total == 0 || r.key_nodes_completed > r.key_nodes_total {
            return Err(MetricsError::InvalidRecord {
                id: r.task_id.clone(),
                reason: format!("{} of {} key nodes", r.key_nodes_completed, r.key_nodes_total),
            });
        }
        ratio_sum += f64::from(r.key_nodes_completed) / f64::from(r.key_nodes_total);
        completed += u64::from(r.key_nodes_completed);
        total += u64::from(r.key_nodes_total);
        if r.key_nodes_total - r.key_nodes_completed <= tolerance {
            passed += 1;
        }
    }
    let n = results.len() as f64;
    Ok(KeyNodeMetrics {
        avg_step_sr: ratio_sum / n,
        completion_rate: completed as f64 / total as f64,
        task_sr: passed as f64 / n,
        tolerance,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEvalRecord {
    pub step_id: String,
    pub predicted_element: String,
    pub gold_elements: BTreeSet<String>,
    pub predicted_op: String,
    pub gold_op: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub element_accuracy: f64,
    pub operation_f1: f64,
    pub step_sr: f64,
}

/// F1 over the sets of lowercased whitespace tokens.
pub fn op_f1(predicted: &str, gold: &str) -> f64 {
    let p: HashSet<String> = predicted.split_whitespace().map(str::to_lowercase).collect();
    let g: HashSet<String> = gold.split_whitespace().map(str::to_lowercase).collect();
    let common = p.intersection(&g).count();
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// A step succeeds when its element is in the gold set and its operation
/// matches with F1 of exactly 1.
pub fn step_metrics(records: &[StepEvalRecord]) -> Result<StepMetrics, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut elements_ok = 0usize;
    let mut f1_sum = 0.0;
    let mut successes = 0usize;
    for r in records {
        let invalid = |reason: &str| MetricsError::InvalidRecord { id: r.step_id.clone(), reason: reason.into() };
        if r.gold_elements.is_empty() {
            return Err(invalid("empty gold element set"));
        }
        if r.predicted_op.trim().is_empty() || r.gold_op.trim().is_empty() {
            return Err(invalid("empty operation"));
        }
        let element_ok = r.gold_elements.contains(&r.predicted_element);
        let f1 = op_f1(&r.predicted_op, &r.gold_op);
        elements_ok += usize::from(element_ok);
        f1_sum += f1;
        successes += usize::from(element_ok && f1 == 1.0);
    }
    let n = records.len() as f64;
    Ok(StepMetrics {
        element_accuracy: elements_ok as f64 / n,
        operation_f1: f1_sum / n,
        step_sr: successes as f64 / n,
    })
}

/// Mean over tasks of each task's mean success over its runs.
pub fn run_average(matrix: &[Vec<bool>]) -> Result<f64, MetricsError> {
    let Some(first) = matrix.first() else { return Err(MetricsError::EmptyInput) };
    let runs = first.len();
    if runs == 0 {
        return Err(MetricsError::RaggedMatrix(0));
    }
    let mut sum = 0.0;
    for (i, row) in matrix.iter().enumerate() {
        if row.len() != runs {
            return Err(MetricsError::RaggedMatrix(i));
        }
        sum += row.iter().filter(|&&b| b).count() as f64 / runs as f64;
    }
    Ok(sum / matrix.len() as f64)
}
