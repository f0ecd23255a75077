//! Confusion matrices, accuracy, macro-F1 and fold aggregation.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{truth} true labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("label `{0}` is not in the class list")]
    UnknownLabel(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    /// Diagonal over row sum; 0 for classes with no true samples.
    pub per_class_recall: Vec<f64>,
}

pub fn confusion_and_metrics<T: AsRef<str>, P: AsRef<str>, C: AsRef<str>>(
    truth: &[T],
    predicted: &[P],
    classes: &[C],
) -> Result<Metrics, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    let index = |l: &str| {
        classes
            .iter()
            .position(|c| c.as_ref() == l)
            .ok_or_else(|| MetricsError::UnknownLabel(l.to_owned()))
    };
    let k = classes.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (t, p) in truth.iter().zip(predicted) {
        confusion[index(t.as_ref())?][index(p.as_ref())?] += 1;
    }
    Ok(metrics_from_confusion(confusion))
}

pub fn metrics_from_confusion(confusion: Vec<Vec<usize>>) -> Metrics {
    let k = confusion.len();
    let total: usize = confusion.iter().flatten().sum();
    let trace: usize = (0..k).map(|i| confusion[i][i]).sum();
    let mut per_class_f1 = Vec::with_capacity(k);
    let mut per_class_recall = Vec::with_capacity(k);
    for c in 0..k {
        let tp = confusion[c][c] as f64;
        let row: usize = confusion[c].iter().sum();
        let col: usize = confusion.iter().map(|r| r[c]).sum();
        let precision = if col == 0 { 0.0 } else { tp / col as f64 };
        let recall = if row == 0 { 0.0 } else { tp / row as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class_f1.push(f1);
        per_class_recall.push(recall);
    }
    Metrics {
        accuracy: if total == 0 { 0.0 } else { trace as f64 / total as f64 },
        macro_f1: if k == 0 {
            0.0
        } else {
            per_class_f1.iter().sum::<f64>() / k as f64
        },
        per_class_f1,
        per_class_recall,
        confusion,
    }
}

/// Mean and sample (n - 1) standard deviation. The values are summed in
/// sorted order so the result does not depend on input order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let mut sq: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
    sq.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    (mean, (sq.iter().sum::<f64>() / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub model_tag: String,
    pub language: String,
    pub mode: String,
    pub layer: u32,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub n_folds: usize,
    /// Only one fold contributed, so the std values are set to 0.
    pub single_fold: bool,
}
