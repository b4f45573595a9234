//! Confusion matrices, per-class metrics, the scenario suite runner and the
//! acoustic-then-semantic endpointing cascade.

mod cascade;
mod suite;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::ClassifyError;
use crate::token::ControlToken;
use crate::vad::StreamError;

pub use cascade::{
    hesitation_suite, render_cascade_table, run_cascade, run_cascade_sweep, CascadeReport, CascadeRow, LabeledStream,
};
pub use suite::{run_scenario_suite, SuiteReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("label lists differ in length ({gt} vs {est})")]
    LengthMismatch { gt: usize, est: usize },
    #[error("no samples")]
    Empty,
    #[error("matrix has no counts")]
    EmptyMatrix,
    #[error("label {0} is not in the matrix")]
    UnknownLabel(ControlToken),
    #[error("malformed matrix: {0}")]
    Malformed(String),
    #[error("sample {index}: {source}")]
    Classifier { index: usize, source: ClassifyError },
    #[error("stream {index}: {msg}")]
    Alignment { index: usize, msg: String },
    #[error(transparent)]
    Stream(#[from] StreamError),
}

/// Rows are ground truth, columns are estimates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<ControlToken>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(labels: &[ControlToken]) -> Self {
        ConfusionMatrix { labels: labels.to_vec(), counts: vec![vec![0; labels.len()]; labels.len()] }
    }

    pub fn from_counts(labels: &[ControlToken], counts: Vec<Vec<u64>>) -> Result<Self, EvalError> {
        if counts.len() != labels.len() || counts.iter().any(|r| r.len() != labels.len()) {
            return Err(EvalError::Malformed(format!("expected {0}x{0} counts", labels.len())));
        }
        let mut sorted = labels.to_vec();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != labels.len() {
            return Err(EvalError::Malformed("duplicate labels".into()));
        }
        Ok(ConfusionMatrix { labels: labels.to_vec(), counts })
    }

    pub fn position(&self, label: ControlToken) -> Result<usize, EvalError> {
        self.labels.iter().position(|&l| l == label).ok_or(EvalError::UnknownLabel(label))
    }

    pub fn add(&mut self, gt: ControlToken, est: ControlToken) -> Result<(), EvalError> {
        let (i, j) = (self.position(gt)?, self.position(est)?);
        self.counts[i][j] += 1;
        Ok(())
    }

    pub fn get(&self, gt: ControlToken, est: ControlToken) -> u64 {
        match (self.position(gt), self.position(est)) {
            (Ok(i), Ok(j)) => self.counts[i][j],
            _ => 0,
        }
    }

    /// Adds another matrix with the same labels.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), EvalError> {
        for (i, &gt) in other.labels.iter().enumerate() {
            for (j, &est) in other.labels.iter().enumerate() {
                let (a, b) = (self.position(gt)?, self.position(est)?);
                self.counts[a][b] += other.counts[i][j];
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

/// Counts over the four tokens in canonical order.
pub fn confusion(gt: &[ControlToken], est: &[ControlToken]) -> Result<ConfusionMatrix, EvalError> {
    confusion_with_labels(&ControlToken::ALL, gt, est)
}

pub fn confusion_with_labels(
    labels: &[ControlToken],
    gt: &[ControlToken],
    est: &[ControlToken],
) -> Result<ConfusionMatrix, EvalError> {
    if gt.len() != est.len() {
        return Err(EvalError::LengthMismatch { gt: gt.len(), est: est.len() });
    }
    if gt.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut m = ConfusionMatrix::zeros(labels);
    for (&g, &e) in gt.iter().zip(est) {
        m.add(g, e)?;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: ControlToken,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Ground-truth count (row sum).
    pub support: u64,
    /// Estimate count (column sum).
    pub predicted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub total: u64,
    /// Means over classes that were predicted at least once.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl MetricReport {
    pub fn class(&self, label: ControlToken) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.label == label)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn metrics(m: &ConfusionMatrix) -> Result<MetricReport, EvalError> {
    let total = m.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let classes: Vec<ClassMetrics> = m
        .labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let (support, predicted) = (m.row_sum(i), m.col_sum(i));
            let precision = ratio(m.counts[i][i], predicted);
            let recall = ratio(m.counts[i][i], support);
            ClassMetrics { label, precision, recall, f1: f1_score(precision, recall), support, predicted }
        })
        .collect();
    let counted: Vec<&ClassMetrics> = classes.iter().filter(|c| c.predicted > 0).collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if counted.is_empty() {
            0.0
        } else {
            counted.iter().map(|c| f(c)).sum::<f64>() / counted.len() as f64
        }
    };
    Ok(MetricReport {
        accuracy: ratio(m.trace(), total),
        total,
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        classes,
    })
}

/// Text table with counts, per-row recall, and precision / F1 rows.
pub fn render_table(m: &ConfusionMatrix, r: &MetricReport) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<10}", "GT\\Est");
    for l in &m.labels {
        let _ = write!(s, "{:>9}", l.as_str());
    }
    let _ = writeln!(s, "{:>10}", "Recall");
    for (i, l) in m.labels.iter().enumerate() {
        let _ = write!(s, "{:<10}", l.as_str());
        for c in &m.counts[i] {
            let _ = write!(s, "{c:>9}");
        }
        let _ = writeln!(s, "{:>10.3}", r.classes[i].recall);
    }
    let _ = write!(s, "{:<10}", "Precision");
    for c in &r.classes {
        let _ = write!(s, "{:>9.3}", c.precision);
    }
    let _ = writeln!(s, "{:>10}", "Accuracy:");
    let _ = write!(s, "{:<10}", "F1 Score");
    for c in &r.classes {
        let _ = write!(s, "{:>9.3}", c.f1);
    }
    let _ = writeln!(s, "{:>10.4}", r.accuracy);
    s
}
