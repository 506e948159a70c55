//! Accuracy, confusion matrices, per-class sensitivity and seed aggregation.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("{preds} predictions but {truths} true labels")]
    LengthMismatch { preds: usize, truths: usize },
    #[error("class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
}

/// Fraction of positions where `preds` and `truths` agree.
pub fn accuracy(preds: &[usize], truths: &[usize]) -> Result<f64, MetricsError> {
    check_lengths(preds, truths)?;
    let hits = preds.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / preds.len() as f64)
}

fn check_lengths(preds: &[usize], truths: &[usize]) -> Result<(), MetricsError> {
    if preds.len() != truths.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// `k × k` counts; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_predictions(
        preds: &[usize],
        truths: &[usize],
        num_classes: usize,
    ) -> Result<Self, MetricsError> {
        check_lengths(preds, truths)?;
        let mut cm = Self::new(num_classes);
        for (&p, &t) in preds.iter().zip(truths) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<(), MetricsError> {
        for class in [truth, pred] {
            if class >= self.num_classes {
                return Err(MetricsError::ClassOutOfRange {
                    class,
                    num_classes: self.num_classes,
                });
            }
        }
        self.counts[truth][pred] += 1;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.trace() as f64 / total as f64)
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .counts
            .iter()
            .flatten()
            .map(|c| c.to_string().len())
            .max()
            .unwrap_or(1)
            .max(self.num_classes.to_string().len());
        write!(f, "{:>w$} |", "", w = width)?;
        for c in 0..self.num_classes {
            write!(f, " {:>w$}", c, w = width)?;
        }
        writeln!(f)?;
        for (t, row) in self.counts.iter().enumerate() {
            write!(f, "{:>w$} |", t, w = width)?;
            for c in row {
                write!(f, " {:>w$}", c, w = width)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Per-class recall. `supported[c]` is false when class `c` never occurs;
/// its value is then 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub values: Vec<f64>,
    pub supported: Vec<bool>,
}

pub fn per_class_sensitivity(cm: &ConfusionMatrix) -> Sensitivity {
    let mut values = Vec::with_capacity(cm.num_classes());
    let mut supported = Vec::with_capacity(cm.num_classes());
    for c in 0..cm.num_classes() {
        let support = cm.row_sum(c);
        supported.push(support > 0);
        values.push(if support > 0 {
            cm.get(c, c) as f64 / support as f64
        } else {
            0.0
        });
    }
    Sensitivity { values, supported }
}

/// Mean and sample standard deviation (ddof = 1) over repeated runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

impl fmt::Display for RunSummary {
    /// Percent with the usual `mean (std)` layout.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ({:.2})", 100.0 * self.mean, 100.0 * self.std)
    }
}

/// A single run has std 0. Returns `None` for no runs.
pub fn aggregate_runs(values: &[f64]) -> Option<RunSummary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(RunSummary { mean, std, runs: n })
}
