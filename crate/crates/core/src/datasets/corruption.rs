//! Candidate-set generators that turn ordinary labels into partial labels.
//!
//! Every generator keeps the true label in the set. Each owns a
//! [`RandomSource`] seeded from the caller, so identical arguments give
//! identical sets.

use std::fmt;

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;

use super::DatasetError;
use crate::gumbel::RandomSource;
use crate::loss::CandidateSet;

/// How distractor labels are added to each true label.
#[derive(Debug, Clone, PartialEq)]
pub enum CorruptionSpec {
    /// Exactly `extra` distractors, uniformly without replacement.
    FixedCount { extra: usize },
    /// Each other label joins independently with probability `q`.
    Bernoulli { q: f64 },
    /// Label `j` joins instance `i` with probability `clamp(scores[i][j], 0, 1)`.
    ScoreMatrix { scores: Array2<f64> },
}

impl fmt::Display for CorruptionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorruptionSpec::FixedCount { extra } => write!(f, "fixed(extra={extra})"),
            CorruptionSpec::Bernoulli { q } => write!(f, "bernoulli(q={q})"),
            CorruptionSpec::ScoreMatrix { scores } => {
                write!(f, "instance(scores={}x{})", scores.nrows(), scores.ncols())
            }
        }
    }
}

impl CorruptionSpec {
    pub fn apply(
        &self,
        labels: &[usize],
        num_classes: usize,
        seed: u64,
    ) -> Result<Vec<CandidateSet>, DatasetError> {
        match self {
            CorruptionSpec::FixedCount { extra } => {
                corrupt_uniform_fixed(labels, num_classes, *extra, seed)
            }
            CorruptionSpec::Bernoulli { q } => {
                corrupt_uniform_bernoulli(labels, num_classes, *q, seed)
            }
            CorruptionSpec::ScoreMatrix { scores } => {
                if scores.ncols() != num_classes {
                    return Err(DatasetError::ShapeMismatch(format!(
                        "score matrix has {} columns for {num_classes} classes",
                        scores.ncols()
                    )));
                }
                corrupt_instance_dependent(labels, scores, seed)
            }
        }
    }
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<(), DatasetError> {
    if num_classes == 0 {
        return Err(DatasetError::InvalidCorruption("no classes".into()));
    }
    match labels.iter().position(|&c| c >= num_classes) {
        Some(row) => Err(DatasetError::LabelOutOfRange {
            row,
            label: labels[row],
            num_classes,
        }),
        None => Ok(()),
    }
}

/// `S = {c} ∪ extra` distinct labels drawn uniformly from the `k - 1` others.
pub fn corrupt_uniform_fixed(
    labels: &[usize],
    num_classes: usize,
    extra: usize,
    seed: u64,
) -> Result<Vec<CandidateSet>, DatasetError> {
    check_labels(labels, num_classes)?;
    if extra >= num_classes {
        return Err(DatasetError::InvalidCorruption(format!(
            "extra count {extra} must be below the class count {num_classes}"
        )));
    }
    let mut rng = RandomSource::new(seed);
    let mut out = Vec::with_capacity(labels.len());
    for &c in labels {
        let picks = index::sample(&mut rng, num_classes - 1, extra);
        let members = picks
            .into_iter()
            .map(|j| if j < c { j } else { j + 1 })
            .chain(std::iter::once(c));
        out.push(CandidateSet::new(num_classes, members).expect("true label is in range"));
    }
    Ok(out)
}

/// `S = {c} ∪ {j ≠ c : u_j < q}` with independent uniforms `u_j`.
pub fn corrupt_uniform_bernoulli(
    labels: &[usize],
    num_classes: usize,
    q: f64,
    seed: u64,
) -> Result<Vec<CandidateSet>, DatasetError> {
    check_labels(labels, num_classes)?;
    if !(0.0..1.0).contains(&q) {
        return Err(DatasetError::InvalidCorruption(format!(
            "flip probability {q} outside [0, 1)"
        )));
    }
    let mut rng = RandomSource::new(seed);
    let mut out = Vec::with_capacity(labels.len());
    for &c in labels {
        let mut members = vec![c];
        for j in (0..num_classes).filter(|&j| j != c) {
            if rng.gen::<f64>() < q {
                members.push(j);
            }
        }
        out.push(CandidateSet::new(num_classes, members).expect("true label is in range"));
    }
    Ok(out)
}

/// Per-instance flip probabilities taken from an external score matrix.
/// The true-label column is ignored.
pub fn corrupt_instance_dependent(
    labels: &[usize],
    scores: &Array2<f64>,
    seed: u64,
) -> Result<Vec<CandidateSet>, DatasetError> {
    let (n, num_classes) = scores.dim();
    if n != labels.len() {
        return Err(DatasetError::ShapeMismatch(format!(
            "score matrix has {n} rows for {} labels",
            labels.len()
        )));
    }
    check_labels(labels, num_classes)?;
    if let Some(((row, col), v)) = scores
        .indexed_iter()
        .find(|(_, v)| !(**v >= 0.0) || v.is_infinite())
    {
        return Err(DatasetError::InvalidScore {
            row,
            col,
            value: *v,
        });
    }
    let mut rng = RandomSource::new(seed);
    let mut out = Vec::with_capacity(n);
    for (&c, row) in labels.iter().zip(scores.outer_iter()) {
        let mut members = vec![c];
        for (j, &s) in row.iter().enumerate() {
            if j == c {
                continue;
            }
            if rng.gen::<f64>() < s.clamp(0.0, 1.0) {
                members.push(j);
            }
        }
        out.push(CandidateSet::new(num_classes, members).expect("true label is in range"));
    }
    Ok(out)
}
