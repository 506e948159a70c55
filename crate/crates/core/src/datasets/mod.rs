//! Partial-label datasets: in-memory representation, file formats and
//! candidate-set corruption.

mod corruption;
mod idx;
mod pll_csv;

use std::io::Read;
use std::path::Path;

use ndarray::{Array2, Axis};
use thiserror::Error;

use crate::loss::CandidateSet;
pub use corruption::{
    corrupt_instance_dependent, corrupt_uniform_bernoulli, corrupt_uniform_fixed, CorruptionSpec,
};
pub use idx::{load_idx, parse_idx, IdxTensor};
pub use pll_csv::{load_pll_csv, parse_pll_csv, save_pll_csv, to_pll_csv_string};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad IDX magic 0x{0:08x}")]
    BadMagic(u32),
    #[error("unsupported IDX element type 0x{0:02x}")]
    UnsupportedIdxType(u8),
    #[error("IDX length mismatch: expected {expected} bytes, found {found}")]
    IdxLength { expected: usize, found: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: candidate {class} out of range for {num_classes} classes")]
    CandidateOutOfRange {
        line: usize,
        class: usize,
        num_classes: usize,
    },
    #[error("line {line}: empty candidate list")]
    EmptyCandidates { line: usize },
    #[error("line {line}: expected {expected} features, found {found}")]
    Ragged {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: true label {label} is not among its candidates")]
    LabelNotCandidate { row: usize, label: usize },
    #[error("row {row}: label {label} out of range for {num_classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid corruption: {0}")]
    InvalidCorruption(String),
    #[error("score[{row}][{col}] = {value} must be finite and non-negative")]
    InvalidScore { row: usize, col: usize, value: f64 },
    #[error("dataset has no true labels")]
    MissingLabels,
    #[error("z-score normalization needs at least 2 rows")]
    TooFewRows,
}

// `io::Error` has no `PartialEq`; compare by kind so tests can assert on it.
impl PartialEq for DatasetError {
    fn eq(&self, other: &Self) -> bool {
        use DatasetError::*;
        match (self, other) {
            (Io(a), Io(b)) => a.kind() == b.kind(),
            (BadMagic(a), BadMagic(b)) => a == b,
            (UnsupportedIdxType(a), UnsupportedIdxType(b)) => a == b,
            (
                IdxLength {
                    expected: a,
                    found: b,
                },
                IdxLength {
                    expected: c,
                    found: d,
                },
            ) => a == c && b == d,
            (
                Parse {
                    line: a,
                    message: b,
                },
                Parse {
                    line: c,
                    message: d,
                },
            ) => a == c && b == d,
            (
                CandidateOutOfRange {
                    line: a,
                    class: b,
                    num_classes: c,
                },
                CandidateOutOfRange {
                    line: d,
                    class: e,
                    num_classes: f,
                },
            ) => (a, b, c) == (d, e, f),
            (EmptyCandidates { line: a }, EmptyCandidates { line: b }) => a == b,
            (
                Ragged {
                    line: a,
                    expected: b,
                    found: c,
                },
                Ragged {
                    line: d,
                    expected: e,
                    found: f,
                },
            ) => (a, b, c) == (d, e, f),
            (LabelNotCandidate { row: a, label: b }, LabelNotCandidate { row: c, label: d }) => {
                (a, b) == (c, d)
            }
            (
                LabelOutOfRange {
                    row: a,
                    label: b,
                    num_classes: c,
                },
                LabelOutOfRange {
                    row: d,
                    label: e,
                    num_classes: f,
                },
            ) => (a, b, c) == (d, e, f),
            (ShapeMismatch(a), ShapeMismatch(b)) => a == b,
            (InvalidCorruption(a), InvalidCorruption(b)) => a == b,
            (
                InvalidScore {
                    row: a,
                    col: b,
                    value: c,
                },
                InvalidScore {
                    row: d,
                    col: e,
                    value: f,
                },
            ) => (a, b) == (d, e) && c.to_bits() == f.to_bits(),
            (MissingLabels, MissingLabels) | (TooFewRows, TooFewRows) => true,
            _ => false,
        }
    }
}

/// Reads a whole file, inflating it first if it starts with the gzip magic.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>, DatasetError> {
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Features, candidate sets and (possibly unknown) true labels.
///
/// Every candidate set is over `num_classes` classes and every known true
/// label belongs to its candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct PllDataset {
    features: Array2<f64>,
    candidate_sets: Vec<CandidateSet>,
    true_labels: Vec<Option<usize>>,
    num_classes: usize,
    corruption: String,
}

impl PllDataset {
    pub fn new(
        features: Array2<f64>,
        candidate_sets: Vec<CandidateSet>,
        true_labels: Vec<Option<usize>>,
        num_classes: usize,
    ) -> Result<Self, DatasetError> {
        let n = features.nrows();
        if candidate_sets.len() != n || true_labels.len() != n {
            return Err(DatasetError::ShapeMismatch(format!(
                "{n} feature rows, {} candidate sets, {} labels",
                candidate_sets.len(),
                true_labels.len()
            )));
        }
        for (row, (s, label)) in candidate_sets.iter().zip(&true_labels).enumerate() {
            if s.num_classes() != num_classes {
                return Err(DatasetError::ShapeMismatch(format!(
                    "row {row}: candidate set over {} classes, dataset has {num_classes}",
                    s.num_classes()
                )));
            }
            if let Some(label) = *label {
                if label >= num_classes {
                    return Err(DatasetError::LabelOutOfRange {
                        row,
                        label,
                        num_classes,
                    });
                }
                if !s.contains(label) {
                    return Err(DatasetError::LabelNotCandidate { row, label });
                }
            }
        }
        Ok(Self {
            features,
            candidate_sets,
            true_labels,
            num_classes,
            corruption: "none".into(),
        })
    }

    /// Ordinary supervised data: each candidate set is the true label alone.
    pub fn from_labels(
        features: Array2<f64>,
        labels: &[usize],
        num_classes: usize,
    ) -> Result<Self, DatasetError> {
        let sets = labels
            .iter()
            .enumerate()
            .map(|(row, &c)| {
                CandidateSet::singleton(num_classes, c).map_err(|_| DatasetError::LabelOutOfRange {
                    row,
                    label: c,
                    num_classes,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(
            features,
            sets,
            labels.iter().map(|&c| Some(c)).collect(),
            num_classes,
        )
    }

    /// Pairs an IDX image tensor with an IDX label vector. Pixels are scaled
    /// to `[0, 1]` by dividing by 255.
    pub fn from_idx(
        images: &IdxTensor,
        labels: &IdxTensor,
        num_classes: usize,
    ) -> Result<Self, DatasetError> {
        if labels.dims.len() != 1 || labels.len() != images.len() {
            return Err(DatasetError::ShapeMismatch(format!(
                "{} images but label tensor has dims {:?}",
                images.len(),
                labels.dims
            )));
        }
        let d = images.item_size();
        let features = Array2::from_shape_fn((images.len(), d), |(i, j)| {
            f64::from(images.data[i * d + j]) / 255.0
        });
        let y: Vec<usize> = labels.data.iter().map(|&b| b as usize).collect();
        Self::from_labels(features, &y, num_classes)
    }

    /// Loads an images/labels IDX pair from disk.
    pub fn load_idx_pair(
        images: impl AsRef<Path>,
        labels: impl AsRef<Path>,
        num_classes: usize,
    ) -> Result<Self, DatasetError> {
        Self::from_idx(&load_idx(images)?, &load_idx(labels)?, num_classes)
    }

    pub fn with_corruption(mut self, description: impl Into<String>) -> Result<Self, DatasetError> {
        let description = description.into();
        if description.contains('\n') {
            return Err(DatasetError::InvalidCorruption(
                "description must be a single line".into(),
            ));
        }
        self.corruption = description;
        Ok(self)
    }

    /// Replaces every candidate set using `spec`; requires all true labels.
    pub fn corrupted(&self, spec: &CorruptionSpec, seed: u64) -> Result<Self, DatasetError> {
        let labels = self.labels().ok_or(DatasetError::MissingLabels)?;
        let sets = spec.apply(&labels, self.num_classes, seed)?;
        Self::new(
            self.features.clone(),
            sets,
            self.true_labels.clone(),
            self.num_classes,
        )?
        .with_corruption(spec.to_string())
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn candidate_sets(&self) -> &[CandidateSet] {
        &self.candidate_sets
    }

    pub fn true_labels(&self) -> &[Option<usize>] {
        &self.true_labels
    }

    /// All true labels, if every row has one.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.true_labels.iter().copied().collect()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn corruption(&self) -> &str {
        &self.corruption
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    /// Mean candidate-set size ("Avg. #S").
    pub fn average_candidate_count(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.candidate_sets.iter().map(|s| s.len()).sum::<usize>() as f64 / self.len() as f64
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            candidate_sets: indices
                .iter()
                .map(|&i| self.candidate_sets[i].clone())
                .collect(),
            true_labels: indices.iter().map(|&i| self.true_labels[i]).collect(),
            num_classes: self.num_classes,
            corruption: self.corruption.clone(),
        }
    }

    pub fn with_features(&self, features: Array2<f64>) -> Result<Self, DatasetError> {
        Self::new(
            features,
            self.candidate_sets.clone(),
            self.true_labels.clone(),
            self.num_classes,
        )?
        .with_corruption(self.corruption.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeMode {
    MinMax,
    ZScore,
}

/// Per-feature affine map `x ↦ (x - offset) / scale` fitted on one matrix
/// and reusable on another. Constant features map to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    offset: Vec<f64>,
    scale: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(features: &Array2<f64>, mode: NormalizeMode) -> Result<Self, DatasetError> {
        let n = features.nrows();
        let mut offset = Vec::with_capacity(features.ncols());
        let mut scale = Vec::with_capacity(features.ncols());
        match mode {
            NormalizeMode::MinMax => {
                for col in features.columns() {
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    offset.push(if lo.is_finite() { lo } else { 0.0 });
                    scale.push(hi - lo);
                }
            }
            NormalizeMode::ZScore => {
                if n < 2 {
                    return Err(DatasetError::TooFewRows);
                }
                for col in features.columns() {
                    let mean = col.sum() / n as f64;
                    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                    offset.push(mean);
                    scale.push(var.sqrt());
                }
            }
        }
        Ok(Self { offset, scale })
    }

    pub fn transform(&self, features: &Array2<f64>) -> Result<Array2<f64>, DatasetError> {
        if features.ncols() != self.offset.len() {
            return Err(DatasetError::ShapeMismatch(format!(
                "scaler fitted on {} features, got {}",
                self.offset.len(),
                features.ncols()
            )));
        }
        let mut out = features.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (o, s) = (self.offset[j], self.scale[j]);
            col.mapv_inplace(|v| if s > 0.0 { (v - o) / s } else { 0.0 });
        }
        Ok(out)
    }
}

/// Fits a [`FeatureScaler`] on the dataset's own features and applies it.
pub fn normalize_features(
    dataset: &PllDataset,
    mode: NormalizeMode,
) -> Result<PllDataset, DatasetError> {
    let scaler = FeatureScaler::fit(dataset.features(), mode)?;
    dataset.with_features(scaler.transform(dataset.features())?)
}
