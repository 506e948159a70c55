//! Candidate-set event probability, its negative log-likelihood, and gradients.
//!
//! Given per-class probabilities `p_i = σ(r_i)` and a candidate set `S`, the
//! event of interest is "some class in `S` fires and no class outside `S`
//! fires":
//!
//! ```text
//! P(S) = (1 - Π_{i∈S} (1 - p_i)) · Π_{j∉S} (1 - p_j)
//! cost = -ln(1 - exp(-Σ_{i∈S} LogSumExp(0, r_i))) + Σ_{j∉S} LogSumExp(0, r_j)
//! ```
//!
//! With a single candidate `S = {c}` the cost is ordinary per-class binary
//! cross-entropy against the one-hot target `c`.
//!
//! The first term of the cost loses all precision when every candidate logit
//! is very negative. [`propall_cost_logits`] switches to a masked log-sum-exp
//! form once the largest candidate logit drops to
//! [`StableConstants::branch_threshold`].

mod candidate;
pub mod primitives;

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

pub use candidate::CandidateSet;
use primitives::{
    log_expm1, log_sigmoid, log_softplus, logsumexp, neg_log1mexp, neg_log_expm1_ratio, sigmoid,
    softplus, softplus_excess_ratio,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("dimension mismatch: expected {expected} classes, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error("class index {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("number of classes must be positive")]
    NoClasses,
    #[error("logit {index} is not finite")]
    NonFiniteLogit { index: usize },
    #[error("probability {index} = {value} is outside [0, 1]")]
    ProbabilityOutOfRange { index: usize, value: f64 },
    #[error("batch has {rows} rows but {sets} candidate sets")]
    ShapeMismatch { rows: usize, sets: usize },
}

/// Network outputs `r_i` before the sigmoid. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self, LossError> {
        if values.is_empty() {
            return Err(LossError::NoClasses);
        }
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for LogitVector {
    type Error = LossError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

/// Per-class probabilities `p_i`.
///
/// Sigmoids of finite logits lie strictly inside (0, 1) mathematically, but
/// round to 0 or 1 once `|r| ≳ 37`, so the closed interval is accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(values: Vec<f64>) -> Result<Self, LossError> {
        if values.is_empty() {
            return Err(LossError::NoClasses);
        }
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(LossError::ProbabilityOutOfRange { index, value });
            }
        }
        Ok(Self(values))
    }

    pub fn from_logits(r: &LogitVector) -> Self {
        Self(r.0.iter().map(|&v| sigmoid(v)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Constants of the two-branch cost evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableConstants {
    /// Mask value for non-candidates inside the log-sum-exp; `exp` of it is 0.
    pub min_finite: f64,
    /// The masked log-sum-exp branch is taken when the largest candidate
    /// logit is at or below this value.
    pub branch_threshold: f64,
    /// Add the `O(e^r)` terms that the leading-order masked log-sum-exp
    /// drops. Without them the cost jumps by about `e^threshold` (≈4.5e-5 at
    /// -10) when the branch switches.
    pub refine_tail: bool,
}

impl Default for StableConstants {
    fn default() -> Self {
        Self {
            min_finite: f64::MIN,
            branch_threshold: -10.0,
            refine_tail: true,
        }
    }
}

impl StableConstants {
    /// Leading-order masked log-sum-exp only, without tail refinement.
    pub fn leading_order() -> Self {
        Self {
            refine_tail: false,
            ..Self::default()
        }
    }
}

fn check_finite(values: &[f64]) -> Result<(), LossError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(LossError::NonFiniteLogit { index }),
        None => Ok(()),
    }
}

fn check_dims(len: usize, s: &CandidateSet) -> Result<(), LossError> {
    if len != s.num_classes() {
        return Err(LossError::DimensionMismatch {
            expected: s.num_classes(),
            found: len,
        });
    }
    Ok(())
}

/// Binary cross-entropy of logits against the one-hot target `c`:
/// `LogSumExp(0, -r_c) + Σ_{j≠c} LogSumExp(0, r_j)`.
pub fn bce_cost_logits(r: &LogitVector, c: usize) -> Result<f64, LossError> {
    if c >= r.len() {
        return Err(LossError::ClassOutOfRange {
            class: c,
            num_classes: r.len(),
        });
    }
    let rest: f64 =
        r.0.iter()
            .enumerate()
            .filter(|(j, _)| *j != c)
            .map(|(_, &v)| softplus(v))
            .sum();
    Ok(softplus(-r.0[c]) + rest)
}

/// `P(S) = (1 - Π_{i∈S}(1 - p_i)) · Π_{j∉S}(1 - p_j)`.
pub fn propall_probability(p: &ProbabilityVector, s: &CandidateSet) -> Result<f64, LossError> {
    check_dims(p.len(), s)?;
    let mut log_q_in = 0.0;
    let mut outside = 1.0;
    for (i, &pi) in p.0.iter().enumerate() {
        if s.contains(i) {
            log_q_in += (-pi).ln_1p();
        } else {
            outside *= 1.0 - pi;
        }
    }
    Ok(-log_q_in.exp_m1() * outside)
}

/// `-ln P(S)` evaluated from logits with the two-branch scheme.
///
/// The non-candidate part is always `Σ_{j∉S} LogSumExp(0, r_j)`. For the
/// candidate part, let `m = max_i (S[i]·r_i + (1 - S[i])·min_finite)`:
///
/// - `m > branch_threshold`: `-ln(1 - exp(-Σ_{i∈S} LogSumExp(0, r_i)))`;
/// - otherwise: `-LogSumExp_i(S[i]·r_i + (1 - S[i])·min_finite)`, plus the
///   tail refinement when [`StableConstants::refine_tail`] is set.
///
/// The result is finite for every finite `r`.
pub fn propall_cost_logits(
    r: &LogitVector,
    s: &CandidateSet,
    consts: &StableConstants,
) -> Result<f64, LossError> {
    check_dims(r.len(), s)?;
    Ok(cost_kernel(&r.0, s, consts))
}

/// The cost without the stable branch: `-ln(1 - exp(-h))` evaluated directly.
///
/// Overflows to `+∞` once every candidate logit is below about -37. Kept as
/// the negative control for the oracle suites.
pub fn propall_cost_logits_direct(r: &LogitVector, s: &CandidateSet) -> Result<f64, LossError> {
    check_dims(r.len(), s)?;
    let (inside, outside) = split_softplus_sums(&r.0, s);
    Ok(-(1.0 - (-inside).exp()).ln() + outside)
}

/// Gradient of [`propall_cost_logits`] with respect to the logits.
///
/// With `Q = Π_{i∈S}(1 - p_i) = exp(-h)`: candidates get `-p_i·Q/(1-Q)`,
/// evaluated as `-exp(ln p_i - ln(e^h - 1))`, and non-candidates get `p_j`.
pub fn propall_grad_logits(r: &LogitVector, s: &CandidateSet) -> Result<Vec<f64>, LossError> {
    check_dims(r.len(), s)?;
    let mut out = vec![0.0; r.len()];
    grad_kernel(&r.0, s, &mut out);
    Ok(out)
}

/// Mean cost over a mini-batch plus the gradient of that mean.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchCost {
    pub mean_cost: f64,
    /// `n × k`, already scaled by `1/n`.
    pub grad: Array2<f64>,
}

/// Evaluates the cost and gradient of every row of `logits` and averages them.
pub fn batch_cost(
    logits: ArrayView2<'_, f64>,
    sets: &[CandidateSet],
    consts: &StableConstants,
) -> Result<BatchCost, LossError> {
    let (n, k) = logits.dim();
    if n != sets.len() {
        return Err(LossError::ShapeMismatch {
            rows: n,
            sets: sets.len(),
        });
    }
    if n == 0 {
        return Err(LossError::ShapeMismatch { rows: 0, sets: 0 });
    }
    let mut grad = Array2::zeros((n, k));
    let mut total = 0.0;
    let mut row_buf = vec![0.0; k];
    let mut grad_buf = vec![0.0; k];
    let scale = 1.0 / n as f64;
    for ((row, s), mut g) in logits.outer_iter().zip(sets).zip(grad.outer_iter_mut()) {
        check_dims(k, s)?;
        for (dst, src) in row_buf.iter_mut().zip(row.iter()) {
            *dst = *src;
        }
        check_finite(&row_buf)?;
        total += cost_kernel(&row_buf, s, consts);
        grad_kernel(&row_buf, s, &mut grad_buf);
        for (dst, src) in g.iter_mut().zip(&grad_buf) {
            *dst = src * scale;
        }
    }
    Ok(BatchCost {
        mean_cost: total / n as f64,
        grad,
    })
}

fn split_softplus_sums(r: &[f64], s: &CandidateSet) -> (f64, f64) {
    let mut inside = 0.0;
    let mut outside = 0.0;
    for (i, &ri) in r.iter().enumerate() {
        if s.contains(i) {
            inside += softplus(ri);
        } else {
            outside += softplus(ri);
        }
    }
    (inside, outside)
}

fn masked<'a>(
    r: &'a [f64],
    s: &'a CandidateSet,
    min_finite: f64,
) -> impl Iterator<Item = f64> + Clone + 'a {
    r.iter()
        .enumerate()
        .map(move |(i, &ri)| if s.contains(i) { ri } else { min_finite })
}

fn cost_kernel(r: &[f64], s: &CandidateSet, consts: &StableConstants) -> f64 {
    let (inside, outside) = split_softplus_sums(r, s);
    let masked_max = masked(r, s, consts.min_finite).fold(f64::NEG_INFINITY, f64::max);
    let first = if masked_max > consts.branch_threshold {
        neg_log1mexp(inside)
    } else {
        tail_branch(r, s, consts)
    };
    first + outside
}

/// `-ln(1 - e^{-h})` for `h = Σ_{i∈S} softplus(r_i)` when all candidate
/// logits are very negative.
///
/// Writing `m = LogSumExp_{i∈S}(r_i)` and `h = e^m (1 - ε)`:
/// `-ln(1 - e^{-h}) = -m - ln(1 - ε) - ln((1 - e^{-h})/h)`.
/// The leading term is the masked log-sum-exp; `ε` and the last term are
/// `O(e^m)`.
fn tail_branch(r: &[f64], s: &CandidateSet, consts: &StableConstants) -> f64 {
    let m = logsumexp(masked(r, s, consts.min_finite));
    if !consts.refine_tail {
        return -m;
    }
    let eps: f64 = s
        .iter()
        .map(|i| {
            let x = r[i].exp();
            if x == 0.0 {
                0.0
            } else {
                (r[i] - m).exp() * softplus_excess_ratio(x)
            }
        })
        .sum();
    let h = m.exp() * (1.0 - eps);
    -m - (-eps).ln_1p() + neg_log_expm1_ratio(h)
}

fn grad_kernel(r: &[f64], s: &CandidateSet, out: &mut [f64]) {
    let h: f64 = s.iter().map(|i| softplus(r[i])).sum();
    let log_h = logsumexp(s.iter().map(|i| log_softplus(r[i])).collect::<Vec<_>>());
    let log_denominator = log_expm1(h, log_h);
    for (i, (&ri, g)) in r.iter().zip(out.iter_mut()).enumerate() {
        *g = if s.contains(i) {
            -(log_sigmoid(ri) - log_denominator).exp()
        } else {
            sigmoid(ri)
        };
    }
}
