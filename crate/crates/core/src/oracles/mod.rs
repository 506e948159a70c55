//! Reference implementations used to check [`crate::loss`].
//!
//! None of these are meant for training: enumeration is exponential in the
//! number of classes and the extended-precision cost is slow. They are kept
//! independent of the loss kernels (no shared helpers) so that agreement
//! between the two means something.

pub mod dd;

use thiserror::Error;

use crate::loss::{CandidateSet, LogitVector, ProbabilityVector};
pub use dd::DoubleDouble;

/// Largest class count [`enumerate_event_probability`] accepts.
pub const MAX_ENUMERATION_CLASSES: usize = 24;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("{k} classes exceeds the enumeration limit of {MAX_ENUMERATION_CLASSES}")]
    TooManyClasses { k: usize },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}

/// One joint outcome `b ∈ {0,1}^k` of the per-class Bernoulli variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryOutcome {
    pub bits: Vec<bool>,
}

impl BinaryOutcome {
    /// Outcome whose bit `i` is bit `i` of `code`.
    pub fn from_code(k: usize, code: u64) -> Self {
        Self {
            bits: (0..k).map(|i| code >> i & 1 == 1).collect(),
        }
    }

    /// Membership in the event: some bit inside `S` set, none outside.
    pub fn in_event(&self, s: &CandidateSet) -> bool {
        let mut hit = false;
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                if s.contains(i) {
                    hit = true;
                } else {
                    return false;
                }
            }
        }
        hit
    }
}

/// `P(b) = Π p_i^{b_i} (1 - p_i)^{1 - b_i}`.
pub fn outcome_probability(p: &ProbabilityVector, b: &BinaryOutcome) -> Result<f64, OracleError> {
    if p.len() != b.bits.len() {
        return Err(OracleError::LengthMismatch {
            expected: p.len(),
            found: b.bits.len(),
        });
    }
    Ok(p.as_slice()
        .iter()
        .zip(&b.bits)
        .map(|(&pi, &bi)| if bi { pi } else { 1.0 - pi })
        .product())
}

/// Sums [`outcome_probability`] over every outcome in the event of `S`.
pub fn enumerate_event_probability(
    p: &ProbabilityVector,
    s: &CandidateSet,
) -> Result<f64, OracleError> {
    let k = p.len();
    if k > MAX_ENUMERATION_CLASSES {
        return Err(OracleError::TooManyClasses { k });
    }
    if s.num_classes() != k {
        return Err(OracleError::LengthMismatch {
            expected: k,
            found: s.num_classes(),
        });
    }
    let mut total = 0.0;
    for code in 0..(1u64 << k) {
        let b = BinaryOutcome::from_code(k, code);
        if b.in_event(s) {
            total += outcome_probability(p, &b)?;
        }
    }
    Ok(total)
}

/// Central differences `(f(r + h e_i) - f(r - h e_i)) / 2h` per coordinate.
///
/// The divisor is the actual distance between the two perturbed points after
/// rounding, not `2h`.
pub fn finite_difference_gradient<F>(f: F, r: &[f64], step: f64) -> Result<Vec<f64>, OracleError>
where
    F: Fn(&[f64]) -> f64,
{
    central_differences(|x| DoubleDouble::from_f64(f(x)), r, step)
}

/// Same as [`finite_difference_gradient`] but subtracts the two function
/// values in double-double, so cancellation does not eat the difference.
pub fn finite_difference_gradient_dd<F>(f: F, r: &[f64], step: f64) -> Result<Vec<f64>, OracleError>
where
    F: Fn(&[f64]) -> DoubleDouble,
{
    central_differences(f, r, step)
}

fn central_differences<F>(f: F, r: &[f64], step: f64) -> Result<Vec<f64>, OracleError>
where
    F: Fn(&[f64]) -> DoubleDouble,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(OracleError::InvalidStep(step));
    }
    let mut point = r.to_vec();
    let mut out = Vec::with_capacity(r.len());
    for i in 0..r.len() {
        let plus = r[i] + step;
        let minus = r[i] - step;
        point[i] = plus;
        let f_plus = f(&point);
        point[i] = minus;
        let f_minus = f(&point);
        point[i] = r[i];
        out.push((f_plus - f_minus).to_f64() / (plus - minus));
    }
    Ok(out)
}

fn softplus_dd(r: f64) -> DoubleDouble {
    if r <= 0.0 {
        DoubleDouble::from_f64(r).exp().ln_1p()
    } else {
        DoubleDouble::from_f64(r) + DoubleDouble::from_f64(-r).exp().ln_1p()
    }
}

/// The candidate-set cost in double-double with no branch:
/// `-ln(-expm1(-h)) + Σ_{j∉S} softplus(r_j)` with `h = Σ_{i∈S} softplus(r_i)`.
///
/// Accurate well past `f64` precision for `|r_i| ≤ 700`; beyond that the
/// exponentials underflow and the result can become infinite.
pub fn high_precision_cost_dd(r: &[f64], s: &CandidateSet) -> Result<DoubleDouble, OracleError> {
    if r.len() != s.num_classes() {
        return Err(OracleError::LengthMismatch {
            expected: s.num_classes(),
            found: r.len(),
        });
    }
    let mut inside = DoubleDouble::ZERO;
    let mut outside = DoubleDouble::ZERO;
    for (i, &ri) in r.iter().enumerate() {
        if s.contains(i) {
            inside = inside + softplus_dd(ri);
        } else {
            outside = outside + softplus_dd(ri);
        }
    }
    let first = -(-(-inside).exp_m1()).ln();
    Ok(first + outside)
}

/// [`high_precision_cost_dd`] rounded to `f64`.
pub fn high_precision_cost(r: &LogitVector, s: &CandidateSet) -> Result<f64, OracleError> {
    high_precision_cost_dd(r.as_slice(), s).map(DoubleDouble::to_f64)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
