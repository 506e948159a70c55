//! Gumbel-difference logit noise and its annealing schedule.
//!
//! Adding `λ·U_i` (standard Gumbel) to every logit of a two-class softmax is
//! the same as adding `λ·(U - V)` to the single binary logit, with `U` and `V`
//! independent standard Gumbels. With `k` independent sigmoid outputs each
//! logit gets its own `λ·(U_i - V_i)`. The difference of two standard Gumbels
//! is standard Logistic, so one uniform draw `u` and `ln(u / (1 - u))`
//! suffices.

use ndarray::Array2;
use rand::distributions::{Distribution, Open01};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::loss::LogitVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("plateau fraction {0} outside [0, 1]")]
    PlateauFraction(f64),
    #[error("peak lambda {0} must be finite and non-negative")]
    PeakLambda(f64),
    #[error("total steps must be positive")]
    ZeroSteps,
    #[error("step {step} beyond total steps {total}")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("noise scale {0} must be finite and non-negative")]
    NegativeLambda(f64),
}

/// Name of the generator behind [`RandomSource`], recorded in run manifests.
pub const RNG_ALGORITHM: &str = "chacha8";

/// Deterministic random stream: ChaCha8 keyed by a 64-bit seed, with an
/// independent sub-stream per `stream` id.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw from the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        Open01.sample(&mut self.rng)
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// `λ(t)`: held at `peak_lambda` up to `⌊plateau_fraction · total_steps⌋`, then
/// linear down to 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    plateau_fraction: f64,
    peak_lambda: f64,
    total_steps: u64,
    plateau_end: u64,
}

impl NoiseSchedule {
    pub const DEFAULT_PLATEAU: f64 = 0.8;
    pub const DEFAULT_PEAK: f64 = 1.0;

    pub fn new(
        plateau_fraction: f64,
        peak_lambda: f64,
        total_steps: u64,
    ) -> Result<Self, NoiseError> {
        if !(0.0..=1.0).contains(&plateau_fraction) {
            return Err(NoiseError::PlateauFraction(plateau_fraction));
        }
        if !(peak_lambda >= 0.0 && peak_lambda.is_finite()) {
            return Err(NoiseError::PeakLambda(peak_lambda));
        }
        if total_steps == 0 {
            return Err(NoiseError::ZeroSteps);
        }
        // 0.29 * 100 = 28.999999999999996; the tolerance keeps that at 29.
        let plateau_end = ((plateau_fraction * total_steps as f64) + 1e-9).floor() as u64;
        Ok(Self {
            plateau_fraction,
            peak_lambda,
            total_steps,
            plateau_end: plateau_end.min(total_steps),
        })
    }

    /// Default 80% plateau at peak 1.
    pub fn standard(total_steps: u64) -> Result<Self, NoiseError> {
        Self::new(Self::DEFAULT_PLATEAU, Self::DEFAULT_PEAK, total_steps)
    }

    pub fn plateau_fraction(&self) -> f64 {
        self.plateau_fraction
    }

    pub fn peak_lambda(&self) -> f64 {
        self.peak_lambda
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn lambda_at(&self, step: u64) -> Result<f64, NoiseError> {
        if step > self.total_steps {
            return Err(NoiseError::StepOutOfRange {
                step,
                total: self.total_steps,
            });
        }
        if step <= self.plateau_end {
            return Ok(self.peak_lambda);
        }
        let remaining = (self.total_steps - step) as f64;
        let span = (self.total_steps - self.plateau_end) as f64;
        Ok(self.peak_lambda * remaining / span)
    }
}

/// One draw of `U - V`, `U, V` independent standard Gumbel. Sampled as a
/// standard Logistic variate.
pub fn gumbel_difference_sample(rng: &mut RandomSource) -> f64 {
    let u = rng.open01();
    (u / (1.0 - u)).ln()
}

/// Kolmogorov-Smirnov distance between the empirical distribution of
/// `samples` and the standard Logistic CDF.
pub fn logistic_ks_statistic(samples: &[f64]) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0, |d: f64, (i, &x)| {
        let cdf = 1.0 / (1.0 + (-x).exp());
        d.max(cdf - i as f64 / n).max((i + 1) as f64 / n - cdf)
    })
}

/// Returns `r_i + λ·(U_i - V_i)` with fresh noise per coordinate.
pub fn perturb_logits(
    r: &LogitVector,
    lambda: f64,
    rng: &mut RandomSource,
) -> Result<LogitVector, NoiseError> {
    check_lambda(lambda)?;
    let mut out = r.as_slice().to_vec();
    if lambda > 0.0 {
        for v in &mut out {
            *v += lambda * gumbel_difference_sample(rng);
        }
    }
    // finite input + finite noise stays finite
    Ok(LogitVector::new(out).expect("perturbed logits are finite"))
}

/// In-place batch version of [`perturb_logits`], row-major draw order.
/// Draws nothing when `lambda == 0`.
pub fn perturb_logits_batch(
    logits: &mut Array2<f64>,
    lambda: f64,
    rng: &mut RandomSource,
) -> Result<(), NoiseError> {
    check_lambda(lambda)?;
    if lambda > 0.0 {
        for v in logits.iter_mut() {
            *v += lambda * gumbel_difference_sample(rng);
        }
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<(), NoiseError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(NoiseError::NegativeLambda(lambda));
    }
    Ok(())
}
