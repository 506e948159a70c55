//! Oracle suites packaged as reports, for tests and the `gradcheck` command.
//!
//! - event sum: closed-form event probability against brute-force
//!   enumeration of all `2^k` outcomes;
//! - finite differences: analytic logit gradient against central
//!   differences of the double-double reference cost;
//! - stable branch: the cost near and far below the branch threshold
//!   against the reference cost.
//!
//! [`CostVariant::Direct`] swaps in the unguarded cost so the last suite can
//! be seen to fail.

use std::fmt;

use rand::Rng;
use serde::Serialize;

use crate::gumbel::RandomSource;
use crate::loss::{
    propall_cost_logits, propall_cost_logits_direct, propall_grad_logits, propall_probability,
    CandidateSet, LogitVector, ProbabilityVector, StableConstants,
};
use crate::oracles::{
    enumerate_event_probability, finite_difference_gradient_dd, high_precision_cost,
    high_precision_cost_dd, relative_error,
};

/// Relative-error floor: below this magnitude errors count as absolute.
pub const RELATIVE_FLOOR: f64 = 1e-15;

/// Which cost implementation the stable-branch suite exercises.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostVariant {
    Stable(StableConstants),
    /// No stable branch. Overflows for very negative candidate logits.
    Direct,
}

impl Default for CostVariant {
    fn default() -> Self {
        CostVariant::Stable(StableConstants::default())
    }
}

impl CostVariant {
    pub fn cost(&self, r: &LogitVector, s: &CandidateSet) -> f64 {
        match self {
            CostVariant::Stable(c) => propall_cost_logits(r, s, c),
            CostVariant::Direct => propall_cost_logits_direct(r, s),
        }
        .expect("suite builds consistent inputs")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Where the worst error occurred, or what went wrong.
    pub detail: String,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: cases={} max_error={:.3e} tolerance={:.0e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.max_error,
            self.tolerance
        )?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub suites: Vec<SuiteReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            writeln!(f, "{s}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub k_min: usize,
    pub k_max: usize,
    /// Random `(p, S)` pairs per `k` in the event-sum suite.
    pub trials: usize,
    pub fd_cases: usize,
    pub fd_step: f64,
    pub seed: u64,
    pub cost: CostVariant,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            k_min: 2,
            k_max: 12,
            trials: 500,
            fd_cases: 1000,
            fd_step: 1e-5,
            seed: 0,
            cost: CostVariant::default(),
        }
    }
}

/// Runs every suite with the given configuration.
pub fn run_all(config: &GradcheckConfig) -> GradcheckReport {
    let mut suites = vec![event_sum_suite(
        config.k_min,
        config.k_max,
        config.trials,
        config.seed,
    )];
    for (bound, tol) in [(30.0, 1e-5), (60.0, 1e-4)] {
        suites.push(finite_difference_suite(
            config.fd_cases,
            bound,
            config.fd_step,
            tol,
            config.seed,
        ));
    }
    suites.push(continuity_suite(&config.cost));
    suites.push(extreme_logit_suite(&config.cost));
    GradcheckReport { suites }
}

/// Nonempty subset of `0..k`, each class included with probability 1/2.
pub fn random_candidate_set(k: usize, rng: &mut RandomSource) -> CandidateSet {
    loop {
        let members: Vec<usize> = (0..k).filter(|_| rng.gen::<bool>()).collect();
        if !members.is_empty() {
            return CandidateSet::new(k, members).expect("members in range");
        }
    }
}

pub fn event_sum_suite(k_min: usize, k_max: usize, trials: usize, seed: u64) -> SuiteReport {
    let mut rng = RandomSource::new(seed);
    let mut worst = (0.0, String::new());
    let mut cases = 0;
    for k in k_min..=k_max {
        for _ in 0..trials {
            let p = ProbabilityVector::new((0..k).map(|_| rng.open01()).collect())
                .expect("open interval");
            let s = random_candidate_set(k, &mut rng);
            let closed = propall_probability(&p, &s).expect("consistent");
            let brute = enumerate_event_probability(&p, &s).expect("k within limit");
            let err = (closed - brute).abs();
            if err > worst.0 {
                worst = (err, format!("k={k} |S|={}", s.len()));
            }
            cases += 1;
        }
    }
    let tolerance = 1e-10;
    SuiteReport {
        name: format!("event-sum k={k_min}..{k_max}"),
        cases,
        max_error: worst.0,
        tolerance,
        passed: worst.0 < tolerance,
        detail: worst.1,
    }
}

/// Random `k ∈ [2, 10]`, logits uniform in `[-bound, bound]`, random `S`.
pub fn finite_difference_suite(
    cases: usize,
    bound: f64,
    step: f64,
    tolerance: f64,
    seed: u64,
) -> SuiteReport {
    let mut rng = RandomSource::with_stream(seed, 1);
    let mut worst = (0.0, String::new());
    for _ in 0..cases {
        let k = rng.gen_range(2..=10);
        let r: Vec<f64> = (0..k).map(|_| rng.gen_range(-bound..=bound)).collect();
        let s = random_candidate_set(k, &mut rng);
        let analytic =
            propall_grad_logits(&LogitVector::new(r.clone()).expect("finite"), &s).expect("k");
        let numeric =
            finite_difference_gradient_dd(|x| high_precision_cost_dd(x, &s).expect("k"), &r, step)
                .expect("valid step");
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let err = relative_error(*a, *n, RELATIVE_FLOOR);
            if err > worst.0 || err.is_nan() {
                worst = (err, format!("r_{i}={:.3} in S={}", r[i], s.contains(i)));
            }
        }
    }
    SuiteReport {
        name: format!("finite-difference |r|<={bound}"),
        cases,
        max_error: worst.0,
        tolerance,
        passed: worst.0 < tolerance,
        detail: worst.1,
    }
}

/// Logit layouts for the threshold sweep: `(k, candidates, sweep index)`.
/// The swept candidate moves, other candidates sit at -40 and
/// non-candidates are fixed moderate values.
fn sweep_layouts() -> Vec<(Vec<f64>, CandidateSet, usize)> {
    let base = [0.7, -1.3, 2.2, -0.4, 1.1, -2.5, 0.0, 3.0, -3.5, 0.9];
    let mut out = Vec::new();
    for size in [1, 2, 3, 5, 10] {
        let mut r = base.to_vec();
        for v in r.iter_mut().take(size) {
            *v = -40.0;
        }
        let s = CandidateSet::new(10, 0..size).expect("in range");
        out.push((r, s, 0));
    }
    out
}

/// Sweeps the largest candidate logit from -10.5 to -9.5 in steps of 1e-3.
///
/// Two errors are tracked: the pointwise gap to the reference cost, and the
/// jump `|Δcost - Δreference|` between neighbouring sweep points. The suite
/// reports the larger of the two.
pub fn continuity_suite(cost: &CostVariant) -> SuiteReport {
    let tolerance = 1e-6;
    let mut max_gap: (f64, String) = (0.0, String::new());
    let mut max_jump: (f64, String) = (0.0, String::new());
    let mut cases = 0;
    for (mut r, s, idx) in sweep_layouts() {
        let mut prev: Option<(f64, f64)> = None;
        for step in 0..=1000 {
            let x = -10.5 + step as f64 * 1e-3;
            r[idx] = x;
            let lv = LogitVector::new(r.clone()).expect("finite");
            let c = cost.cost(&lv, &s);
            let o = high_precision_cost(&lv, &s).expect("k");
            let gap = (c - o).abs();
            if gap > max_gap.0 || gap.is_nan() {
                max_gap = (gap, format!("gap at r={x:.3}, |S|={}", s.len()));
            }
            if let Some((pc, po)) = prev {
                let jump = ((c - pc) - (o - po)).abs();
                if jump > max_jump.0 || jump.is_nan() {
                    max_jump = (jump, format!("jump at r={x:.3}, |S|={}", s.len()));
                }
            }
            prev = Some((c, o));
            cases += 1;
        }
    }
    let worst = if max_jump.0 > max_gap.0 || max_jump.0.is_nan() {
        max_jump.clone()
    } else {
        max_gap.clone()
    };
    let passed = max_gap.0 < tolerance && max_jump.0 < tolerance;
    SuiteReport {
        name: "stable-branch continuity r=-10.5..-9.5".into(),
        cases,
        max_error: worst.0,
        tolerance,
        passed,
        detail: format!(
            "max gap {:.3e}, max jump {:.3e}; {}",
            max_gap.0, max_jump.0, worst.1
        ),
    }
}

/// Every candidate logit far below the threshold (down to -600): the cost
/// must be finite and agree with the reference to 1e-10 relative.
pub fn extreme_logit_suite(cost: &CostVariant) -> SuiteReport {
    let tolerance = 1e-10;
    let mut worst = (0.0, String::new());
    let mut cases = 0;
    for top in [-50.0, -100.0, -300.0, -600.0] {
        for size in [1, 2, 4] {
            let mut r = vec![1.5, -0.5, 0.25, 2.0, -3.0, 0.0];
            for (i, v) in r.iter_mut().take(size).enumerate() {
                *v = top - 3.0 * i as f64;
            }
            let s = CandidateSet::new(6, 0..size).expect("in range");
            let lv = LogitVector::new(r).expect("finite");
            let c = cost.cost(&lv, &s);
            let o = high_precision_cost(&lv, &s).expect("k");
            let err = if c.is_finite() {
                relative_error(c, o, 1.0)
            } else {
                f64::INFINITY
            };
            if err > worst.0 || err.is_nan() {
                worst = (err, format!("r_max={top}, |S|={size}, cost={c}"));
            }
            cases += 1;
        }
    }
    SuiteReport {
        name: "stable-branch extremes r<=-50".into(),
        cases,
        max_error: worst.0,
        tolerance,
        passed: worst.0 < tolerance,
        detail: worst.1,
    }
}
