//! Property tests for the candidate-set cost, its gradient and the oracles
//! that check them.

use proptest::prelude::*;

use propall_core::loss::primitives::sigmoid;
use propall_core::loss::{
    bce_cost_logits, propall_cost_logits, propall_grad_logits, propall_probability, CandidateSet,
    LogitVector, ProbabilityVector, StableConstants,
};
use propall_core::oracles::{
    enumerate_event_probability, high_precision_cost, outcome_probability, BinaryOutcome,
};

fn logits_and_set(
    k: std::ops::RangeInclusive<usize>,
    bound: f64,
) -> impl Strategy<Value = (Vec<f64>, CandidateSet)> {
    k.prop_flat_map(move |k| {
        (
            prop::collection::vec(-bound..=bound, k),
            prop::collection::vec(any::<bool>(), k),
            0..k,
        )
    })
    .prop_map(|(r, mut mask, forced)| {
        mask[forced] = true;
        let s = CandidateSet::from_mask(&mask).unwrap();
        (r, s)
    })
}

fn probs_and_set(
    k: std::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = (Vec<f64>, CandidateSet)> {
    k.prop_flat_map(|k| {
        (
            prop::collection::vec(1e-6..(1.0 - 1e-6), k),
            prop::collection::vec(any::<bool>(), k),
            0..k,
        )
    })
    .prop_map(|(p, mut mask, forced)| {
        mask[forced] = true;
        (p, CandidateSet::from_mask(&mask).unwrap())
    })
}

fn lv(r: &[f64]) -> LogitVector {
    LogitVector::new(r.to_vec()).unwrap()
}

fn cost(r: &[f64], s: &CandidateSet) -> f64 {
    propall_cost_logits(&lv(r), s, &StableConstants::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn event_probability_matches_enumeration((p, s) in probs_and_set(1..=12)) {
        let pv = ProbabilityVector::new(p).unwrap();
        let closed = propall_probability(&pv, &s).unwrap();
        let brute = enumerate_event_probability(&pv, &s).unwrap();
        prop_assert!((closed - brute).abs() < 1e-10, "{closed} vs {brute}");
    }

    #[test]
    fn outcome_probabilities_sum_to_one((p, _s) in probs_and_set(1..=10)) {
        let k = p.len();
        let pv = ProbabilityVector::new(p).unwrap();
        let total: f64 = (0..1u64 << k)
            .map(|code| outcome_probability(&pv, &BinaryOutcome::from_code(k, code)).unwrap())
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complement_identity((p, s) in probs_and_set(1..=12)) {
        let pv = ProbabilityVector::new(p.clone()).unwrap();
        let event = propall_probability(&pv, &s).unwrap();
        let inside: f64 = s.iter().map(|i| 1.0 - p[i]).product();
        let outside: f64 = (0..p.len()).filter(|j| !s.contains(*j)).map(|j| 1.0 - p[j]).product();
        prop_assert!((event + inside * outside - outside).abs() < 1e-12);
    }

    #[test]
    fn cost_is_minus_log_probability_off_the_stable_branch((r, s) in logits_and_set(1..=10, 12.0)) {
        let top = s.iter().map(|i| r[i]).fold(f64::NEG_INFINITY, f64::max);
        prop_assume!(top > -10.0);
        let p = ProbabilityVector::new(r.iter().map(|&v| sigmoid(v)).collect()).unwrap();
        let prob = propall_probability(&p, &s).unwrap();
        prop_assert!(((-cost(&r, &s)).exp() - prob).abs() < 1e-9);
    }

    #[test]
    fn singleton_reduces_to_bce(r in prop::collection::vec(-60.0..60.0f64, 1..=12), pick in any::<prop::sample::Index>()) {
        let c = pick.index(r.len());
        let s = CandidateSet::singleton(r.len(), c).unwrap();
        let bce = bce_cost_logits(&lv(&r), c).unwrap();
        prop_assert!((cost(&r, &s) - bce).abs() < 1e-12, "{} vs {bce}", cost(&r, &s));
    }

    #[test]
    fn enlarging_the_set_never_raises_the_cost(
        (r, s) in logits_and_set(2..=10, 60.0),
        extra in prop::collection::vec(any::<bool>(), 10),
    ) {
        let bigger: Vec<usize> = s.iter().chain((0..r.len()).filter(|&j| extra[j])).collect();
        let big = CandidateSet::new(r.len(), bigger).unwrap();
        prop_assert!(s.is_subset(&big));
        prop_assert!(cost(&r, &big) <= cost(&r, &s) + 1e-12);
    }

    #[test]
    fn gradient_signs((r, s) in logits_and_set(1..=10, 30.0)) {
        let g = propall_grad_logits(&lv(&r), &s).unwrap();
        for (i, gi) in g.iter().enumerate() {
            if s.contains(i) {
                prop_assert!(*gi > -1.0 && *gi < 0.0, "candidate {i}: {gi}");
            } else {
                prop_assert!(*gi > 0.0 && *gi < 1.0, "other {i}: {gi}");
            }
        }
    }

    #[test]
    fn huge_logits_stay_finite(
        (r, s) in logits_and_set(1..=10, 1e4),
        extremes in prop::collection::vec(prop::sample::select(vec![-1e4, 1e4, 0.0]), 10),
    ) {
        let mixed: Vec<f64> = r.iter().zip(&extremes).map(|(a, b)| if *b == 0.0 { *a } else { *b }).collect();
        for v in [&r, &mixed] {
            let c = cost(v, &s);
            prop_assert!(c.is_finite() && c >= 0.0, "{c}");
            let g = propall_grad_logits(&lv(v), &s).unwrap();
            prop_assert!(g.iter().all(|x| x.is_finite() && x.abs() <= 1.0));
        }
    }

    #[test]
    fn relabeling_classes_permutes_the_gradient(
        (r, s, perm) in logits_and_set(1..=10, 60.0).prop_flat_map(|(r, s)| {
            let k = r.len();
            (Just(r), Just(s), Just((0..k).collect::<Vec<_>>()).prop_shuffle())
        })
    ) {
        let mut rp = vec![0.0; r.len()];
        for (i, &to) in perm.iter().enumerate() {
            rp[to] = r[i];
        }
        let sp = s.permuted(&perm).unwrap();
        // summation order changes with the relabeling, so allow rounding
        let (a, b) = (cost(&r, &s), cost(&rp, &sp));
        prop_assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0), "{a} vs {b}");
        let g = propall_grad_logits(&lv(&r), &s).unwrap();
        let gp = propall_grad_logits(&lv(&rp), &sp).unwrap();
        for (i, &to) in perm.iter().enumerate() {
            prop_assert!((g[i] - gp[to]).abs() <= 1e-12 * g[i].abs(), "{} vs {}", g[i], gp[to]);
        }
    }

    #[test]
    fn cost_tracks_the_reference((r, s) in logits_and_set(1..=10, 60.0)) {
        let reference = high_precision_cost(&lv(&r), &s).unwrap();
        let c = cost(&r, &s);
        prop_assert!((c - reference).abs() <= 1e-12 * reference.abs().max(1.0), "{c} vs {reference}");
    }
}
