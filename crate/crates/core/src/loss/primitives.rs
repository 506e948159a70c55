//! Scalar log/exp composites shared by the loss kernels.
//!
//! Everything here is written against `ln_1p`/`exp_m1` so that none of the
//! compositions cancel catastrophically near 0 or saturate near 1.

/// `σ(r) = 1 / (1 + e^{-r})`.
#[inline]
pub fn sigmoid(r: f64) -> f64 {
    let e = (-r.abs()).exp();
    if r >= 0.0 {
        1.0 / (1.0 + e)
    } else {
        e / (1.0 + e)
    }
}

/// `ln σ(r) = -LogSumExp(0, -r)`.
#[inline]
pub fn log_sigmoid(r: f64) -> f64 {
    -softplus(-r)
}

/// `LogSumExp(0, r) = ln(1 + e^r)`.
#[inline]
pub fn softplus(r: f64) -> f64 {
    r.max(0.0) + (-r.abs()).exp().ln_1p()
}

/// `ln(softplus(r))`, finite even when `softplus(r)` underflows.
#[inline]
pub fn log_softplus(r: f64) -> f64 {
    // ln(ln(1 + e^r)) = r + ln(1 - e^r/2 + ...) and e^r/2 < 2^-54 below -37.
    if r < -37.0 {
        r
    } else {
        softplus(r).ln()
    }
}

/// `-ln(1 - e^{-h})` for `h > 0`.
#[inline]
pub fn neg_log1mexp(h: f64) -> f64 {
    if h > std::f64::consts::LN_2 {
        -(-(-h).exp()).ln_1p()
    } else {
        -(-(-h).exp_m1()).ln()
    }
}

/// `ln(e^h - 1)` for `h ≥ 0`, given `ln h` separately so that an underflowed
/// `h` still yields a finite answer.
#[inline]
pub fn log_expm1(h: f64, log_h: f64) -> f64 {
    if h > 1.0 {
        h + (-(-h).exp_m1()).ln()
    } else if h > 1e-3 {
        h.exp_m1().ln()
    } else {
        // ln((e^h - 1)/h) = h/2 + h^2/24 - h^4/2880 + ...
        log_h + h * (0.5 + h * (1.0 / 24.0 - h * h / 2880.0))
    }
}

/// Log-sum-exp of a sequence; the empty sequence gives `-∞`.
pub fn logsumexp<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let iter = values.into_iter();
    let max = iter.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = iter.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `(x - ln(1 + x)) / x` for `x > 0`, the relative gap between `x` and
/// `ln(1 + x)`.
#[inline]
pub(crate) fn softplus_excess_ratio(x: f64) -> f64 {
    if x < 1e-3 {
        // x/2 - x^2/3 + x^3/4 - x^4/5 + x^5/6 - x^6/7
        x * (0.5 - x * (1.0 / 3.0 - x * (0.25 - x * (0.2 - x * (1.0 / 6.0 - x / 7.0)))))
    } else {
        1.0 - x.ln_1p() / x
    }
}

/// `-ln((1 - e^{-h}) / h)`, which is `h/2 + O(h^2)` near zero.
#[inline]
pub(crate) fn neg_log_expm1_ratio(h: f64) -> f64 {
    if h < 1e-3 {
        h * (0.5 - h * (1.0 / 24.0 - h * h / 2880.0))
    } else {
        neg_log1mexp(h) + h.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_reference_points() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        let tiny = sigmoid(-1e6);
        assert!(tiny.is_finite() && (0.0..1e-300).contains(&tiny));
        assert_eq!(sigmoid(1e6), 1.0);
    }

    #[test]
    fn softplus_tails() {
        assert_eq!(softplus(-800.0), 0.0);
        assert_eq!(softplus(800.0), 800.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
        assert!((softplus(-40.0) - (-40f64).exp()).abs() < 1e-30);
    }

    #[test]
    fn log_softplus_is_continuous_at_switch() {
        let below = log_softplus(-37.0 - 1e-12);
        let above = log_softplus(-37.0);
        assert!((below - above).abs() < 1e-11);
        assert_eq!(log_softplus(-1e4), -1e4);
    }

    #[test]
    fn neg_log1mexp_matches_direct_form_in_safe_range() {
        for h in [0.01, 0.5, 0.69, 0.7, 2.0, 10.0] {
            let direct = -(1.0 - (-h as f64).exp()).ln();
            assert!((neg_log1mexp(h) - direct).abs() < 1e-13 * direct.abs().max(1.0));
        }
        // direct form would give ln(0) here
        assert!((neg_log1mexp(1e-20) - 20.0 * 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_expm1_branches_agree() {
        for h in [1e-3, 1.0] {
            let lo = log_expm1(h * (1.0 - 1e-12), (h * (1.0 - 1e-12)).ln());
            let hi = log_expm1(h * (1.0 + 1e-12), (h * (1.0 + 1e-12)).ln());
            assert!((lo - hi).abs() < 1e-10, "h={h}: {lo} vs {hi}");
        }
        assert!((log_expm1(800.0, 800f64.ln()) - 800.0).abs() < 1e-12);
        assert_eq!(log_expm1(0.0, -1000.0), -1000.0);
    }

    #[test]
    fn series_helpers_are_continuous_at_switch() {
        let a = softplus_excess_ratio(1e-3 * (1.0 - 1e-12));
        let b = softplus_excess_ratio(1e-3);
        assert!((a - b).abs() < 1e-12);
        let a = neg_log_expm1_ratio(1e-3 * (1.0 - 1e-12));
        let b = neg_log_expm1_ratio(1e-3);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_handles_masked_entries() {
        let v = [f64::MIN, -3.0, f64::MIN];
        assert_eq!(logsumexp(v), -3.0);
        assert_eq!(logsumexp(std::iter::empty::<f64>()), f64::NEG_INFINITY);
        let two = logsumexp([-50.0, -50.0]);
        assert!((two - (-50.0 + std::f64::consts::LN_2)).abs() < 1e-14);
    }
}
