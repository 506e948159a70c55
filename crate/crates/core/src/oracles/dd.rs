//! Double-double arithmetic: an unevaluated sum `hi + lo` of two `f64`s with
//! `|lo| ≤ ulp(hi)/2`, giving about 106 bits of significand.
//!
//! Only what the reference cost needs is here: the four operations, `exp`,
//! `expm1`, `ln` and `ln_1p`.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

const LN2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleDouble {
    pub const ZERO: Self = Self { hi: 0.0, lo: 0.0 };
    pub const ONE: Self = Self { hi: 1.0, lo: 0.0 };

    pub const fn from_f64(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        if !hi.is_finite() {
            return Self { hi, lo: 0.0 };
        }
        let (hi, lo) = quick_two_sum(hi, lo);
        Self { hi, lo }
    }

    /// Multiplies by `2^k` exactly (barring under/overflow).
    fn scale_pow2(self, k: i32) -> Self {
        let half = k / 2;
        let a = 2f64.powi(half);
        let b = 2f64.powi(k - half);
        Self {
            hi: self.hi * a * b,
            lo: self.lo * a * b,
        }
    }

    /// `e^x - 1` for `|x| ≤ ln2/2`, accurate relative to the result.
    fn expm1_reduced(self) -> Self {
        // Shrink the argument by 2^-9 so a short Taylor series converges to
        // ~1e-32, then undo with (1+s)^2 - 1 = 2s + s^2.
        const SQUARINGS: i32 = 9;
        let r = self.scale_pow2(-SQUARINGS);
        let mut term = r;
        let mut sum = r;
        for n in 2..=12 {
            term = term * r / Self::from_f64(n as f64);
            sum = sum + term;
            if term.hi.abs() < 1e-36 * sum.hi.abs() {
                break;
            }
        }
        for _ in 0..SQUARINGS {
            sum = sum.scale_pow2(1) + sum * sum;
        }
        sum
    }

    pub fn exp(self) -> Self {
        if self.hi > 709.78 {
            return Self::from_f64(f64::INFINITY);
        }
        if self.hi < -745.2 {
            return Self::ZERO;
        }
        let k = (self.hi / std::f64::consts::LN_2).round();
        let r = self - LN2 * Self::from_f64(k);
        (r.expm1_reduced() + Self::ONE).scale_pow2(k as i32)
    }

    pub fn exp_m1(self) -> Self {
        if self.hi.abs() <= 0.5 * std::f64::consts::LN_2 {
            self.expm1_reduced()
        } else {
            self.exp() - Self::ONE
        }
    }

    /// Natural logarithm by Newton refinement of the `f64` estimate.
    pub fn ln(self) -> Self {
        if self.hi <= 0.0 {
            return Self::from_f64(if self.hi == 0.0 {
                f64::NEG_INFINITY
            } else {
                f64::NAN
            });
        }
        if self.hi == f64::INFINITY {
            return self;
        }
        // Pull out a power of two so the Newton steps never see exp of a
        // huge argument (whose low word would be subnormal).
        let e = self.hi.log2().round() as i32;
        let scale = 2f64.powi(-e);
        let m = Self {
            hi: self.hi * scale,
            lo: self.lo * scale,
        };
        let mut y = Self::from_f64(m.hi.ln());
        for _ in 0..2 {
            y = y + m * (-y).exp() - Self::ONE;
        }
        y + LN2 * Self::from_f64(f64::from(e))
    }

    /// `ln(1 + x)`, accurate for tiny `x`.
    pub fn ln_1p(self) -> Self {
        if self.hi.abs() >= 1e-2 {
            return (Self::ONE + self).ln();
        }
        // 2·atanh(u) with u = x / (2 + x)
        let u = self / (Self::from_f64(2.0) + self);
        let u2 = u * u;
        let mut power = u;
        let mut sum = u;
        for n in (3..=31).step_by(2) {
            power = power * u2;
            let term = power / Self::from_f64(n as f64);
            sum = sum + term;
            if term.hi.abs() < 1e-36 * sum.hi.abs() {
                break;
            }
        }
        sum.scale_pow2(1)
    }
}

impl From<f64> for DoubleDouble {
    fn from(x: f64) -> Self {
        Self::from_f64(x)
    }
}

impl Add for DoubleDouble {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Self::renorm(s, e + f)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;

    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;

    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;

    fn mul(self, o: Self) -> Self {
        let (p, e) = two_prod(self.hi, o.hi);
        Self::renorm(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;

    fn div(self, o: Self) -> Self {
        let q1 = self.hi / o.hi;
        let r = self - o * Self::from_f64(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Self::from_f64(q2);
        let q3 = r.hi / o.hi;
        Self::renorm(q1, q2) + Self::from_f64(q3)
    }
}
