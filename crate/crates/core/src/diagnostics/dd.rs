//! Double-double arithmetic (an unevaluated sum `hi + lo` of two `f64`s,
//! about 32 significant digits) used as the high-precision reference for
//! finite-difference gradient checks.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct DD {
    pub hi: f64,
    pub lo: f64,
}

const LN2: DD = DD { hi: std::f64::consts::LN_2, lo: 2.319_046_813_846_299_6e-17 };

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

impl DD {
    pub const ZERO: DD = DD { hi: 0.0, lo: 0.0 };
    pub const ONE: DD = DD { hi: 1.0, lo: 0.0 };

    pub const fn from_f64(x: f64) -> DD {
        DD { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn renorm(hi: f64, lo: f64) -> DD {
        let (hi, lo) = quick_two_sum(hi, lo);
        DD { hi, lo }
    }

    fn scale_pow2(self, k: i32) -> DD {
        // split so that neither factor leaves the normal range
        let (a, b) = (k / 2, k - k / 2);
        let fa = 2f64.powi(a);
        let fb = 2f64.powi(b);
        DD { hi: self.hi * fa * fb, lo: self.lo * fa * fb }
    }

    pub fn exp(self) -> DD {
        if self.hi > 709.0 {
            return DD::from_f64(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return DD::ZERO;
        }
        let m = (self.hi / LN2.hi).round();
        let r = self - LN2 * DD::from_f64(m);
        // e^r = (e^(r/2^10))^(2^10), tracked as expm1 to keep precision near 1
        const SQUARINGS: i32 = 10;
        let t = r.scale_pow2(-SQUARINGS);
        let mut term = t;
        let mut s = t;
        for n in 2..=12 {
            term = term * t / DD::from_f64(n as f64);
            s = s + term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        for _ in 0..SQUARINGS {
            s = s * (s + DD::from_f64(2.0));
        }
        (s + DD::ONE).scale_pow2(m as i32)
    }

    /// Natural log; `self` must be positive.
    pub fn ln(self) -> DD {
        if self.hi <= 0.0 {
            return DD::from_f64(f64::NAN);
        }
        let y = DD::from_f64(self.hi.ln());
        // one Newton step on exp(y) = x doubles the correct digits
        y + self * (-y).exp() - DD::ONE
    }

    /// `ln(1 + self)` for `self >= 0`.
    pub fn ln_1p(self) -> DD {
        if self.hi < 1e-10 {
            // series, accurate where 1 + x would lose the low digits of x
            let mut term = self;
            let mut s = self;
            for n in 2..=6 {
                term = -(term * self);
                s = s + term / DD::from_f64(n as f64);
            }
            s
        } else {
            (DD::ONE + self).ln()
        }
    }

    pub fn max(self, other: DD) -> DD {
        if other > self {
            other
        } else {
            self
        }
    }

    pub fn softplus(self) -> DD {
        if self.hi > 0.0 {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }

    pub fn log_sigmoid(self) -> DD {
        -(-self).softplus()
    }
}

pub fn log_sum_exp(xs: &[DD]) -> DD {
    let m = xs.iter().copied().fold(DD::from_f64(f64::NEG_INFINITY), DD::max);
    let s = xs.iter().fold(DD::ZERO, |acc, &x| acc + (x - m).exp());
    m + s.ln()
}

impl From<f64> for DD {
    fn from(x: f64) -> Self {
        DD::from_f64(x)
    }
}

impl Neg for DD {
    type Output = DD;
    fn neg(self) -> DD {
        DD { hi: -self.hi, lo: -self.lo }
    }
}

impl Add for DD {
    type Output = DD;
    fn add(self, b: DD) -> DD {
        if !self.hi.is_finite() || !b.hi.is_finite() {
            return DD::from_f64(self.hi + b.hi);
        }
        let (s1, s2) = two_sum(self.hi, b.hi);
        let (t1, t2) = two_sum(self.lo, b.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        DD::renorm(s1, s2 + t2)
    }
}

impl Sub for DD {
    type Output = DD;
    fn sub(self, b: DD) -> DD {
        self + (-b)
    }
}

impl Mul for DD {
    type Output = DD;
    fn mul(self, b: DD) -> DD {
        let (p, e) = two_prod(self.hi, b.hi);
        if !p.is_finite() {
            return DD::from_f64(p);
        }
        DD::renorm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for DD {
    type Output = DD;
    fn div(self, b: DD) -> DD {
        let q1 = self.hi / b.hi;
        if !q1.is_finite() {
            return DD::from_f64(q1);
        }
        let r = self - b * DD::from_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * DD::from_f64(q2);
        let q3 = r.hi / b.hi;
        let (q1, q2) = quick_two_sum(q1, q2);
        DD::from_pair(q1, q2) + DD::from_f64(q3)
    }
}

impl DD {
    fn from_pair(hi: f64, lo: f64) -> DD {
        DD { hi, lo }
    }
}
