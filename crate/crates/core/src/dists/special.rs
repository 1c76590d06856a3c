//! Special functions used by the skew families.
//!
//! `ln Γ`, `ψ` and `erfc` come from `statrs`. The log normal CDF and the
//! Student-t CDF are implemented here because both need behaviour `statrs`
//! does not offer: a tail branch that never underflows, and the derivative of
//! the Student-t CDF with respect to its degrees of freedom.

use std::f64::consts::{LN_2, PI};
use std::ops::{Add, Div, Mul, Neg, Sub};

pub use statrs::function::gamma::{digamma, ln_gamma};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Below this argument `ln Φ` switches to the continued fraction for the
/// Mills ratio.
const LOG_NDTR_TAIL: f64 = -8.0;

pub fn ln_std_normal_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x * FRAC_1_SQRT_2)
}

/// `x + 1/(x + 2/(x + 3/(x + ...)))` for `x > 0`, evaluated backwards.
/// Equals `φ(-x)/Φ(-x)`.
fn mills_cf(x: f64) -> f64 {
    let mut t = x;
    for n in (1..=60).rev() {
        t = x + n as f64 / t;
    }
    t
}

/// `ln Φ(x)`, finite for every finite `x`.
pub fn log_ndtr(x: f64) -> f64 {
    if x < LOG_NDTR_TAIL {
        ln_std_normal_pdf(x) - mills_cf(-x).ln()
    } else if x > 5.0 {
        (-0.5 * statrs::function::erf::erfc(x * FRAC_1_SQRT_2)).ln_1p()
    } else {
        std_normal_cdf(x).ln()
    }
}

/// Inverse Mills ratio `φ(x)/Φ(x)`, the derivative of `ln Φ(x)`.
pub fn inv_mills(x: f64) -> f64 {
    if x < LOG_NDTR_TAIL {
        mills_cf(-x)
    } else {
        (ln_std_normal_pdf(x) - log_ndtr(x)).exp()
    }
}

/// Forward-mode dual number: a value and its derivative along one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub const fn new(v: f64, d: f64) -> Self {
        Self { v, d }
    }

    pub const fn constant(v: f64) -> Self {
        Self { v, d: 0.0 }
    }

    pub fn ln(self) -> Self {
        Self::new(self.v.ln(), self.d / self.v)
    }

    pub fn ln_1p(self) -> Self {
        Self::new(self.v.ln_1p(), self.d / (1.0 + self.v))
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        Self::new(e, e * self.d)
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.v * k, self.d * k)
    }

    /// `ln B(self, 1/2)` carried with its derivative.
    pub fn ln_beta_half(self) -> Self {
        Self::new(ln_beta_half(self.v), (digamma(self.v) - digamma(self.v + 0.5)) * self.d)
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.v + o.v, self.d + o.d)
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    fn add(self, o: f64) -> Dual {
        Dual::new(self.v + o, self.d)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.v - o.v, self.d - o.d)
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    fn sub(self, o: f64) -> Dual {
        Dual::new(self.v - o, self.d)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.v * o.v, self.d * o.v + self.v * o.d)
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    fn mul(self, o: f64) -> Dual {
        self.scale(o)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let q = self.v / o.v;
        Dual::new(q, (self.d - q * o.d) / o.v)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.v, -self.d)
    }
}

/// Tail of the Stirling series, `ln Γ(x) - [(x - 1/2) ln x - x + ln √(2π)]`,
/// accurate to rounding for `x ≥ 12`.
fn stirling_tail(x: f64) -> f64 {
    let r = 1.0 / (x * x);
    (1.0 / 12.0
        - r * (1.0 / 360.0
            - r * (1.0 / 1260.0
                - r * (1.0 / 1680.0 - r * (1.0 / 1188.0 - r * (691.0 / 360_360.0 - r / 156.0))))))
        / x
}

/// `ln Γ(x) - ln Γ(x + b)` for `x > 0`, `b ≥ 0`, without forming either
/// log-gamma value. Taking the difference of two large `ln Γ` values loses
/// most of the digits once `x` is in the tens.
pub fn ln_gamma_diff(x: f64, b: f64) -> f64 {
    const SHIFT_TO: f64 = 12.0;
    let mut acc = 0.0;
    let mut x = x;
    while x < SHIFT_TO {
        acc += (b / x).ln_1p();
        x += 1.0;
    }
    acc - (x - 0.5) * (b / x).ln_1p() - b * (x + b).ln() + b + stirling_tail(x)
        - stirling_tail(x + b)
}

/// `ln B(s, 1/2)`.
pub fn ln_beta_half(s: f64) -> f64 {
    0.5 * PI.ln() + ln_gamma_diff(s, 0.5)
}

const CF_EPS: f64 = f64::EPSILON;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 20_000;

/// Continued fraction for the regularized incomplete beta function
/// (modified Lentz), carried in dual arithmetic. Converges quickly for
/// `x < (a + 1) / (a + b + 2)`.
fn beta_cf(a: Dual, b: Dual, x: Dual) -> Dual {
    let one = Dual::constant(1.0);
    let guard = |t: Dual| {
        if t.v.abs() < CF_TINY {
            Dual::new(CF_TINY, t.d)
        } else {
            t
        }
    };
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = one;
    let mut d = guard(one - qab * x / qap);
    d = one / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let mf = m as f64;
        let m2 = 2.0 * mf;
        let aa = (b - mf) * x * mf / ((qam + m2) * (a + m2));
        d = guard(one + aa * d);
        c = guard(one + aa / c);
        d = one / d;
        h = h * d * c;
        let aa = -((a + mf) * (qab + mf) * x) / ((a + m2) * (qap + m2));
        d = guard(one + aa * d);
        c = guard(one + aa / c);
        d = one / d;
        let del = d * c;
        h = h * del;
        if (del.v - 1.0).abs() < CF_EPS && del.d.abs() <= CF_EPS * (1.0 + (h.d / h.v).abs()) {
            break;
        }
    }
    h
}

/// `ln I_x(a, b)` via the direct continued fraction; caller guarantees
/// the fast-convergence side. `ln_x` and `ln_1mx` are supplied separately
/// so callers can form them without cancellation. One of `a`, `b` is 1/2
/// and `ln_beta` is `ln B(a, b)`.
fn ln_beta_reg_direct(a: Dual, b: Dual, x: Dual, ln_x: Dual, ln_1mx: Dual, ln_beta: Dual) -> Dual {
    a * ln_x + b * ln_1mx - a.ln() - ln_beta + beta_cf(a, b, x).ln()
}

/// `ln T(x; df)` for the standard Student-t CDF, with the derivative taken
/// with respect to `df` carried in the dual part.
pub fn ln_student_t_cdf(x: f64, df: Dual) -> Dual {
    let x2 = x * x;
    let denom = df + x2;
    // u = df/(df+x²) and 1-u = x²/(df+x²), both formed without cancellation
    let u = df / denom;
    let one_minus_u = Dual::constant(x2) / denom;
    let a = df.scale(0.5);
    let b = Dual::constant(0.5);
    let ln_u = u.ln();
    let ln_1mu = if x2 > 0.0 {
        one_minus_u.ln()
    } else {
        Dual::constant(f64::NEG_INFINITY)
    };

    if x2 == 0.0 {
        return Dual::constant(-LN_2);
    }

    let ln_beta = a.ln_beta_half();
    let threshold = (a.v + 1.0) / (a.v + b.v + 2.0);
    if u.v < threshold {
        // I = I_u(a, b); T = I/2 for x < 0 and 1 - I/2 for x > 0.
        let ln_i = ln_beta_reg_direct(a, b, u, ln_u, ln_1mu, ln_beta);
        if x < 0.0 {
            ln_i - LN_2
        } else {
            (-(ln_i - LN_2).exp()).ln_1p()
        }
    } else {
        // I_u(a, b) = 1 - J with J = I_{1-u}(b, a).
        let ln_j = ln_beta_reg_direct(b, a, one_minus_u, ln_1mu, ln_u, ln_beta);
        let j = ln_j.exp();
        if x < 0.0 {
            (-j).ln_1p() - LN_2
        } else {
            j.ln_1p() - LN_2
        }
    }
}

/// `ln t(x; df)`, the standard Student-t log density.
pub fn ln_student_t_pdf(x: f64, df: f64) -> f64 {
    -ln_gamma_diff(0.5 * df, 0.5) - 0.5 * (df * PI).ln()
        - 0.5 * (df + 1.0) * (x * x / df).ln_1p()
}

/// Derivative of `ln t(x; df)` with respect to `df`.
pub fn d_ln_student_t_pdf_ddf(x: f64, df: f64) -> f64 {
    let x2 = x * x;
    0.5 * (digamma(0.5 * (df + 1.0)) - digamma(0.5 * df)) - 0.5 / df - 0.5 * (x2 / df).ln_1p()
        + 0.5 * (df + 1.0) * x2 / (df * (df + x2))
}
