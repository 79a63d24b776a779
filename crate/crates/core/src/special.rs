//! Special functions evaluated in the log domain.
//!
//! Log-gamma uses the Stirling series after an upward shift, the Student-t cdf
//! goes through the regularized incomplete beta function (Lentz continued
//! fraction) and the normal cdf through the regularized incomplete gamma
//! function with `a = 1/2`. Every routine has a log-domain variant so that far
//! tails never underflow.

use crate::error::{MvstError, Result};

pub(crate) const LN_2: f64 = std::f64::consts::LN_2;
pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

const STIRLING_SHIFT: f64 = 15.0;
const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;

// B_{2k} / (2k (2k - 1))
const STIRLING_COEFFS: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
    -3617.0 / 122_400.0,
];

fn stirling_tail(x: f64) -> f64 {
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut acc = 0.0;
    for c in STIRLING_COEFFS.iter().rev() {
        acc = acc * inv2 + c;
    }
    acc * inv
}

/// ln Γ(x) for x > 0 without domain checking.
pub(crate) fn ln_gamma(x: f64) -> f64 {
    if x >= STIRLING_SHIFT {
        return (x - 0.5) * x.ln() - x + LN_SQRT_2PI + stirling_tail(x);
    }
    let mut shifted = x;
    let mut prod = 1.0;
    while shifted < STIRLING_SHIFT {
        prod *= shifted;
        shifted += 1.0;
    }
    ln_gamma(shifted) - prod.ln()
}

/// Natural log of the gamma function.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 {
        return Err(MvstError::Domain(format!("log_gamma requires x > 0, got {x}")));
    }
    Ok(ln_gamma(x))
}

/// ln Γ(x + d) − ln Γ(x), evaluated without subtracting two large logs.
pub fn ln_gamma_ratio(x: f64, d: f64) -> f64 {
    if d == 0.0 {
        return 0.0;
    }
    if x < STIRLING_SHIFT || x + d < STIRLING_SHIFT {
        let mut prod = 1.0;
        let mut y = x;
        while y < STIRLING_SHIFT || y + d < STIRLING_SHIFT {
            prod *= (y + d) / y;
            y += 1.0;
        }
        return ln_gamma_ratio(y, d) - prod.ln();
    }
    (x - 0.5) * (d / x).ln_1p() + d * (x + d).ln() - d + stirling_tail(x + d) - stirling_tail(x)
}

/// ln B(a, b).
pub(crate) fn ln_beta(a: f64, b: f64) -> f64 {
    let (big, small) = if a >= b { (a, b) } else { (b, a) };
    ln_gamma(small) - ln_gamma_ratio(big, small)
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let max_iter = 2000 + (20.0 * a.max(b).sqrt()) as usize;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=max_iter {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// ln I_x(a, b), the log of the regularized incomplete beta function.
///
/// `y` must equal `1 - x`; passing it separately keeps full precision when
/// `x` is close to one.
pub fn ln_beta_reg(a: f64, b: f64, x: f64, y: f64) -> f64 {
    ln_beta_reg_with(a, b, x, y, ln_beta(a, b))
}

// ln I_x(a, b) given ln B(a, b).
fn ln_beta_reg_with(a: f64, b: f64, x: f64, y: f64, ln_b: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if y <= 0.0 {
        return 0.0;
    }
    let ln_front = a * x.ln() + b * y.ln() - ln_b;
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front + beta_cf(a, b, x).ln() - a.ln()
    } else {
        let complement = (ln_front + beta_cf(b, a, y).ln() - b.ln()).exp();
        (-complement).ln_1p()
    }
}

/// ln P(T_df <= x) for a Student-t variable with possibly fractional df.
pub fn ln_student_t_cdf(x: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) {
        return Err(MvstError::Domain(format!("student_t_cdf requires df > 0, got {df}")));
    }
    if x.is_nan() {
        return Err(MvstError::Domain("student_t_cdf argument is NaN".into()));
    }
    Ok(ln_t_cdf(x, df))
}

pub(crate) fn ln_t_cdf(x: f64, df: f64) -> f64 {
    LnTCdf::new(df).eval(x)
}

/// Student-t log-cdf for a fixed df, with ln B(df/2, 1/2) computed once.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LnTCdf {
    df: f64,
    ln_b: f64,
}

impl LnTCdf {
    pub(crate) fn new(df: f64) -> Self {
        let ln_b = if df.is_finite() { ln_beta(0.5 * df, 0.5) } else { 0.0 };
        Self { df, ln_b }
    }

    pub(crate) fn eval(&self, x: f64) -> f64 {
        let df = self.df;
        if df == f64::INFINITY {
            return ln_norm_cdf(x);
        }
        if x == 0.0 {
            return -LN_2;
        }
        if x.is_infinite() {
            return if x > 0.0 { 0.0 } else { f64::NEG_INFINITY };
        }
        let x2 = x * x;
        let t = df / (df + x2);
        let u = x2 / (df + x2);
        let ln_tail = ln_beta_reg_with(0.5 * df, 0.5, t, u, self.ln_b) - LN_2;
        if x < 0.0 {
            ln_tail
        } else {
            (-ln_tail.exp()).ln_1p()
        }
    }
}

/// P(T_df <= x) for a Student-t variable with possibly fractional df.
pub fn student_t_cdf(x: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) {
        return Err(MvstError::Domain(format!("student_t_cdf requires df > 0, got {df}")));
    }
    if x.is_nan() {
        return Err(MvstError::Domain("student_t_cdf argument is NaN".into()));
    }
    if x == 0.0 {
        return Ok(0.5);
    }
    if x.is_infinite() {
        return Ok(if x > 0.0 { 1.0 } else { 0.0 });
    }
    if df == f64::INFINITY {
        return Ok(norm_cdf(x));
    }
    let x2 = x * x;
    let tail = 0.5 * ln_beta_reg(0.5 * df, 0.5, df / (df + x2), x2 / (df + x2)).exp();
    Ok(if x < 0.0 { tail } else { 1.0 - tail })
}

// ln P(a, x) by the power series, valid for x < a + 1.
fn ln_gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..1000 {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * CF_EPS {
            break;
        }
    }
    sum.ln() - x + a * x.ln() - ln_gamma(a)
}

// ln Q(a, x) by Lentz's continued fraction, valid for x >= a + 1.
fn ln_gamma_q_cf(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / CF_TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..1000 {
        let i = i as f64;
        let an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = b + an / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h.ln() - x + a * x.ln() - ln_gamma(a)
}

/// ln Q(a, x), the log of the upper regularized incomplete gamma function.
pub(crate) fn ln_gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        (-ln_gamma_p_series(a, x).exp()).ln_1p()
    } else {
        ln_gamma_q_cf(a, x)
    }
}

/// ln Φ(x) for the standard normal cdf.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x == 0.0 {
        return -LN_2;
    }
    let ln_tail = ln_gamma_q(0.5, 0.5 * x * x) - LN_2;
    if x < 0.0 {
        ln_tail
    } else {
        (-ln_tail.exp()).ln_1p()
    }
}

/// Φ(x) for the standard normal cdf.
pub fn norm_cdf(x: f64) -> f64 {
    if x < 0.0 {
        ln_norm_cdf(x).exp()
    } else {
        1.0 - 0.5 * ln_gamma_q(0.5, 0.5 * x * x).exp()
    }
}

/// ln φ(x) for the standard normal density.
pub fn ln_norm_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}
