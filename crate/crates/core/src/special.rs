//! Special functions on the positive reals.
//!
//! Only the positive half-line is supported: every caller works with
//! degrees of freedom above two, so no reflection formulas are needed.

use crate::error::{Error, Result};

/// Lanczos coefficients for g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn check_positive(func: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(func, format!("argument must be positive and finite, got {x}")))
    }
}

/// Natural log of the gamma function for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    check_positive("log_gamma", x)?;
    Ok(ln_gamma_unchecked(x))
}

pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // lnΓ(x) = lnΓ(x + 1) − ln x keeps the Lanczos sum away from its
        // poorly conditioned region.
        return ln_gamma_unchecked(x + 1.0) - x.ln();
    }
    let z = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    HALF_LN_2PI + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Digamma ψ(x) = d/dx lnΓ(x) for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    check_positive("digamma", x)?;
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 10.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // Bernoulli tail: B2k / (2k x^2k) for k = 1..6
    let tail = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
    shift + x.ln() - 0.5 / x - tail
}

/// ln B(i, j) = lnΓ(i) + lnΓ(j) − lnΓ(i + j).
pub fn log_beta(i: f64, j: f64) -> Result<f64> {
    check_positive("log_beta", i)?;
    check_positive("log_beta", j)?;
    Ok(ln_beta_unchecked(i, j))
}

pub(crate) fn ln_beta_unchecked(i: f64, j: f64) -> f64 {
    // Sum the two single-argument terms in a fixed order so that the result is
    // exactly symmetric in (i, j).
    let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
    ln_gamma_unchecked(lo) + ln_gamma_unchecked(hi) - ln_gamma_unchecked(lo + hi)
}

/// Smallest value `softplus` returns; keeps `ln σ` finite far in the left tail.
pub const SOFTPLUS_FLOOR: f64 = 1e-300;

/// ln(1 + eˣ), stable across the whole real line.
pub fn softplus(x: f64) -> f64 {
    let y = if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    };
    y.max(SOFTPLUS_FLOOR)
}

/// Logistic sigmoid, the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for positive `y`.
pub fn softplus_inv(y: f64) -> Result<f64> {
    check_positive("softplus_inv", y)?;
    Ok(if y > 30.0 { y + (-(-y).exp_m1()).ln() } else { y.exp_m1().ln() })
}
