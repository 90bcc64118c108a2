//! Welch's t-test and the Student-t tail probability it needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::ln_beta_unchecked;

const CF_TOLERANCE: f64 = 1e-15;
const CF_MAX_ITER: usize = 10_000;

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::domain("regularized_incomplete_beta", format!("a={a}, b={b} must be positive")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain("regularized_incomplete_beta", format!("x={x} outside [0, 1]")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = a * x.ln() + b * (-x).ln_1p() - ln_beta_unchecked(a, b);
    // The fraction converges fastest for x < (a+1)/(a+b+2); use the symmetry
    // I_x(a,b) = 1 − I_{1−x}(b,a) on the other side.
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(ln_front.exp() * beta_cf(x, a, b)? / a)
    } else {
        Ok(1.0 - ln_front.exp() * beta_cf(1.0 - x, b, a)? / b)
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_TOLERANCE {
            return Ok(h);
        }
    }
    Err(Error::domain("regularized_incomplete_beta", "continued fraction did not converge"))
}

/// P(T > t) for a standard Student-t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) {
        return Err(Error::domain("student_t_sf", format!("df must be positive, got {df}")));
    }
    if t.is_nan() {
        return Err(Error::domain("student_t_sf", "t is NaN"));
    }
    if t.is_infinite() {
        return Ok(if t > 0.0 { 0.0 } else { 1.0 });
    }
    let x = df / (df + t * t);
    let tail = 0.5 * regularized_incomplete_beta(x, 0.5 * df, 0.5)?;
    Ok(if t > 0.0 { tail } else { 1.0 - tail })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// P(T ≥ t): small when the mean of the first sample exceeds the second.
    pub p_value: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// One-tailed Welch test of `mean(a) > mean(b)`.
///
/// Pass the errors of the model expected to be worse as `a`; a p-value at or
/// below 0.05 then means `b` is significantly better.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid(format!(
            "t-test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("t-test inputs must be finite"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (qa, qb) = (va / na, vb / nb);
    let se2 = qa + qb;
    if se2 <= 0.0 {
        return Err(Error::invalid("t-test inputs both have zero variance"));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    Ok(WelchTest {
        t,
        df,
        p_value: student_t_sf(t, df)?,
    })
}

/// p-value of [`welch_t_test`].
pub fn one_tailed_t_test(errors_a: &[f64], errors_b: &[f64]) -> Result<f64> {
    Ok(welch_t_test(errors_a, errors_b)?.p_value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn incomplete_beta_known_values() {
        // I_x(1, 1) = x; I_x(a, 1) = x^a
        assert!((regularized_incomplete_beta(0.3, 1.0, 1.0).unwrap() - 0.3).abs() < 1e-14);
        assert!((regularized_incomplete_beta(0.6, 2.5, 1.0).unwrap() - 0.6f64.powf(2.5)).abs() < 1e-14);
        // scipy.special.betainc(2, 3, 0.4) = 0.5248
        assert!((regularized_incomplete_beta(0.4, 2.0, 3.0).unwrap() - 0.5248).abs() < 1e-13);
        assert!(regularized_incomplete_beta(1.2, 2.0, 3.0).is_err());
    }

    #[test]
    fn t_tail_values() {
        assert!((student_t_sf(0.0, 7.0).unwrap() - 0.5).abs() < 1e-15);
        // t₁ is Cauchy: P(T > 1) = 1/4
        assert!((student_t_sf(1.0, 1.0).unwrap() - 0.25).abs() < 1e-14);
        // t₂: P(T > t) = ½ − t / (2√(t²+2))
        let t: f64 = 1.7;
        let exact = 0.5 - t / (2.0 * (t * t + 2.0).sqrt());
        assert!((student_t_sf(t, 2.0).unwrap() - exact).abs() < 1e-14);
        assert!((student_t_sf(-t, 2.0).unwrap() - (1.0 - exact)).abs() < 1e-14);
    }

    #[test]
    fn identical_samples_give_half() {
        let a = [0.3, 0.1, 0.7, 0.2];
        assert!((one_tailed_t_test(&a, &a).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn separated_samples_give_tiny_p() {
        let b = [0.10, 0.11, 0.09, 0.10, 0.12, 0.08];
        let a: Vec<f64> = b.iter().map(|v| v + 5.0).collect();
        assert!(one_tailed_t_test(&a, &b).unwrap() < 1e-6);
        assert!(one_tailed_t_test(&b, &a).unwrap() > 1.0 - 1e-6);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(one_tailed_t_test(&[1.0], &[1.0, 2.0]).is_err());
        assert!(one_tailed_t_test(&[1.0, 1.0], &[2.0, 2.0]).is_err());
    }
}
