//! Agreement and divergence losses with closed-form gradients.
//!
//! The label side of every divergence is a per-frame [`LabelFrame`]
//! `(ν, m, s)`; the prediction side is a Gaussian `N(μ̂, σ̂²)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotations::LabelDistribution;
use crate::bayes_net::PredictiveDistribution;
use crate::distributions::{scale_from_std, student_t_entropy, Gaussian, SIGMA_FLOOR};
use crate::error::{Error, Result};

/// Sufficient statistics of the concordance correlation coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CccStats {
    pub r: f64,
    pub mu_m: f64,
    pub mu_mhat: f64,
    pub var_m: f64,
    pub var_mhat: f64,
    pub cov: f64,
}

impl CccStats {
    pub fn compute(m: &[f64], m_hat: &[f64]) -> Result<Self> {
        check_traces(m, m_hat)?;
        let n = m.len() as f64;
        let mu_m = trace_mean(m);
        let mu_mhat = trace_mean(m_hat);
        let (mut var_m, mut var_mhat, mut cov) = (0.0, 0.0, 0.0);
        for (a, b) in m.iter().zip(m_hat) {
            let (da, db) = (a - mu_m, b - mu_mhat);
            var_m += da * da;
            var_mhat += db * db;
            cov += da * db;
        }
        var_m /= n;
        var_mhat /= n;
        cov /= n;
        let denom = (var_m * var_mhat).sqrt();
        let r = if denom > 0.0 { (cov / denom).clamp(-1.0, 1.0) } else { 0.0 };
        Ok(Self {
            r,
            mu_m,
            mu_mhat,
            var_m,
            var_mhat,
            cov,
        })
    }

    pub fn ccc(&self) -> f64 {
        let dmu = self.mu_m - self.mu_mhat;
        let den = self.var_m + self.var_mhat + dmu * dmu;
        if den > 0.0 {
            (2.0 * self.cov / den).clamp(-1.0, 1.0)
        } else if dmu == 0.0 {
            1.0
        } else {
            0.0
        }
    }
}

/// Mean that is exact for constant traces, so their variance is exactly 0.
fn trace_mean(x: &[f64]) -> f64 {
    if x.iter().all(|&v| v == x[0]) {
        x[0]
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

fn check_traces(m: &[f64], m_hat: &[f64]) -> Result<()> {
    if m.len() != m_hat.len() {
        return Err(Error::shape("ccc", m.len(), m_hat.len()));
    }
    if m.len() < 2 {
        return Err(Error::invalid(format!("ccc needs at least 2 frames, got {}", m.len())));
    }
    Ok(())
}

/// Concordance correlation coefficient in covariance form.
pub fn ccc(m: &[f64], m_hat: &[f64]) -> Result<f64> {
    Ok(CccStats::compute(m, m_hat)?.ccc())
}

/// `1 − ccc(m, m̂)` and its gradient with respect to every `m̂_t`.
pub fn ccc_loss_grad(m: &[f64], m_hat: &[f64]) -> Result<(f64, Vec<f64>)> {
    let st = CccStats::compute(m, m_hat)?;
    let n = m.len() as f64;
    let dmu = st.mu_m - st.mu_mhat;
    let den = st.var_m + st.var_mhat + dmu * dmu;
    if den <= 0.0 {
        return Ok((1.0 - st.ccc(), vec![0.0; m.len()]));
    }
    let num = 2.0 * st.cov;
    let grad = m
        .iter()
        .zip(m_hat)
        .map(|(a, b)| {
            let d_num = 2.0 * (a - st.mu_m) / n;
            let d_den = 2.0 * (b - st.mu_mhat) / n - 2.0 * dmu / n;
            -(d_num * den - num * d_den) / (den * den)
        })
        .collect();
    Ok((1.0 - num / den, grad))
}

/// KL(N(μ, σ²) ‖ N(μ̂, σ̂²)).
pub fn kl_gauss_gauss(truth: &Gaussian, pred: &Gaussian) -> f64 {
    let (s, sh) = (truth.sigma(), pred.sigma());
    let d = truth.mu() - pred.mu();
    (sh / s).ln() + (s * s + d * d) / (2.0 * sh * sh) - 0.5
}

/// Cross-entropy of a Gaussian prediction under a label distribution with
/// mean `truth_mu` and second central moment `truth_var_slot`.
pub fn cross_entropy_t_gauss(truth_mu: f64, truth_var_slot: f64, pred: &Gaussian) -> f64 {
    let sh2 = pred.sigma() * pred.sigma();
    let d = truth_mu - pred.mu();
    0.5 * (2.0 * PI * sh2).ln() + (truth_var_slot + d * d) / (2.0 * sh2)
}

/// One frame of a Student-t label model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelFrame {
    pub nu: f64,
    pub m: f64,
    pub s: f64,
}

impl LabelFrame {
    pub fn new(nu: f64, m: f64, s: f64) -> Self {
        Self {
            nu,
            m,
            s: s.max(SIGMA_FLOOR),
        }
    }

    /// Standard deviation λ of the t label distribution: the annotation
    /// spread `s` taken through the inverse ν-scaling.
    pub fn label_std(&self) -> Result<f64> {
        scale_from_std(self.nu, self.s)
    }

    /// Scale parameter of the t density whose standard deviation is
    /// [`label_std`](Self::label_std).
    pub fn label_scale(&self) -> Result<f64> {
        scale_from_std(self.nu, self.label_std()?)
    }
}

/// KL(t ‖ N) between the t label model of one frame and a Gaussian prediction.
///
/// The annotation spread `s` is mapped through the inverse ν-scaling to the
/// label standard deviation λ = s·√((ν−2)/ν). λ² fills the second-moment slot
/// of the cross-entropy and the entropy is taken for the t density with that
/// standard deviation (scale λ·√((ν−2)/ν)), which makes the value an exact KL
/// divergence. For μ̂ = m the minimiser over `s` is σ̂·√(ν/(ν−2)).
pub fn kl_t_gauss(truth: &LabelFrame, pred: &Gaussian) -> Result<f64> {
    let lambda = truth.label_std()?;
    let scale = truth.label_scale()?;
    Ok(cross_entropy_t_gauss(truth.m, lambda * lambda, pred) - student_t_entropy(truth.nu, scale)?)
}

/// Partial derivatives with respect to the predicted mean and std.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredGrad {
    pub d_mu: f64,
    pub d_sigma: f64,
}

fn second_moment_grad(var_slot: f64, truth_mu: f64, pred: &Gaussian) -> PredGrad {
    let sh = pred.sigma();
    let d = truth_mu - pred.mu();
    PredGrad {
        d_mu: -d / (sh * sh),
        d_sigma: 1.0 / sh - (var_slot + d * d) / (sh * sh * sh),
    }
}

pub fn kl_gauss_gauss_grad(truth: &Gaussian, pred: &Gaussian) -> PredGrad {
    second_moment_grad(truth.sigma() * truth.sigma(), truth.mu(), pred)
}

pub fn kl_t_gauss_grad(truth: &LabelFrame, pred: &Gaussian) -> Result<PredGrad> {
    let lambda = truth.label_std()?;
    Ok(second_moment_grad(lambda * lambda, truth.m, pred))
}

/// Which divergence, if any, ties the predictive spread to the labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    TKl,
    GaussKl,
    None,
}

impl LossVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossVariant::TKl => "t_kl",
            LossVariant::GaussKl => "gauss_kl",
            LossVariant::None => "none",
        }
    }

    /// Divergence used for evaluation: the Gaussian one for `gauss_kl`, the
    /// t one otherwise.
    pub fn eval_kl(&self, truth: &LabelFrame, pred: &Gaussian) -> Result<f64> {
        match self {
            LossVariant::GaussKl => Ok(kl_gauss_gauss(&Gaussian::new(truth.m, truth.s)?, pred)),
            _ => kl_t_gauss(truth, pred),
        }
    }

    /// Training divergence and its gradient; zero for `none`.
    pub fn train_kl(&self, truth: &LabelFrame, pred: &Gaussian) -> Result<(f64, PredGrad)> {
        match self {
            LossVariant::TKl => Ok((kl_t_gauss(truth, pred)?, kl_t_gauss_grad(truth, pred)?)),
            LossVariant::GaussKl => {
                let g = Gaussian::new(truth.m, truth.s)?;
                Ok((kl_gauss_gauss(&g, pred), kl_gauss_gauss_grad(&g, pred)))
            }
            LossVariant::None => Ok((0.0, PredGrad { d_mu: 0.0, d_sigma: 0.0 })),
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t_kl" => Ok(LossVariant::TKl),
            "gauss_kl" => Ok(LossVariant::GaussKl),
            "none" => Ok(LossVariant::None),
            other => Err(Error::invalid(format!(
                "unknown loss variant `{other}` (expected t_kl, gauss_kl or none)"
            ))),
        }
    }
}

/// Decomposed training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ccc_term: f64,
    pub bbb_term: f64,
    pub kl_term: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(ccc_term: f64, bbb_term: f64, kl_term: f64) -> Self {
        Self {
            ccc_term,
            bbb_term,
            kl_term,
            total: ccc_term + bbb_term + kl_term,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.ccc_term.is_finite() && self.bbb_term.is_finite() && self.kl_term.is_finite() && self.total.is_finite()
    }
}

/// Mean per-frame divergence of `variant` over aligned frames.
pub fn mean_kl(truth: &LabelDistribution, pred: &PredictiveDistribution, variant: LossVariant) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::shape("mean_kl", truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(Error::invalid("no frames"));
    }
    let mut acc = 0.0;
    for t in 0..truth.len() {
        let frame = LabelFrame::new(truth.nu, truth.m[t], truth.s[t]);
        let g = Gaussian::new(pred.mu_hat[t], pred.sigma_hat[t])?;
        acc += variant.train_kl(&frame, &g)?.0;
    }
    Ok(acc / truth.len() as f64)
}

/// Combined objective `(1 − ccc) + elbo + mean KL`.
pub fn total_loss(
    m_hat: &[f64],
    elbo: f64,
    truth: &LabelDistribution,
    pred: &PredictiveDistribution,
    variant: LossVariant,
) -> Result<LossReport> {
    if m_hat.len() != truth.len() {
        return Err(Error::shape("total_loss", truth.len(), m_hat.len()));
    }
    let ccc_term = 1.0 - ccc(&truth.m, m_hat)?;
    let kl_term = mean_kl(truth, pred, variant)?;
    Ok(LossReport::new(ccc_term, elbo, kl_term))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(mu: f64, s: f64) -> Gaussian {
        Gaussian::new(mu, s).unwrap()
    }

    #[test]
    fn ccc_examples() {
        let m = [0.1, 0.5, -0.3, 0.8];
        assert!((ccc(&m, &m).unwrap() - 1.0).abs() < 1e-15);
        assert!((ccc(&[-1.0, 0.0, 1.0], &[1.0, 0.0, -1.0]).unwrap() + 1.0).abs() < 1e-15);
        let v = ccc(&[0.0, 1.0, 2.0, 3.0], &[0.5, 1.5, 2.5, 3.5]).unwrap();
        assert!((v - 2.5 / 2.75).abs() < 1e-15);
        assert!(ccc(&[1.0], &[1.0]).is_err());
        assert!(ccc(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn ccc_degenerate_traces() {
        assert_eq!(ccc(&[0.2, 0.2, 0.2], &[0.2, 0.2, 0.2]).unwrap(), 1.0);
        assert_eq!(ccc(&[0.2, 0.2, 0.2], &[0.1, 0.4, 0.3]).unwrap(), 0.0);
        assert_eq!(ccc(&[0.2, 0.2], &[0.5, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn kl_gauss_examples() {
        assert_eq!(kl_gauss_gauss(&g(0.3, 0.7), &g(0.3, 0.7)), 0.0);
        assert!((kl_gauss_gauss(&g(0.0, 1.0), &g(1.0, 1.0)) - 0.5).abs() < 1e-15);
        let truth = g(0.0, 0.5);
        let best = (1..400)
            .map(|k| 0.005 * k as f64)
            .min_by(|a, b| {
                kl_gauss_gauss(&truth, &g(0.0, *a)).total_cmp(&kl_gauss_gauss(&truth, &g(0.0, *b)))
            })
            .unwrap();
        assert!((best - 0.5).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_examples() {
        let v = cross_entropy_t_gauss(0.2, 1.0, &g(0.2, 1.0));
        assert!((v - 1.418_938_533_204_672_7).abs() < 1e-14);
        let a = cross_entropy_t_gauss(0.2, 0.3, &g(-0.4, 0.6));
        let b = cross_entropy_t_gauss(1.2, 0.3, &g(0.6, 0.6));
        assert!((a - b).abs() < 1e-14);
    }

    fn argmin_over_s(sigma_hat: f64, nu: f64, step: f64) -> f64 {
        let pred = g(0.0, sigma_hat);
        let mut best = (f64::INFINITY, 0.0);
        let mut s = step;
        while s <= 2.5 {
            let v = kl_t_gauss(&LabelFrame::new(nu, 0.0, s), &pred).unwrap();
            if v < best.0 {
                best = (v, s);
            }
            s += step;
        }
        best.1
    }

    #[test]
    fn kl_t_relaxed_minimum() {
        assert!((argmin_over_s(0.5, 6.0, 0.005) - 0.61).abs() <= 0.01);
        assert!((argmin_over_s(1.0, 6.0, 0.005) - 1.22).abs() <= 0.01);
        let closed = (30.0f64 / 28.0).sqrt();
        let dense = argmin_over_s(1.0, 30.0, 1e-4);
        assert!((dense - closed).abs() < 2e-4);
        assert!((dense - 1.0351).abs() <= 0.01);
    }

    #[test]
    fn kl_t_is_exact_divergence_by_quadrature() {
        // −∫ p_t ln p_N − H(t), integrated numerically for the t density the
        // loss describes.
        let frame = LabelFrame::new(6.0, 0.1, 0.4);
        let pred = g(-0.2, 0.3);
        let t = crate::distributions::StudentT::new(6.0, 0.1, frame.label_scale().unwrap()).unwrap();
        let (a, b, n) = (-40.0, 40.0, 400_000);
        let h = (b - a) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let y = a + i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let lp = t.log_pdf(y);
            acc += w * lp.exp() * (lp - pred.log_pdf(y));
        }
        let quad = acc * h / 3.0;
        assert!((quad - kl_t_gauss(&frame, &pred).unwrap()).abs() < 1e-5);
    }

    #[test]
    fn kl_t_rejects_low_nu() {
        assert!(kl_t_gauss(&LabelFrame::new(2.0, 0.0, 0.5), &g(0.0, 0.5)).is_err());
    }

    #[test]
    fn kl_t_gaussian_limit() {
        for &s in &[0.25, 0.5, 1.0, 2.0] {
            for &d in &[0.0, 0.5, -0.3] {
                for &sh in &[0.2, 0.5, 1.3] {
                    let kt = kl_t_gauss(&LabelFrame::new(1e6, d, s), &g(0.0, sh)).unwrap();
                    let kg = kl_gauss_gauss(&g(d, s), &g(0.0, sh));
                    assert!((kt - kg).abs() < 1e-3, "s={s} d={d} sh={sh}: {kt} vs {kg}");
                }
            }
        }
    }

    #[test]
    fn loss_report_bookkeeping() {
        let r = LossReport::new(0.25, 13.5, -0.125);
        assert_eq!(r.total, 0.25 + 13.5 + -0.125);
    }

    #[test]
    fn total_loss_concat_invariance() {
        let truth = LabelDistribution::new(6.0, vec![0.1, 0.3, -0.2, 0.05], vec![0.2, 0.1, 0.3, 0.25]).unwrap();
        let pred = PredictiveDistribution::new(vec![0.15, 0.2, -0.1, 0.0], vec![0.2, 0.15, 0.2, 0.3], 30).unwrap();
        let once = total_loss(&pred.mu_hat, 0.0, &truth, &pred, LossVariant::TKl).unwrap();
        let truth2 = LabelDistribution::concat([&truth, &truth]).unwrap();
        let pred2 = PredictiveDistribution::concat([&pred, &pred]).unwrap();
        let twice = total_loss(&pred2.mu_hat, 0.0, &truth2, &pred2, LossVariant::TKl).unwrap();
        assert!((once.ccc_term - twice.ccc_term).abs() < 1e-12);
        assert!((once.kl_term - twice.kl_term).abs() < 1e-12);

        let perfect = total_loss(&truth.m, 0.0, &truth, &pred, LossVariant::None).unwrap();
        assert!(perfect.ccc_term.abs() < 1e-15 && perfect.kl_term == 0.0);
        assert!(total_loss(&[0.0; 3], 0.0, &truth, &pred, LossVariant::TKl).is_err());
    }

    #[test]
    fn variant_parsing() {
        for v in [LossVariant::TKl, LossVariant::GaussKl, LossVariant::None] {
            assert_eq!(v.as_str().parse::<LossVariant>().unwrap(), v);
        }
        assert!("student".parse::<LossVariant>().is_err());
    }

    #[test]
    fn stationary_points_have_zero_gradient() {
        let gg = kl_gauss_gauss_grad(&g(0.3, 0.4), &g(0.3, 0.4));
        assert!(gg.d_mu.abs() < 1e-15 && gg.d_sigma.abs() < 1e-12);
        let frame = LabelFrame::new(6.0, 0.2, 0.5);
        let lambda = frame.label_std().unwrap();
        let sh = (lambda * lambda + 0.3f64.powi(2)).sqrt();
        let gt = kl_t_gauss_grad(&frame, &g(-0.1, sh)).unwrap();
        assert!(gt.d_sigma.abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn ccc_symmetric_and_bounded(
            x in proptest::collection::vec(-1.0f64..1.0, 2..40),
            seed in proptest::collection::vec(-1.0f64..1.0, 40),
        ) {
            let y: Vec<f64> = seed[..x.len()].to_vec();
            let a = ccc(&x, &y).unwrap();
            let b = ccc(&y, &x).unwrap();
            proptest::prop_assert!((a - b).abs() < 1e-12);
            proptest::prop_assert!((-1.0..=1.0).contains(&a));
        }
    }
}
