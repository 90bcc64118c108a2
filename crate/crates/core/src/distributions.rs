//! Gaussian and location-scale Student-t distributions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{digamma_unchecked, ln_beta_unchecked};

/// Lower bound applied to every standard deviation and scale.
pub const SIGMA_FLOOR: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// The deterministic generator used for every random draw in the crate.
pub type DetRng = ChaCha8Rng;

/// Generator for a top-level seed.
pub fn rng_from_seed(seed: u64) -> DetRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent sub-stream `stream` of the generator for `seed`.
///
/// Streams of the same seed never overlap, so per-pass or per-worker
/// generators can be split off without coordinating draw order.
pub fn split_rng(seed: u64, stream: u64) -> DetRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn floor_sigma(func: &'static str, sigma: f64) -> Result<f64> {
    if sigma.is_finite() && sigma >= 0.0 {
        Ok(sigma.max(SIGMA_FLOOR))
    } else {
        Err(Error::domain(func, format!("sigma must be finite and non-negative, got {sigma}")))
    }
}

fn check_nu(func: &'static str, nu: f64) -> Result<()> {
    if nu > 2.0 && !nu.is_nan() {
        Ok(())
    } else {
        Err(Error::domain(func, format!("degrees of freedom must exceed 2, got {nu}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    mu: f64,
    sigma: f64,
}

impl Gaussian {
    /// Builds N(mu, sigma²); sigma below [`SIGMA_FLOOR`] is raised to it.
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::domain("Gaussian::new", format!("mean must be finite, got {mu}")));
        }
        Ok(Self {
            mu,
            sigma: floor_sigma("Gaussian::new", sigma)?,
        })
    }

    pub fn standard() -> Self {
        Self { mu: 0.0, sigma: 1.0 }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn log_pdf(&self, y: f64) -> f64 {
        let z = (y - self.mu) / self.sigma;
        -HALF_LN_2PI - self.sigma.ln() - 0.5 * z * z
    }

    pub fn entropy(&self) -> f64 {
        0.5 + HALF_LN_2PI + self.sigma.ln()
    }

    /// Draws μ + σ·z using exactly one standard-normal draw from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mu + self.sigma * z
    }
}

/// Location-scale Student-t with `nu > 2` degrees of freedom.
///
/// `sigma` is the scale parameter of the density, not the standard deviation;
/// see [`std_from_scale`] for the conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentT {
    nu: f64,
    mu: f64,
    sigma: f64,
}

impl StudentT {
    pub fn new(nu: f64, mu: f64, sigma: f64) -> Result<Self> {
        check_nu("StudentT::new", nu)?;
        if !mu.is_finite() {
            return Err(Error::domain("StudentT::new", format!("location must be finite, got {mu}")));
        }
        Ok(Self {
            nu,
            mu,
            sigma: floor_sigma("StudentT::new", sigma)?,
        })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn log_pdf(&self, y: f64) -> f64 {
        let nu = self.nu;
        let nu_s2 = nu * self.sigma * self.sigma;
        let d = y - self.mu;
        -ln_beta_unchecked(0.5, 0.5 * nu) - 0.5 * nu_s2.ln() - 0.5 * (nu + 1.0) * (d * d / nu_s2).ln_1p()
    }

    pub fn entropy(&self) -> f64 {
        entropy_unchecked(self.nu, self.sigma)
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma * self.nu / (self.nu - 2.0)
    }
}

/// Differential entropy of a location-scale t with scale `sigma`.
pub fn student_t_entropy(nu: f64, sigma: f64) -> Result<f64> {
    check_nu("student_t_entropy", nu)?;
    Ok(entropy_unchecked(nu, floor_sigma("student_t_entropy", sigma)?))
}

fn entropy_unchecked(nu: f64, sigma: f64) -> f64 {
    sigma.ln()
        + 0.5 * nu.ln()
        + ln_beta_unchecked(0.5 * nu, 0.5)
        + 0.5 * (nu + 1.0) * (digamma_unchecked(0.5 * (nu + 1.0)) - digamma_unchecked(0.5 * nu))
}

/// Standard deviation of a t with the given scale: `scale · √(ν/(ν−2))`.
pub fn std_from_scale(nu: f64, scale: f64) -> Result<f64> {
    check_nu("std_from_scale", nu)?;
    Ok(floor_sigma("std_from_scale", scale)? * (nu / (nu - 2.0)).sqrt())
}

/// Inverse of [`std_from_scale`]: `std · √((ν−2)/ν)`.
pub fn scale_from_std(nu: f64, std: f64) -> Result<f64> {
    check_nu("scale_from_std", nu)?;
    Ok(floor_sigma("scale_from_std", std)? * ((nu - 2.0) / nu).sqrt())
}

/// Fits a Gaussian to samples by moments, using the population (divisor n)
/// standard deviation.
pub fn fit_gaussian(samples: &[f64]) -> Result<Gaussian> {
    let (mu, sd) = population_moments(samples)?;
    Gaussian::new(mu, sd)
}

pub(crate) fn population_moments(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 samples to fit a Gaussian, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mu = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    Ok((mu, var.sqrt()))
}

/// One draw from `d`; see [`Gaussian::sample`].
pub fn sample_gaussian<R: Rng + ?Sized>(d: &Gaussian, rng: &mut R) -> f64 {
    d.sample(rng)
}
