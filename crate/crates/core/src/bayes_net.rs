//! Bayes-by-Backprop feed-forward regressor.
//!
//! Every weight and bias carries a Gaussian posterior `N(μ, softplus(ρ)²)`.
//! Hidden layers use tanh, the output layer is linear and one-dimensional.
//!
//! Draw order for one sampled pass: layers in order; within a layer the
//! weight matrix in row-major order, then the bias vector.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::annotations::{read_time_csv, write_time_csv, LabelDistribution};
use crate::distributions::{population_moments, split_rng, DetRng, SIGMA_FLOOR};
use crate::error::{Error, Result};
use crate::special::{sigmoid, softplus, softplus_inv};

pub const DEFAULT_PRIOR_SIGMA: f64 = 1.0;
pub const DEFAULT_INIT_MU_STD: f64 = 0.1;
pub const DEFAULT_INIT_RHO: f64 = -3.0;
pub const DEFAULT_LIKELIHOOD_SIGMA: f64 = 0.1;
pub const DEFAULT_PASSES: usize = 30;

/// Input features, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub features: Array2<f64>,
    pub frame_period: f64,
}

impl FeatureSequence {
    pub fn new(features: Array2<f64>, frame_period: f64) -> Result<Self> {
        if features.ncols() == 0 {
            return Err(Error::invalid("feature sequence needs at least one feature column"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature sequence has non-finite entries"));
        }
        Ok(Self { features, frame_period })
    }

    pub fn frames(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header: Vec<String> = (1..=self.dim()).map(|i| format!("f_{i}")).collect();
        write_time_csv(path, &header, &self.features, self.frame_period)
    }

    pub fn read_csv(path: &Path, frame_period: f64) -> Result<Self> {
        let features = read_time_csv(path, "f_", frame_period)?;
        Self::new(features, frame_period)
    }
}

/// Per-frame Gaussian summary of `n` stochastic outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mu_hat: Vec<f64>,
    pub sigma_hat: Vec<f64>,
    pub n: usize,
}

impl PredictiveDistribution {
    pub fn new(mu_hat: Vec<f64>, sigma_hat: Vec<f64>, n: usize) -> Result<Self> {
        if mu_hat.len() != sigma_hat.len() {
            return Err(Error::shape("PredictiveDistribution::new", mu_hat.len(), sigma_hat.len()));
        }
        if n < 2 {
            return Err(Error::invalid(format!("predictive distribution needs n >= 2 passes, got {n}")));
        }
        let sigma_hat = sigma_hat.into_iter().map(|s| s.max(SIGMA_FLOOR)).collect();
        Ok(Self { mu_hat, sigma_hat, n })
    }

    pub fn len(&self) -> usize {
        self.mu_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_hat.is_empty()
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a PredictiveDistribution>) -> Result<Self> {
        let (mut mu, mut sd, mut n) = (Vec::new(), Vec::new(), None);
        for p in parts {
            n.get_or_insert(p.n);
            mu.extend_from_slice(&p.mu_hat);
            sd.extend_from_slice(&p.sigma_hat);
        }
        Self::new(mu, sd, n.ok_or_else(|| Error::invalid("nothing to concatenate"))?)
    }
}

/// Gaussian posterior over one affine layer, weights stored input-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalLayer {
    pub mu_w: Array2<f64>,
    pub rho_w: Array2<f64>,
    pub mu_b: Array1<f64>,
    pub rho_b: Array1<f64>,
    pub prior_sigma: f64,
}

impl VariationalLayer {
    pub fn new(inputs: usize, outputs: usize, prior_sigma: f64, rng: &mut DetRng) -> Self {
        let mut draw = || DEFAULT_INIT_MU_STD * rng.sample::<f64, _>(StandardNormal);
        let mu_w = Array2::from_shape_simple_fn((inputs, outputs), &mut draw);
        let mu_b = Array1::from_shape_simple_fn(outputs, &mut draw);
        Self {
            mu_w,
            rho_w: Array2::from_elem((inputs, outputs), DEFAULT_INIT_RHO),
            mu_b,
            rho_b: Array1::from_elem(outputs, DEFAULT_INIT_RHO),
            prior_sigma,
        }
    }

    pub fn inputs(&self) -> usize {
        self.mu_w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.mu_w.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.mu_w.len() + self.mu_b.len()
    }

    fn check(&self) -> Result<()> {
        if self.mu_w.dim() != self.rho_w.dim() || self.mu_b.len() != self.rho_b.len() || self.mu_b.len() != self.outputs()
        {
            return Err(Error::shape(
                "VariationalLayer",
                format!("{:?}/{}", self.mu_w.dim(), self.outputs()),
                format!("{:?}/{}/{}", self.rho_w.dim(), self.mu_b.len(), self.rho_b.len()),
            ));
        }
        if !(self.prior_sigma > 0.0) {
            return Err(Error::invalid("prior sigma must be positive"));
        }
        Ok(())
    }
}

/// Weights of one sampled pass together with the standard-normal noise that
/// produced them.
#[derive(Debug, Clone)]
pub struct SampledLayer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub z_w: Array2<f64>,
    pub z_b: Array1<f64>,
}

/// w = μ + softplus(ρ) ⊙ z with z drawn elementwise from N(0, 1).
pub fn sample_weights(layer: &VariationalLayer, rng: &mut impl Rng) -> SampledLayer {
    let z_w = Array2::from_shape_simple_fn(layer.mu_w.dim(), || rng.sample::<f64, _>(StandardNormal));
    let z_b = Array1::from_shape_simple_fn(layer.mu_b.len(), || rng.sample::<f64, _>(StandardNormal));
    let mut w = layer.mu_w.clone();
    ndarray::Zip::from(&mut w)
        .and(&layer.rho_w)
        .and(&z_w)
        .for_each(|w, &r, &z| *w += softplus(r) * z);
    let mut b = layer.mu_b.clone();
    ndarray::Zip::from(&mut b)
        .and(&layer.rho_b)
        .and(&z_b)
        .for_each(|b, &r, &z| *b += softplus(r) * z);
    SampledLayer { w, b, z_w, z_b }
}

pub enum ForwardMode<'a> {
    Sampled(&'a mut DetRng),
    MeanWeights,
}

/// How the `ln q − ln P` part of the ELBO is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexity {
    /// Exact KL(q‖P), independent of the sampled weights.
    ClosedForm,
    /// Single-sample estimate per pass.
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboConfig {
    pub passes: usize,
    pub likelihood_sigma: f64,
    /// Multiplier on the complexity part (1 / batches per epoch in training).
    pub complexity_weight: f64,
    pub complexity: Complexity,
}

impl Default for ElboConfig {
    fn default() -> Self {
        Self {
            passes: DEFAULT_PASSES,
            likelihood_sigma: DEFAULT_LIKELIHOOD_SIGMA,
            complexity_weight: 1.0,
            complexity: Complexity::ClosedForm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    /// Pass-averaged, weighted complexity part.
    pub complexity: f64,
    /// Pass-averaged negative log-likelihood of the mean-label targets.
    pub nll: f64,
    pub total: f64,
}

/// Activations of one pass, kept for the backward sweep.
pub struct ForwardCache {
    /// Input followed by every hidden activation.
    acts: Vec<Array2<f64>>,
    pub output: Array1<f64>,
}

/// Gradient in the flat parameter layout of [`BayesNet::flat_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrad(pub Vec<f64>);

/// Stack of variational layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesNet {
    pub layers: Vec<VariationalLayer>,
}

impl BayesNet {
    /// Fresh network with layer widths `dims` (input first, output last = 1).
    pub fn new(dims: &[usize], prior_sigma: f64, rng: &mut DetRng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(format!("invalid layer widths {dims:?}")));
        }
        if *dims.last().unwrap() != 1 {
            return Err(Error::invalid("the output layer must have width 1"));
        }
        let layers = dims
            .windows(2)
            .map(|w| VariationalLayer::new(w[0], w[1], prior_sigma, rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<VariationalLayer>) -> Result<Self> {
        let net = Self { layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        for l in &self.layers {
            l.check()?;
        }
        for pair in self.layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::shape("BayesNet", pair[0].outputs(), pair[1].inputs()));
            }
        }
        if self.layers.last().unwrap().outputs() != 1 {
            return Err(Error::invalid("the output layer must have width 1"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.outputs()));
        d
    }

    /// Number of weights and biases (each carries a μ and a ρ).
    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// All μ and ρ values: per layer `mu_w, mu_b, rho_w, rho_b`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.weight_count());
        for l in &self.layers {
            out.extend(l.mu_w.iter());
            out.extend(l.mu_b.iter());
            out.extend(l.rho_w.iter());
            out.extend(l.rho_b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != 2 * self.weight_count() {
            return Err(Error::shape("set_flat_params", 2 * self.weight_count(), flat.len()));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for v in l.mu_w.iter_mut().chain(l.mu_b.iter_mut()).chain(l.rho_w.iter_mut()).chain(l.rho_b.iter_mut()) {
                *v = it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn zero_grad(&self) -> NetGrad {
        NetGrad(vec![0.0; 2 * self.weight_count()])
    }

    /// Draws one full set of weights.
    pub fn sample_pass(&self, rng: &mut impl Rng) -> Vec<SampledLayer> {
        self.layers.iter().map(|l| sample_weights(l, rng)).collect()
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape("forward", self.input_dim(), x.ncols()));
        }
        Ok(())
    }

    /// Forward sweep with explicit weights, keeping activations.
    pub fn forward_cached(&self, weights: &[(&Array2<f64>, &Array1<f64>)], x: &Array2<f64>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let last = weights.len() - 1;
        let mut acts = Vec::with_capacity(weights.len());
        let mut h = x.to_owned();
        for (k, (w, b)) in weights.iter().enumerate() {
            let mut a = h.dot(*w);
            a += *b;
            if k < last {
                a.mapv_inplace(f64::tanh);
            }
            acts.push(std::mem::replace(&mut h, a));
        }
        let output = h.index_axis_move(Axis(1), 0);
        Ok(ForwardCache { acts, output })
    }

    /// Output trace for every frame of `x`.
    pub fn forward(&self, x: &FeatureSequence, mode: ForwardMode<'_>) -> Result<Vec<f64>> {
        self.forward_matrix(&x.features, mode)
    }

    pub fn forward_matrix(&self, x: &Array2<f64>, mode: ForwardMode<'_>) -> Result<Vec<f64>> {
        let cache = match mode {
            ForwardMode::MeanWeights => {
                let ws: Vec<_> = self.layers.iter().map(|l| (&l.mu_w, &l.mu_b)).collect();
                self.forward_cached(&ws, x)?
            }
            ForwardMode::Sampled(rng) => {
                let pass = self.sample_pass(rng);
                let ws: Vec<_> = pass.iter().map(|p| (&p.w, &p.b)).collect();
                self.forward_cached(&ws, x)?
            }
        };
        Ok(cache.output.to_vec())
    }

    /// Accumulates the reparameterised gradient of a loss with output
    /// gradient `d_out` into `grad`.
    pub fn backward(&self, pass: &[SampledLayer], cache: &ForwardCache, d_out: &Array1<f64>, grad: &mut NetGrad) {
        let mut delta = d_out.view().insert_axis(Axis(1)).to_owned();
        let offsets = self.layer_offsets();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &cache.acts[k];
            let d_w = input.t().dot(&delta);
            let d_b = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut back = delta.dot(&pass[k].w.t());
                ndarray::Zip::from(&mut back)
                    .and(&cache.acts[k])
                    .for_each(|d, &h| *d *= 1.0 - h * h);
                delta = back;
            }
            let off = offsets[k];
            let nw = layer.mu_w.len();
            let nb = layer.mu_b.len();
            let g = &mut grad.0;
            let (mu_w, rest) = g[off..off + 2 * (nw + nb)].split_at_mut(nw);
            let (mu_b, rest) = rest.split_at_mut(nb);
            let (rho_w, rho_b) = rest.split_at_mut(nw);
            for ((((gm, gr), &dw), &z), &r) in mu_w
                .iter_mut()
                .zip(rho_w.iter_mut())
                .zip(d_w.iter())
                .zip(pass[k].z_w.iter())
                .zip(layer.rho_w.iter())
            {
                *gm += dw;
                *gr += dw * z * sigmoid(r);
            }
            for ((((gm, gr), &db), &z), &r) in mu_b
                .iter_mut()
                .zip(rho_b.iter_mut())
                .zip(d_b.iter())
                .zip(pass[k].z_b.iter())
                .zip(layer.rho_b.iter())
            {
                *gm += db;
                *gr += db * z * sigmoid(r);
            }
        }
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            offs.push(acc);
            acc += 2 * l.param_count();
        }
        offs
    }

    /// Σ over weights of KL(N(μ, σ²) ‖ N(0, σ_p²)).
    pub fn closed_form_kl(&self) -> f64 {
        let mut acc = 0.0;
        for l in &self.layers {
            for (&m, &r) in l.mu_w.iter().chain(l.mu_b.iter()).zip(l.rho_w.iter().chain(l.rho_b.iter())) {
                acc += gaussian_kl_to_prior(m, softplus(r), l.prior_sigma);
            }
        }
        acc
    }

    /// Adds `weight · ∂(closed_form_kl)/∂θ` to `grad`.
    pub fn closed_form_kl_grad(&self, weight: f64, grad: &mut NetGrad) {
        let mut off = 0;
        for l in &self.layers {
            let n = l.param_count();
            let p2 = l.prior_sigma * l.prior_sigma;
            let mus = l.mu_w.iter().chain(l.mu_b.iter());
            let rhos = l.rho_w.iter().chain(l.rho_b.iter());
            for (j, (&m, &r)) in mus.zip(rhos).enumerate() {
                let s = softplus(r);
                grad.0[off + j] += weight * m / p2;
                grad.0[off + n + j] += weight * (-1.0 / s + s / p2) * sigmoid(r);
            }
            off += 2 * n;
        }
    }

    /// Single-sample `ln q(w|θ) − ln P(w)` for a sampled pass.
    pub fn mc_complexity(&self, pass: &[SampledLayer]) -> f64 {
        let mut acc = 0.0;
        for (l, p) in self.layers.iter().zip(pass) {
            let ws = p.w.iter().chain(p.b.iter());
            let zs = p.z_w.iter().chain(p.z_b.iter());
            let rhos = l.rho_w.iter().chain(l.rho_b.iter());
            for ((&w, &z), &r) in ws.zip(zs).zip(rhos) {
                let s = softplus(r);
                let ln_q = -0.5 * (2.0 * PI).ln() - s.ln() - 0.5 * z * z;
                let ln_p = -0.5 * (2.0 * PI).ln() - l.prior_sigma.ln() - 0.5 * w * w / (l.prior_sigma * l.prior_sigma);
                acc += ln_q - ln_p;
            }
        }
        acc
    }

    /// Adds `weight · ∂(mc_complexity)/∂θ` for a fixed noise draw to `grad`.
    pub fn mc_complexity_grad(&self, pass: &[SampledLayer], weight: f64, grad: &mut NetGrad) {
        let mut off = 0;
        for (l, p) in self.layers.iter().zip(pass) {
            let n = l.param_count();
            let p2 = l.prior_sigma * l.prior_sigma;
            let ws = p.w.iter().chain(p.b.iter());
            let zs = p.z_w.iter().chain(p.z_b.iter());
            let rhos = l.rho_w.iter().chain(l.rho_b.iter());
            for (j, ((&w, &z), &r)) in ws.zip(zs).zip(rhos).enumerate() {
                let s = softplus(r);
                // ln q depends on θ only through −ln σ once w − μ = σz is
                // substituted; −ln P(w) contributes w/σ_p² · ∂w/∂θ.
                let dw = w / p2;
                grad.0[off + j] += weight * dw;
                grad.0[off + n + j] += weight * (-1.0 / s + dw * z) * sigmoid(r);
            }
            off += 2 * n;
        }
    }
}

fn gaussian_kl_to_prior(mu: f64, sigma: f64, prior_sigma: f64) -> f64 {
    (prior_sigma / sigma).ln() + (sigma * sigma + mu * mu) / (2.0 * prior_sigma * prior_sigma) - 0.5
}

/// Closed-form KL between a scalar Gaussian posterior and an N(0, σ_p²) prior.
pub fn weight_kl(mu: f64, sigma: f64, prior_sigma: f64) -> f64 {
    gaussian_kl_to_prior(mu, sigma, prior_sigma)
}

/// Runs `n` sampled passes over `x` and returns every output trace
/// (`n × frames`). Pass `i` draws from stream `i` of a step seed taken from
/// `rng`.
pub fn sample_outputs(net: &BayesNet, x: &Array2<f64>, n: usize, rng: &mut DetRng) -> Result<Array2<f64>> {
    let step_seed = rng.next_u64();
    let mut out = Array2::zeros((n, x.nrows()));
    for i in 0..n {
        let mut pass_rng = split_rng(step_seed, i as u64);
        let pass = net.sample_pass(&mut pass_rng);
        let ws: Vec<_> = pass.iter().map(|p| (&p.w, &p.b)).collect();
        let cache = net.forward_cached(&ws, x)?;
        out.row_mut(i).assign(&cache.output);
    }
    Ok(out)
}

/// Per-frame Gaussian fitted to `n` stochastic passes; `mu_hat` is the
/// sample mean of the passes.
pub fn predict_stochastic(net: &BayesNet, x: &FeatureSequence, n: usize, rng: &mut DetRng) -> Result<PredictiveDistribution> {
    if n < 2 {
        return Err(Error::invalid(format!("stochastic prediction needs n >= 2 passes, got {n}")));
    }
    let outs = sample_outputs(net, &x.features, n, rng)?;
    summarize_passes(&outs)
}

pub(crate) fn summarize_passes(outs: &Array2<f64>) -> Result<PredictiveDistribution> {
    let n = outs.nrows();
    let mut mu = Vec::with_capacity(outs.ncols());
    let mut sd = Vec::with_capacity(outs.ncols());
    for col in outs.axis_iter(Axis(1)) {
        let (m, s) = population_moments(&col.to_vec())?;
        mu.push(m);
        sd.push(s);
    }
    PredictiveDistribution::new(mu, sd, n)
}

/// Test-time prediction: mean-weight output as μ̂, spread of `n` sampled
/// passes as σ̂.
pub fn predict_eval(net: &BayesNet, x: &FeatureSequence, n: usize, rng: &mut DetRng) -> Result<PredictiveDistribution> {
    let stochastic = predict_stochastic(net, x, n, rng)?;
    let mean = net.forward(x, ForwardMode::MeanWeights)?;
    PredictiveDistribution::new(mean, stochastic.sigma_hat, n)
}

fn nll(outputs: &Array1<f64>, targets: &[f64], sigma: f64) -> f64 {
    let c = sigma.ln() + 0.5 * (2.0 * PI).ln();
    let inv = 1.0 / (2.0 * sigma * sigma);
    outputs
        .iter()
        .zip(targets)
        .map(|(y, m)| (y - m) * (y - m) * inv + c)
        .sum()
}

/// Negative ELBO averaged over `cfg.passes` sampled weight sets, with a
/// Gaussian likelihood of the mean-label targets.
pub fn elbo(net: &BayesNet, x: &FeatureSequence, labels: &LabelDistribution, cfg: &ElboConfig, rng: &mut DetRng) -> Result<ElboTerms> {
    Ok(elbo_with_grad(net, &x.features, &labels.m, cfg, rng, None)?.0)
}

/// [`elbo`] on a raw feature matrix, optionally accumulating its gradient.
pub fn elbo_with_grad(
    net: &BayesNet,
    x: &Array2<f64>,
    targets: &[f64],
    cfg: &ElboConfig,
    rng: &mut DetRng,
    mut grad: Option<&mut NetGrad>,
) -> Result<(ElboTerms, Array2<f64>)> {
    if x.nrows() != targets.len() {
        return Err(Error::shape("elbo", x.nrows(), targets.len()));
    }
    if cfg.passes == 0 {
        return Err(Error::invalid("elbo needs at least one pass"));
    }
    let n = cfg.passes as f64;
    let step_seed = rng.next_u64();
    let mut outs = Array2::zeros((cfg.passes, x.nrows()));
    let (mut complexity, mut total_nll) = (0.0, 0.0);
    let inv_var = 1.0 / (cfg.likelihood_sigma * cfg.likelihood_sigma);
    for i in 0..cfg.passes {
        let mut pass_rng = split_rng(step_seed, i as u64);
        let pass = net.sample_pass(&mut pass_rng);
        let ws: Vec<_> = pass.iter().map(|p| (&p.w, &p.b)).collect();
        let cache = net.forward_cached(&ws, x)?;
        total_nll += nll(&cache.output, targets, cfg.likelihood_sigma);
        if cfg.complexity == Complexity::MonteCarlo {
            complexity += net.mc_complexity(&pass);
        }
        if let Some(g) = grad.as_deref_mut() {
            let d_out: Array1<f64> = cache
                .output
                .iter()
                .zip(targets)
                .map(|(y, m)| (y - m) * inv_var / n)
                .collect();
            net.backward(&pass, &cache, &d_out, g);
            if cfg.complexity == Complexity::MonteCarlo {
                net.mc_complexity_grad(&pass, cfg.complexity_weight / n, g);
            }
        }
        outs.row_mut(i).assign(&cache.output);
    }
    let complexity = match cfg.complexity {
        Complexity::ClosedForm => {
            if let Some(g) = grad {
                net.closed_form_kl_grad(cfg.complexity_weight, g);
            }
            net.closed_form_kl()
        }
        Complexity::MonteCarlo => complexity / n,
    } * cfg.complexity_weight;
    let nll = total_nll / n;
    Ok((
        ElboTerms {
            complexity,
            nll,
            total: complexity + nll,
        },
        outs,
    ))
}

/// ρ that gives posterior standard deviation `sigma`.
pub fn rho_for_sigma(sigma: f64) -> Result<f64> {
    softplus_inv(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::rng_from_seed;
    use ndarray::array;

    fn scalar_net(mu_w: f64, rho_w: f64, mu_b: f64, rho_b: f64) -> BayesNet {
        BayesNet::from_layers(vec![VariationalLayer {
            mu_w: array![[mu_w]],
            rho_w: array![[rho_w]],
            mu_b: array![mu_b],
            rho_b: array![rho_b],
            prior_sigma: 1.0,
        }])
        .unwrap()
    }

    #[test]
    fn collapsed_posterior_samples_the_mean() {
        let mut rng = rng_from_seed(1);
        let mut net = BayesNet::new(&[3, 4, 1], 1.0, &mut rng).unwrap();
        for l in &mut net.layers {
            l.rho_w.fill(-40.0);
            l.rho_b.fill(-40.0);
        }
        let pass = net.sample_pass(&mut rng);
        for (l, p) in net.layers.iter().zip(&pass) {
            for (a, b) in l.mu_w.iter().zip(p.w.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let net = scalar_net(0.3, 0.0, 0.0, 0.0);
        let a = net.sample_pass(&mut rng_from_seed(9));
        let b = net.sample_pass(&mut rng_from_seed(9));
        assert_eq!(a[0].w, b[0].w);
        assert_eq!(a[0].b, b[0].b);
    }

    #[test]
    fn sampled_weight_mean() {
        let rho = rho_for_sigma(0.2).unwrap();
        let net = scalar_net(0.3, rho, 0.0, rho);
        let mut rng = rng_from_seed(4);
        let n = 10_000;
        let mean = (0..n).map(|_| net.sample_pass(&mut rng)[0].w[[0, 0]]).sum::<f64>() / n as f64;
        assert!((mean - 0.3).abs() < 0.01);
    }

    #[test]
    fn forward_examples() {
        let mut rng = rng_from_seed(2);
        let mut net = BayesNet::new(&[2, 5, 5, 1], 1.0, &mut rng).unwrap();
        for l in &mut net.layers {
            l.mu_b.fill(0.0);
        }
        let zeros = FeatureSequence::new(Array2::zeros((4, 2)), 0.04).unwrap();
        assert!(net.forward(&zeros, ForwardMode::MeanWeights).unwrap().iter().all(|&v| v == 0.0));

        let x = FeatureSequence::new(array![[0.3, -0.1], [1.0, 0.5]], 0.04).unwrap();
        let a = net.forward(&x, ForwardMode::MeanWeights).unwrap();
        let b = net.forward(&x, ForwardMode::MeanWeights).unwrap();
        assert_eq!(a, b);

        let lin = scalar_net(2.0, -40.0, 0.0, -40.0);
        let x = FeatureSequence::new(array![[0.1], [-0.2]], 0.04).unwrap();
        let y = lin.forward(&x, ForwardMode::MeanWeights).unwrap();
        assert!((y[0] - 0.2).abs() < 1e-15 && (y[1] + 0.4).abs() < 1e-15);

        let wrong = FeatureSequence::new(Array2::zeros((2, 3)), 0.04).unwrap();
        assert!(matches!(net.forward(&wrong, ForwardMode::MeanWeights), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn predict_stochastic_examples() {
        let mut rng = rng_from_seed(5);
        let mut net = BayesNet::new(&[2, 6, 1], 1.0, &mut rng).unwrap();
        let x = FeatureSequence::new(array![[0.2, 0.1], [-0.5, 0.9], [0.0, 0.3]], 0.04).unwrap();

        let p30 = predict_stochastic(&net, &x, 30, &mut rng_from_seed(7)).unwrap();
        let p31 = predict_stochastic(&net, &x, 31, &mut rng_from_seed(7)).unwrap();
        assert_ne!(p30.mu_hat, p31.mu_hat);
        assert!(predict_stochastic(&net, &x, 1, &mut rng).is_err());

        for l in &mut net.layers {
            l.rho_w.fill(-40.0);
            l.rho_b.fill(-40.0);
        }
        let p = predict_stochastic(&net, &x, 30, &mut rng).unwrap();
        let mean = net.forward(&x, ForwardMode::MeanWeights).unwrap();
        assert!(p.sigma_hat.iter().all(|&s| s == SIGMA_FLOOR));
        for (a, b) in p.mu_hat.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn predictive_spread_of_scalar_posterior() {
        let net = scalar_net(0.0, rho_for_sigma(0.5).unwrap(), 0.0, -40.0);
        let x = FeatureSequence::new(array![[1.0]], 0.04).unwrap();
        let p = predict_stochastic(&net, &x, 10_000, &mut rng_from_seed(8)).unwrap();
        assert!((p.sigma_hat[0] - 0.5).abs() < 0.02);
    }

    #[test]
    fn closed_form_weight_kl() {
        assert!(weight_kl(0.0, 1.0, 1.0).abs() < 1e-15);
        assert!((weight_kl(1.0, 1.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = rng_from_seed(3);
        let net = BayesNet::new(&[3, 4, 1], 1.0, &mut rng).unwrap();
        let flat = net.flat_params();
        assert_eq!(flat.len(), 2 * (3 * 4 + 4 + 4 + 1));
        let mut other = BayesNet::new(&[3, 4, 1], 1.0, &mut rng).unwrap();
        other.set_flat_params(&flat).unwrap();
        assert_eq!(other, net);
        assert!(other.set_flat_params(&flat[1..]).is_err());
    }

    #[test]
    fn elbo_gradient_matches_finite_differences() {
        // Same stream seed on every evaluation makes the estimate a smooth
        // function of θ.
        let mut rng = rng_from_seed(12);
        let net = BayesNet::new(&[2, 3, 1], 1.0, &mut rng).unwrap();
        let x = array![[0.3, -0.2], [0.8, 0.1], [-0.5, 0.4]];
        let targets = [0.1, 0.3, -0.2];
        for mode in [Complexity::ClosedForm, Complexity::MonteCarlo] {
            let cfg = ElboConfig {
                passes: 4,
                likelihood_sigma: 0.5,
                complexity_weight: 0.3,
                complexity: mode,
            };
            let mut g = net.zero_grad();
            elbo_with_grad(&net, &x, &targets, &cfg, &mut rng_from_seed(77), Some(&mut g)).unwrap();
            let base = net.flat_params();
            for j in 0..base.len() {
                let h = 1e-5 * base[j].abs().max(1.0);
                let eval = |v: f64| {
                    let mut p = base.clone();
                    p[j] = v;
                    let mut n2 = net.clone();
                    n2.set_flat_params(&p).unwrap();
                    elbo_with_grad(&n2, &x, &targets, &cfg, &mut rng_from_seed(77), None).unwrap().0.total
                };
                let fd = (eval(base[j] + h) - eval(base[j] - h)) / (2.0 * h);
                let err = (fd - g.0[j]).abs() / fd.abs().max(1e-3);
                assert!(err < 1e-4, "{mode:?} param {j}: fd {fd} vs {}", g.0[j]);
            }
        }
    }
}
