//! Adam, the combined training objective, the epoch loop and evaluation.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::annotations::{label_distribution, LabelDistribution};
use crate::bayes_net::{
    predict_eval, BayesNet, Complexity, FeatureSequence, NetGrad, PredictiveDistribution, DEFAULT_LIKELIHOOD_SIGMA,
    DEFAULT_PASSES, DEFAULT_PRIOR_SIGMA,
};
use crate::corpus::Corpus;
use crate::distributions::{split_rng, DetRng, Gaussian, SIGMA_FLOOR};
use crate::error::{Error, Result};
use crate::losses::{ccc, ccc_loss_grad, LabelFrame, LossReport, LossVariant};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

const STREAM_INIT: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_EVAL_BASE: u64 = 1 << 32;

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::shape("adam_step", params.len(), grads.len()));
    }
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::shape("adam_step state", params.len(), state.m.len()));
    }
    if !(lr > 0.0) {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    state.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powf(state.t as f64);
    let c2 = 1.0 - ADAM_BETA2.powf(state.t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Which per-epoch loss picks the returned checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Train,
    Heldout,
}

impl std::str::FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Selection::Train),
            "heldout" => Ok(Selection::Heldout),
            other => Err(Error::invalid(format!("unknown selection `{other}` (expected train or heldout)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Windows per optimizer step.
    pub batch_size: usize,
    /// Sequences are cut into windows of this many frames.
    pub sequence_length: usize,
    pub epochs: usize,
    pub n_passes: usize,
    pub seed: u64,
    pub loss_variant: LossVariant,
    pub hidden: Vec<usize>,
    pub prior_sigma: f64,
    pub likelihood_sigma: f64,
    /// Share of sequences (taken from the end of the corpus) held out.
    pub heldout_fraction: f64,
    pub select_on: Selection,
    pub complexity: Complexity,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 5,
            sequence_length: 300,
            epochs: 100,
            n_passes: DEFAULT_PASSES,
            seed: 0,
            loss_variant: LossVariant::TKl,
            hidden: vec![64, 64],
            prior_sigma: DEFAULT_PRIOR_SIGMA,
            likelihood_sigma: DEFAULT_LIKELIHOOD_SIGMA,
            heldout_fraction: 2.0 / 9.0,
            select_on: Selection::Train,
            complexity: Complexity::ClosedForm,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("sequence_length", self.sequence_length),
            ("epochs", self.epochs),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if self.n_passes < 2 {
            return Err(Error::invalid("n_passes must be at least 2 to estimate a spread"));
        }
        if self.sequence_length < 2 {
            return Err(Error::invalid("sequence_length must be at least 2 frames"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        if !(self.prior_sigma > 0.0 && self.prior_sigma.is_finite()) {
            return Err(Error::invalid("prior_sigma must be positive"));
        }
        if !(self.likelihood_sigma > 0.0 && self.likelihood_sigma.is_finite()) {
            return Err(Error::invalid("likelihood_sigma must be positive"));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(Error::invalid("heldout_fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Layer widths for an input of dimension `d`.
    pub fn dims(&self, d: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(d);
        dims.extend_from_slice(&self.hidden);
        dims.push(1);
        dims
    }
}

/// Features with their label model, frames aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub features: FeatureSequence,
    pub labels: LabelDistribution,
}

impl LabeledSequence {
    pub fn new(features: FeatureSequence, labels: LabelDistribution) -> Result<Self> {
        if features.frames() != labels.len() {
            return Err(Error::shape("LabeledSequence", features.frames(), labels.len()));
        }
        Ok(Self { features, labels })
    }

    pub fn frames(&self) -> usize {
        self.labels.len()
    }
}

/// Label models for every sequence of a corpus.
pub fn labeled_sequences(corpus: &Corpus) -> Result<Vec<LabeledSequence>> {
    corpus
        .sequences
        .iter()
        .map(|s| LabeledSequence::new(s.features.clone(), label_distribution(&s.annotations)?))
        .collect()
}

/// Several windows stacked frame-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Array2<f64>,
    pub labels: LabelDistribution,
}

impl Batch {
    pub fn stack(parts: &[&LabeledSequence]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let views: Vec<_> = parts.iter().map(|p| p.features.features.view()).collect();
        let features = concatenate(Axis(0), &views).map_err(|e| Error::invalid(e.to_string()))?;
        let labels = LabelDistribution::concat(parts.iter().map(|p| &p.labels))?;
        Ok(Self { features, labels })
    }
}

/// Cuts every sequence into windows of at most `len` frames. A trailing
/// remainder shorter than two frames is dropped.
pub fn windows(seqs: &[LabeledSequence], len: usize) -> Result<Vec<LabeledSequence>> {
    let mut out = Vec::new();
    for seq in seqs {
        let t = seq.frames();
        let mut start = 0;
        while start < t {
            let end = (start + len).min(t);
            if end - start >= 2 {
                let f = seq.features.features.slice(s![start..end, ..]).to_owned();
                let labels = LabelDistribution::new(
                    seq.labels.nu,
                    seq.labels.m[start..end].to_vec(),
                    seq.labels.s[start..end].to_vec(),
                )?;
                out.push(LabeledSequence::new(FeatureSequence::new(f, seq.features.frame_period)?, labels)?);
            }
            start = end;
        }
    }
    Ok(out)
}

/// Settings of one evaluation of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub passes: usize,
    pub likelihood_sigma: f64,
    pub complexity_weight: f64,
    pub complexity: Complexity,
    pub variant: LossVariant,
}

/// `(1 − ccc) + elbo + mean KL` on one batch, with the gradient in the
/// flat layout of [`BayesNet::flat_params`] when `want_grad` is set.
///
/// All terms share one set of `passes` sampled weight draws: `μ̂` is the
/// per-frame mean of the pass outputs and `σ̂` their population spread.
pub fn batch_objective(
    net: &BayesNet,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    rng: &mut DetRng,
    want_grad: bool,
) -> Result<(LossReport, Option<NetGrad>)> {
    let x = &batch.features;
    let labels = &batch.labels;
    let frames = labels.len();
    if x.nrows() != frames {
        return Err(Error::shape("batch_objective", frames, x.nrows()));
    }
    if cfg.passes < 2 {
        return Err(Error::invalid("the objective needs at least 2 passes"));
    }
    let n = cfg.passes;
    let nf = n as f64;
    let step_seed = rng.next_u64();
    let mut passes = Vec::with_capacity(if want_grad { n } else { 0 });
    let mut outs = Array2::zeros((n, frames));
    let mut complexity = 0.0;
    for i in 0..n {
        let mut pass_rng = split_rng(step_seed, i as u64);
        let pass = net.sample_pass(&mut pass_rng);
        let ws: Vec<_> = pass.iter().map(|p| (&p.w, &p.b)).collect();
        let cache = net.forward_cached(&ws, x)?;
        outs.row_mut(i).assign(&cache.output);
        if cfg.complexity == Complexity::MonteCarlo {
            complexity += net.mc_complexity(&pass);
        }
        if want_grad {
            passes.push((pass, cache));
        }
    }
    let complexity = cfg.complexity_weight
        * match cfg.complexity {
            Complexity::ClosedForm => net.closed_form_kl(),
            Complexity::MonteCarlo => complexity / nf,
        };

    let mu_hat: Vec<f64> = outs.mean_axis(Axis(0)).expect("n >= 2").to_vec();
    let sd_raw: Vec<f64> = outs
        .axis_iter(Axis(1))
        .zip(&mu_hat)
        .map(|(col, mu)| (col.iter().map(|y| (y - mu) * (y - mu)).sum::<f64>() / nf).sqrt())
        .collect();

    if mu_hat.iter().chain(&sd_raw).any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            epoch: 0,
            detail: "non-finite network output".into(),
        });
    }

    let var_lik = cfg.likelihood_sigma * cfg.likelihood_sigma;
    let nll_const = cfg.likelihood_sigma.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut nll = 0.0;
    for row in outs.axis_iter(Axis(0)) {
        for (y, m) in row.iter().zip(&labels.m) {
            nll += (y - m) * (y - m) / (2.0 * var_lik) + nll_const;
        }
    }
    nll /= nf;

    let (ccc_term, g_ccc) = ccc_loss_grad(&labels.m, &mu_hat)?;
    let mut kl_sum = 0.0;
    let mut g_mu = vec![0.0; frames];
    let mut g_sd = vec![0.0; frames];
    for t in 0..frames {
        let frame = LabelFrame::new(labels.nu, labels.m[t], labels.s[t]);
        let pred = Gaussian::new(mu_hat[t], sd_raw[t])?;
        let (kl, g) = cfg.variant.train_kl(&frame, &pred)?;
        kl_sum += kl;
        g_mu[t] = g.d_mu / frames as f64;
        // Below the floor σ̂ no longer depends on the outputs.
        g_sd[t] = if sd_raw[t] > SIGMA_FLOOR { g.d_sigma / frames as f64 } else { 0.0 };
    }
    let report = LossReport::new(ccc_term, complexity + nll, kl_sum / frames as f64);
    if !want_grad {
        return Ok((report, None));
    }

    let mut grad = net.zero_grad();
    for (i, (pass, cache)) in passes.iter().enumerate() {
        let d_out: Array1<f64> = (0..frames)
            .map(|t| {
                let y = outs[[i, t]];
                let d_sd = if g_sd[t] != 0.0 { g_sd[t] * (y - mu_hat[t]) / (nf * sd_raw[t]) } else { 0.0 };
                (g_ccc[t] + g_mu[t]) / nf + d_sd + (y - labels.m[t]) / (nf * var_lik)
            })
            .collect();
        net.backward(pass, cache, &d_out, &mut grad);
        if cfg.complexity == Complexity::MonteCarlo {
            net.mc_complexity_grad(pass, cfg.complexity_weight / nf, &mut grad);
        }
    }
    if cfg.complexity == Complexity::ClosedForm {
        net.closed_form_kl_grad(cfg.complexity_weight, &mut grad);
    }
    Ok((report, Some(grad)))
}

/// Per-sequence evaluation numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub index: usize,
    pub frames: usize,
    pub ccc_m: f64,
    pub ccc_s: f64,
    pub kl_eval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Agreement of the mean-weight prediction with the mean label.
    pub ccc_m: f64,
    /// Agreement of the predicted spread with the annotator spread.
    pub ccc_s: f64,
    /// Mean per-frame divergence under the variant's own label model.
    pub kl_eval: f64,
    pub per_sequence: Vec<SequenceMetrics>,
}

/// Metrics for given predictions; `ccc_m`, `ccc_s` and `kl_eval` pool all
/// frames of all sequences.
pub fn evaluate_predictions(
    truths: &[&LabelDistribution],
    preds: &[PredictiveDistribution],
    variant: LossVariant,
) -> Result<MetricReport> {
    if truths.len() != preds.len() {
        return Err(Error::shape("evaluate_predictions", truths.len(), preds.len()));
    }
    if truths.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let mut per_sequence = Vec::with_capacity(truths.len());
    let mut kl_total = 0.0;
    let mut frames_total = 0usize;
    for (index, (truth, pred)) in truths.iter().zip(preds).enumerate() {
        if truth.len() != pred.len() {
            return Err(Error::shape("evaluate_predictions", truth.len(), pred.len()));
        }
        let mut kl = 0.0;
        for t in 0..truth.len() {
            let frame = LabelFrame::new(truth.nu, truth.m[t], truth.s[t]);
            kl += variant.eval_kl(&frame, &Gaussian::new(pred.mu_hat[t], pred.sigma_hat[t])?)?;
        }
        kl_total += kl;
        frames_total += truth.len();
        per_sequence.push(SequenceMetrics {
            index,
            frames: truth.len(),
            ccc_m: ccc(&truth.m, &pred.mu_hat)?,
            ccc_s: ccc(&truth.s, &pred.sigma_hat)?,
            kl_eval: kl / truth.len() as f64,
        });
    }
    let all_truth = LabelDistribution::concat(truths.iter().copied())?;
    let all_pred = PredictiveDistribution::concat(preds)?;
    Ok(MetricReport {
        ccc_m: ccc(&all_truth.m, &all_pred.mu_hat)?,
        ccc_s: ccc(&all_truth.s, &all_pred.sigma_hat)?,
        kl_eval: kl_total / frames_total as f64,
        per_sequence,
    })
}

/// Test-time predictions: mean-weight `μ̂`, spread of `n_passes` sampled
/// passes as `σ̂`. Sequence `i` draws from stream `i` of `eval_seed`.
pub fn predict_sequences(
    net: &BayesNet,
    seqs: &[LabeledSequence],
    n_passes: usize,
    eval_seed: u64,
) -> Result<Vec<PredictiveDistribution>> {
    seqs.iter()
        .enumerate()
        .map(|(i, s)| predict_eval(net, &s.features, n_passes, &mut split_rng(eval_seed, i as u64)))
        .collect()
}

pub fn evaluate(
    net: &BayesNet,
    seqs: &[LabeledSequence],
    n_passes: usize,
    variant: LossVariant,
    eval_seed: u64,
) -> Result<MetricReport> {
    let preds = predict_sequences(net, seqs, n_passes, eval_seed)?;
    let truths: Vec<_> = seqs.iter().map(|s| &s.labels).collect();
    evaluate_predictions(&truths, &preds, variant)
}

/// Per-frame `|m − μ̂|` and `|s − σ̂|`, pooled over sequences.
pub fn absolute_errors(seqs: &[LabeledSequence], preds: &[PredictiveDistribution]) -> (Vec<f64>, Vec<f64>) {
    let mut em = Vec::new();
    let mut es = Vec::new();
    for (seq, p) in seqs.iter().zip(preds) {
        em.extend(seq.labels.m.iter().zip(&p.mu_hat).map(|(a, b)| (a - b).abs()));
        es.extend(seq.labels.s.iter().zip(&p.sigma_hat).map(|(a, b)| (a - b).abs()));
    }
    (em, es)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossReport,
    pub heldout: Option<LossReport>,
    pub heldout_metrics: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters after the selected epoch.
    pub best: BayesNet,
    pub best_epoch: usize,
    pub last: BayesNet,
    pub history: Vec<EpochRecord>,
    pub train_set: Vec<LabeledSequence>,
    pub heldout_set: Vec<LabeledSequence>,
}

/// Splits off the last `round(fraction · N)` sequences, keeping at least
/// one for training.
pub fn split_heldout(seqs: Vec<LabeledSequence>, fraction: f64) -> (Vec<LabeledSequence>, Vec<LabeledSequence>) {
    let n = seqs.len();
    let k = ((fraction * n as f64).round() as usize).min(n.saturating_sub(1));
    let mut train = seqs;
    let held = train.split_off(n - k);
    (train, held)
}

/// Seed of the test-time draws after `epoch`; shared by every variant so
/// comparisons use common random numbers.
pub fn eval_seed(seed: u64, epoch: usize) -> u64 {
    let mut rng = split_rng(seed, STREAM_EVAL_BASE + epoch as u64);
    rng.next_u64()
}

fn at_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Divergence { detail, .. } => Error::Divergence { epoch, detail },
        other => other,
    }
}

/// Full training run on a corpus.
pub fn train(cfg: &TrainConfig, corpus: &Corpus) -> Result<TrainOutcome> {
    train_sequences(cfg, labeled_sequences(corpus)?)
}

pub fn train_sequences(cfg: &TrainConfig, seqs: Vec<LabeledSequence>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if seqs.is_empty() {
        return Err(Error::invalid("corpus has no sequences"));
    }
    let d = seqs[0].features.dim();
    if seqs.iter().any(|s| s.features.dim() != d) {
        return Err(Error::invalid("sequences disagree on feature dimension"));
    }
    let (train_set, heldout_set) = split_heldout(seqs, cfg.heldout_fraction);
    let train_windows = windows(&train_set, cfg.sequence_length)?;
    if train_windows.is_empty() {
        return Err(Error::invalid("training sequences are shorter than two frames"));
    }
    let heldout_batch = if heldout_set.is_empty() {
        None
    } else {
        Some(Batch::stack(&heldout_set.iter().collect::<Vec<_>>())?)
    };

    let mut init_rng = split_rng(cfg.seed, STREAM_INIT);
    let mut net = BayesNet::new(&cfg.dims(d), cfg.prior_sigma, &mut init_rng)?;
    let mut rng = split_rng(cfg.seed, STREAM_TRAIN);
    let mut adam = AdamState::new(2 * net.weight_count());
    let num_batches = train_windows.len().div_ceil(cfg.batch_size);
    let obj = ObjectiveConfig {
        passes: cfg.n_passes,
        likelihood_sigma: cfg.likelihood_sigma,
        complexity_weight: 1.0 / num_batches as f64,
        complexity: cfg.complexity,
        variant: cfg.loss_variant,
    };

    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, BayesNet)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = [0.0; 3];
        for chunk in order.chunks(cfg.batch_size) {
            let parts: Vec<_> = chunk.iter().map(|&i| &train_windows[i]).collect();
            let batch = Batch::stack(&parts)?;
            let (report, grad) = batch_objective(&net, &batch, &obj, &mut rng, true).map_err(|e| at_epoch(e, epoch))?;
            let grad = grad.expect("gradient requested");
            if !report.is_finite() || grad.0.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!(
                        "non-finite loss (ccc {}, bbb {}, kl {})",
                        report.ccc_term, report.bbb_term, report.kl_term
                    ),
                });
            }
            acc[0] += report.ccc_term;
            acc[1] += report.bbb_term;
            acc[2] += report.kl_term;
            let mut params = net.flat_params();
            adam_step(&mut params, &grad.0, &mut adam, cfg.learning_rate)?;
            net.set_flat_params(&params)?;
        }
        let nb = num_batches as f64;
        let train_report = LossReport::new(acc[0] / nb, acc[1] / nb, acc[2] / nb);

        let (heldout, heldout_metrics) = match &heldout_batch {
            Some(batch) => {
                let mut eval_rng = split_rng(eval_seed(cfg.seed, epoch), u64::MAX);
                let (rep, _) = batch_objective(&net, batch, &obj, &mut eval_rng, false).map_err(|e| at_epoch(e, epoch))?;
                if !rep.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        detail: "non-finite held-out loss".into(),
                    });
                }
                let metrics = evaluate(&net, &heldout_set, cfg.n_passes, cfg.loss_variant, eval_seed(cfg.seed, epoch))?;
                (Some(rep), Some(metrics))
            }
            None => (None, None),
        };

        let score = match (cfg.select_on, &heldout) {
            (Selection::Heldout, Some(h)) => h.total,
            _ => train_report.total,
        };
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, net.clone()));
        }
        history.push(EpochRecord {
            epoch,
            train: train_report,
            heldout,
            heldout_metrics,
        });
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: net,
        history,
        train_set,
        heldout_set,
    })
}

/// Loss trace as `epoch,split,ccc_term,bbb_term,kl_term,total` CSV text.
pub fn loss_trace_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,split,ccc_term,bbb_term,kl_term,total\n");
    let mut row = |epoch: usize, split: &str, r: &LossReport| {
        out.push_str(&format!(
            "{epoch},{split},{},{},{},{}\n",
            r.ccc_term, r.bbb_term, r.kl_term, r.total
        ));
    };
    for rec in history {
        row(rec.epoch, "train", &rec.train);
        if let Some(h) = &rec.heldout {
            row(rec.epoch, "heldout", h);
        }
    }
    out
}

/// One row of a parsed loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub split: String,
    pub report: LossReport,
}

/// Parses the output of [`loss_trace_csv`].
pub fn read_loss_trace(path: &std::path::Path) -> Result<Vec<TraceRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "epoch,split,ccc_term,bbb_term,kl_term,total")) => {}
        _ => return Err(perr(1, "expected header `epoch,split,ccc_term,bbb_term,kl_term,total`".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(perr(i + 1, format!("expected 6 fields, found {}", f.len())));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|e| perr(i + 1, format!("field {}: {e}", k + 1)));
        let epoch = f[0].parse().map_err(|e| perr(i + 1, format!("epoch: {e}")))?;
        let report = LossReport {
            ccc_term: num(2)?,
            bbb_term: num(3)?,
            kl_term: num(4)?,
            total: num(5)?,
        };
        rows.push(TraceRow {
            epoch,
            split: f[1].to_string(),
            report,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::rng_from_seed;
    use ndarray::Array2;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![0.5, -1.0];
        let mut st = AdamState::new(2);
        st.m = vec![0.2, -0.1];
        st.v = vec![0.04, 0.01];
        adam_step(&mut p, &[0.0, 0.0], &mut st, 1e-3).unwrap();
        assert!((st.m[0] - 0.18).abs() < 1e-15);
        assert!((st.v[0] - 0.04 * 0.999).abs() < 1e-15);
        // nonzero history still moves parameters; a fresh state does not
        let mut q = vec![0.5, -1.0];
        let mut fresh = AdamState::new(2);
        adam_step(&mut q, &[0.0, 0.0], &mut fresh, 1e-3).unwrap();
        assert_eq!(q, vec![0.5, -1.0]);
    }

    #[test]
    fn adam_constant_gradient_step_is_lr() {
        let lr = 1e-3;
        let mut p = vec![0.0, 0.0];
        let mut st = AdamState::new(2);
        let mut prev = p.clone();
        for _ in 0..2000 {
            prev.clone_from(&p);
            adam_step(&mut p, &[3.0, -0.02], &mut st, lr).unwrap();
        }
        // with bias correction m̂ = g and v̂ = g² exactly, so every step is
        // lr · g / (|g| + ε)
        let step0 = prev[0] - p[0];
        let step1 = prev[1] - p[1];
        assert!((step0 - lr * 3.0 / (3.0 + ADAM_EPS)).abs() < 1e-15);
        assert!((step1 + lr * 0.02 / (0.02 + ADAM_EPS)).abs() < 1e-12);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut st = AdamState::new(2);
        assert!(adam_step(&mut [0.0, 0.0], &[1.0], &mut st, 1e-3).is_err());
        assert!(adam_step(&mut [0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], &mut st, 1e-3).is_err());
    }

    fn toy_batch(frames: usize, seed: u64) -> Batch {
        let mut rng = rng_from_seed(seed);
        let x = Array2::from_shape_fn((frames, 3), |_| StandardNormal.sample(&mut rng));
        let m: Vec<f64> = x.rows().into_iter().map(|r| 0.3 * r[0] - 0.2 * r[1]).collect();
        let s: Vec<f64> = (0..frames).map(|t| 0.1 + 0.05 * (t as f64).sin().abs()).collect();
        Batch {
            features: x,
            labels: LabelDistribution::new(6.0, m, s).unwrap(),
        }
    }

    fn check_objective_grad(variant: LossVariant, complexity: Complexity) {
        let mut rng = rng_from_seed(3);
        let mut net = BayesNet::new(&[3, 4, 1], 1.0, &mut rng).unwrap();
        // wider posteriors keep σ̂ well away from the floor
        let mut p = net.flat_params();
        let half = p.len() / 2;
        for (i, v) in p.iter_mut().enumerate() {
            if i % 7 == 0 && i < half {
                *v += 0.3;
            }
        }
        net.set_flat_params(&p).unwrap();
        for l in &mut net.layers {
            l.rho_w.fill(-1.5);
            l.rho_b.fill(-1.5);
        }
        let batch = toy_batch(12, 9);
        let cfg = ObjectiveConfig {
            passes: 5,
            likelihood_sigma: 0.5,
            complexity_weight: 0.25,
            complexity,
            variant,
        };
        let value = |net: &BayesNet| {
            let mut r = rng_from_seed(77);
            batch_objective(net, &batch, &cfg, &mut r, false).unwrap().0.total
        };
        let mut r = rng_from_seed(77);
        let (_, grad) = batch_objective(&net, &batch, &cfg, &mut r, true).unwrap();
        let grad = grad.unwrap();
        let base = net.flat_params();
        for j in (0..base.len()).step_by(3) {
            let h = 1e-5 * base[j].abs().max(1.0);
            let mut plus = base.clone();
            plus[j] += h;
            let mut minus = base.clone();
            minus[j] -= h;
            let mut a = net.clone();
            a.set_flat_params(&plus).unwrap();
            let mut b = net.clone();
            b.set_flat_params(&minus).unwrap();
            let fd = (value(&a) - value(&b)) / (2.0 * h);
            let err = (fd - grad.0[j]).abs() / fd.abs().max(grad.0[j].abs()).max(1e-3);
            assert!(err < 1e-4, "param {j}: fd {fd} vs analytic {}", grad.0[j]);
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        check_objective_grad(LossVariant::TKl, Complexity::ClosedForm);
        check_objective_grad(LossVariant::GaussKl, Complexity::MonteCarlo);
        check_objective_grad(LossVariant::None, Complexity::ClosedForm);
    }

    #[test]
    fn objective_terms_add_up() {
        let mut rng = rng_from_seed(4);
        let net = BayesNet::new(&[3, 5, 1], 1.0, &mut rng).unwrap();
        let cfg = ObjectiveConfig {
            passes: 4,
            likelihood_sigma: 0.1,
            complexity_weight: 0.5,
            complexity: Complexity::ClosedForm,
            variant: LossVariant::TKl,
        };
        let (rep, _) = batch_objective(&net, &toy_batch(20, 1), &cfg, &mut rng, false).unwrap();
        assert_eq!(rep.total, rep.ccc_term + rep.bbb_term + rep.kl_term);
    }

    #[test]
    fn oracle_predictions_score_perfect_mean_agreement() {
        let truth = LabelDistribution::new(6.0, vec![0.1, 0.4, -0.2, 0.3], vec![0.2, 0.1, 0.3, 0.25]).unwrap();
        let pred = PredictiveDistribution::new(truth.m.clone(), vec![0.2; 4], 30).unwrap();
        let rep = evaluate_predictions(&[&truth], &[pred], LossVariant::TKl).unwrap();
        assert!((rep.ccc_m - 1.0).abs() < 1e-12);
        // constant σ̂ against varying s: zero covariance, no NaN
        assert_eq!(rep.ccc_s, 0.0);
        assert!(rep.kl_eval.is_finite());
    }

    #[test]
    fn heldout_split_takes_the_tail() {
        let mk = |v: f64| {
            LabeledSequence::new(
                FeatureSequence::new(Array2::from_elem((3, 1), v), 0.04).unwrap(),
                LabelDistribution::new(3.0, vec![v; 3], vec![0.1; 3]).unwrap(),
            )
            .unwrap()
        };
        let seqs: Vec<_> = (0..9).map(|i| mk(i as f64 / 10.0)).collect();
        let (tr, ho) = split_heldout(seqs, 2.0 / 9.0);
        assert_eq!((tr.len(), ho.len()), (7, 2));
        assert_eq!(ho[0].labels.m[0], 0.7);
        let (tr, ho) = split_heldout(vec![mk(0.0)], 0.5);
        assert_eq!((tr.len(), ho.len()), (1, 0));
    }

    #[test]
    fn windows_cover_sequences() {
        let seq = LabeledSequence::new(
            FeatureSequence::new(Array2::from_shape_fn((7, 2), |(t, j)| (t * 2 + j) as f64), 0.04).unwrap(),
            LabelDistribution::new(4.0, (0..7).map(|t| t as f64 / 10.0).collect(), vec![0.1; 7]).unwrap(),
        )
        .unwrap();
        let w = windows(std::slice::from_ref(&seq), 3).unwrap();
        // 3 + 3, trailing single frame dropped
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].features.features[[0, 0]], 6.0);
        assert_eq!(w[1].labels.m, vec![0.3, 0.4, 0.5]);
        assert_eq!(windows(&[seq], 300).unwrap()[0].frames(), 7);
    }

    #[test]
    fn loss_trace_round_trips() {
        let rec = EpochRecord {
            epoch: 1,
            train: LossReport::new(0.5, 1234.000001, 0.1 + 0.2),
            heldout: Some(LossReport::new(0.25, -3.0, 1e-17)),
            heldout_metrics: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        std::fs::write(&path, loss_trace_csv(std::slice::from_ref(&rec))).unwrap();
        let rows = read_loss_trace(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].report, rec.train);
        assert_eq!(rows[1].report, rec.heldout.unwrap());
        assert_eq!(rows[1].split, "heldout");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(TrainConfig::default().dims(8), vec![8, 64, 64, 1]);
    }
}
