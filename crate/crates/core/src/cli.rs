//! Command-line verbs: `sweep`, `gen-data`, `train`, `eval`, `compare`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::read_config;
use crate::corpus::{read_corpus, synth_corpus, write_corpus, CorpusSpec, Manifest};
use crate::error::{Error, Result};
use crate::losses::LossVariant;
use crate::stats::welch_t_test;
use crate::sweep::{run_sweep, sweep_csv, SweepSpec, SweepVariant};
use crate::training::{
    absolute_errors, eval_seed, evaluate_predictions, labeled_sequences, loss_trace_csv, predict_sequences,
    split_heldout, train_sequences, EpochRecord, LabeledSequence, MetricReport, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "tlu", version, about = "Student-t label-uncertainty losses and training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate the t and Gaussian divergences over a range of label spreads.
    Sweep(SweepArgs),
    /// Generate a synthetic annotation corpus.
    GenData(GenDataArgs),
    /// Train a model and write its checkpoint and loss trace.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Train two loss variants over several seeds and test the difference.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    TKl,
    GaussKl,
    Both,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub sigma_hat: f64,
    #[arg(long, default_value_t = 6.0)]
    pub nu: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub mu_delta: f64,
    #[arg(long, default_value_t = 0.05)]
    pub lo: f64,
    #[arg(long, default_value_t = 2.0)]
    pub hi: f64,
    #[arg(long, default_value_t = 0.005)]
    pub step: f64,
    #[arg(long, value_enum, default_value_t = VariantArg::Both)]
    pub variant: VariantArg,
    /// Accepted for interface uniformity; the sweep draws nothing at random.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Arousal,
    Valence,
    Custom,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_enum, default_value_t = PresetArg::Arousal)]
    pub preset: PresetArg,
    #[arg(long)]
    pub sequences: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub annotators: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub target_mu_m: Option<f64>,
    #[arg(long)]
    pub target_mu_s: Option<f64>,
    /// Fixed annotator spread multiplier instead of calibrating to the spread target.
    #[arg(long)]
    pub disagreement: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum SplitArg {
    All,
    Train,
    Heldout,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Heldout)]
    pub split: SplitArg,
    /// Stochastic passes for σ̂; defaults to the checkpoint's training value.
    #[arg(long)]
    pub n_passes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Baseline variant.
    #[arg(long, default_value = "gauss_kl")]
    pub a: String,
    /// Variant expected to improve on the baseline.
    #[arg(long, default_value = "t_kl")]
    pub b: String,
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    /// First seed; run `i` uses `seed + i`.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sweep(a) => cmd_sweep(&a),
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Compare(a) => cmd_compare(&a),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, &text)
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let spec = SweepSpec {
        sigma_hat: a.sigma_hat,
        nu: a.nu,
        mu_delta: a.mu_delta,
        lo: a.lo,
        hi: a.hi,
        step: a.step,
        variant: match a.variant {
            VariantArg::TKl => SweepVariant::TKl,
            VariantArg::GaussKl => SweepVariant::GaussKl,
            VariantArg::Both => SweepVariant::Both,
        },
    };
    let res = run_sweep(&spec)?;
    write_file(&a.out, &sweep_csv(&res))
}

pub fn gen_data_spec(a: &GenDataArgs) -> Result<CorpusSpec> {
    let mut spec = match a.preset {
        PresetArg::Arousal | PresetArg::Custom => CorpusSpec::arousal(a.seed),
        PresetArg::Valence => CorpusSpec::valence(a.seed),
    };
    if matches!(a.preset, PresetArg::Custom) {
        spec.dimension = "custom".into();
        if a.target_mu_m.is_none() || (a.target_mu_s.is_none() && a.disagreement.is_none()) {
            return Err(Error::invalid(
                "custom preset needs --target-mu-m and either --target-mu-s or --disagreement",
            ));
        }
    }
    if let Some(v) = a.sequences {
        spec.sequences = v;
    }
    if let Some(v) = a.frames {
        spec.frames = v;
    }
    if let Some(v) = a.annotators {
        spec.annotators = v;
    }
    if let Some(v) = a.feature_dim {
        spec.feature_dim = v;
    }
    if let Some(v) = a.target_mu_m {
        spec.target_mu_m = v;
    }
    if let Some(v) = a.target_mu_s {
        spec.target_mu_s = v;
    }
    spec.disagreement_scale = a.disagreement;
    spec.validate()?;
    Ok(spec)
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let spec = gen_data_spec(a)?;
    let synth = synth_corpus(&spec)?;
    let manifest = Manifest::for_synth(&spec, &synth);
    write_corpus(&a.out, &synth.corpus, &manifest)
}

fn load_sequences(dir: &Path) -> Result<Vec<LabeledSequence>> {
    let (corpus, _) = read_corpus(dir)?;
    labeled_sequences(&corpus)
}

/// Per-epoch record written next to the loss trace.
#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    best_epoch: usize,
    config_hash: &'a str,
    history: &'a [EpochRecord],
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = read_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let seqs = load_sequences(&a.corpus)?;
    let outcome = train_sequences(&cfg, seqs)?;
    let ck = Checkpoint::new(outcome.best, &cfg, outcome.best_epoch);
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    ck.save(&a.out.join("checkpoint.json"))?;
    write_file(&a.out.join("loss_trace.csv"), &loss_trace_csv(&outcome.history))?;
    write_json(
        &a.out.join("history.json"),
        &TrainSummary {
            best_epoch: outcome.best_epoch,
            config_hash: &ck.config_hash,
            history: &outcome.history,
        },
    )
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let seqs = load_sequences(&a.corpus)?;
    let seqs = match a.split {
        SplitArg::All => seqs,
        SplitArg::Train => split_heldout(seqs, ck.config.heldout_fraction).0,
        SplitArg::Heldout => {
            let (train, held) = split_heldout(seqs, ck.config.heldout_fraction);
            if held.is_empty() {
                train
            } else {
                held
            }
        }
    };
    let n = a.n_passes.unwrap_or(ck.n_passes);
    let preds = predict_sequences(&ck.net, &seqs, n, a.seed)?;
    let truths: Vec<_> = seqs.iter().map(|s| &s.labels).collect();
    let report = evaluate_predictions(&truths, &preds, ck.loss_variant)?;
    write_json(&a.out, &report)
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantRun {
    pub seed: u64,
    pub best_epoch: usize,
    pub metrics: MetricReport,
    /// Held-out `kl_eval` after every epoch.
    pub kl_eval_by_epoch: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub variant: LossVariant,
    pub kl_eval: Vec<f64>,
    pub ccc_m: Vec<f64>,
    pub ccc_s: Vec<f64>,
    pub mean_kl_eval: f64,
    pub mean_ccc_m: f64,
    pub mean_ccc_s: f64,
    pub runs: Vec<VariantRun>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PValues {
    /// Pooled per-frame `|m − μ̂|`.
    pub mean_abs_error: f64,
    /// Pooled per-frame `|s − σ̂|`.
    pub spread_abs_error: f64,
    /// Per-seed `kl_eval`.
    pub kl_eval: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub a: VariantSummary,
    pub b: VariantSummary,
    /// One-tailed test that `b`'s pooled spread errors are smaller than `a`'s.
    pub p_value: f64,
    pub p_values: PValues,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct RunErrors {
    m: Vec<f64>,
    s: Vec<f64>,
}

fn run_variant(
    base: &TrainConfig,
    variant: LossVariant,
    seeds: &[u64],
    seqs: &[LabeledSequence],
) -> Result<(VariantSummary, RunErrors)> {
    let mut runs = Vec::with_capacity(seeds.len());
    let mut errs = RunErrors { m: Vec::new(), s: Vec::new() };
    for &seed in seeds {
        let cfg = TrainConfig {
            seed,
            loss_variant: variant,
            ..base.clone()
        };
        let out = train_sequences(&cfg, seqs.to_vec())?;
        let eval_set = if out.heldout_set.is_empty() { &out.train_set } else { &out.heldout_set };
        // common seed for both variants
        let preds = predict_sequences(&out.best, eval_set, cfg.n_passes, eval_seed(seed, 0))?;
        let truths: Vec<_> = eval_set.iter().map(|s| &s.labels).collect();
        let metrics = evaluate_predictions(&truths, &preds, variant)?;
        let (em, es) = absolute_errors(eval_set, &preds);
        errs.m.extend(em);
        errs.s.extend(es);
        let kl_eval_by_epoch = out
            .history
            .iter()
            .filter_map(|r| r.heldout_metrics.as_ref().map(|m| m.kl_eval))
            .collect();
        runs.push(VariantRun {
            seed,
            best_epoch: out.best_epoch,
            metrics,
            kl_eval_by_epoch,
        });
    }
    let kl_eval: Vec<f64> = runs.iter().map(|r| r.metrics.kl_eval).collect();
    let ccc_m: Vec<f64> = runs.iter().map(|r| r.metrics.ccc_m).collect();
    let ccc_s: Vec<f64> = runs.iter().map(|r| r.metrics.ccc_s).collect();
    Ok((
        VariantSummary {
            variant,
            mean_kl_eval: mean(&kl_eval),
            mean_ccc_m: mean(&ccc_m),
            mean_ccc_s: mean(&ccc_s),
            kl_eval,
            ccc_m,
            ccc_s,
            runs,
        },
        errs,
    ))
}

/// Trains both variants on every seed and tests whether `b` improves on `a`.
pub fn compare(
    base: &TrainConfig,
    a: LossVariant,
    b: LossVariant,
    seeds: &[u64],
    seqs: &[LabeledSequence],
) -> Result<Comparison> {
    if seeds.len() < 2 {
        return Err(Error::invalid("compare needs at least 2 seeds"));
    }
    let (sa, ea) = run_variant(base, a, seeds, seqs)?;
    let (sb, eb) = run_variant(base, b, seeds, seqs)?;
    let spread = welch_t_test(&ea.s, &eb.s)?.p_value;
    let p_values = PValues {
        mean_abs_error: welch_t_test(&ea.m, &eb.m)?.p_value,
        spread_abs_error: spread,
        kl_eval: welch_t_test(&sa.kl_eval, &sb.kl_eval).map_or(f64::NAN, |t| t.p_value),
    };
    Ok(Comparison {
        seeds: seeds.to_vec(),
        a: sa,
        b: sb,
        p_value: spread,
        p_values,
    })
}

pub fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let cfg = read_config(&a.config)?;
    let va: LossVariant = a.a.parse()?;
    let vb: LossVariant = a.b.parse()?;
    let seeds: Vec<u64> = (0..a.seeds as u64).map(|i| a.seed.wrapping_add(i)).collect();
    let seqs = load_sequences(&a.corpus)?;
    let cmp = compare(&cfg, va, vb, &seeds, &seqs)?;
    write_json(&a.out, &cmp)
}
