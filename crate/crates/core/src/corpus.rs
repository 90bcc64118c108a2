//! Synthetic annotation corpora calibrated to target label statistics.
//!
//! Each sequence follows a smooth latent trace: a sum of slow sinusoids
//! passed through tanh. Annotators add their own bias, a slow drift and
//! AR(1) noise with t₃ innovations, all modulated by a per-sequence
//! disagreement envelope. The annotator spread and the latent offset are
//! tuned by nested bisection until the corpus means of `m` and `s` hit
//! their targets. Features are a noisy tanh map of the latent trace and of
//! the envelope, shared across the corpus, so both the mean and the spread
//! are learnable.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::annotations::{label_distribution, AnnotationMatrix, DEFAULT_FRAME_PERIOD};
use crate::bayes_net::FeatureSequence;
use crate::distributions::{split_rng, DetRng};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
/// Largest reachable corpus error before generation is reported infeasible.
pub const CALIBRATION_TOLERANCE: f64 = 0.05;

const SINUSOIDS: usize = 4;
const AR_COEF: f64 = 0.9;
const ENVELOPE_GAIN: f64 = 0.7;
const FEATURE_NOISE: f64 = 0.1;
const MAX_SCALE: f64 = 8.0;
const MAX_OFFSET: f64 = 4.0;
const BISECTION_STEPS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub dimension: String,
    pub sequences: usize,
    pub frames: usize,
    pub annotators: usize,
    pub feature_dim: usize,
    pub target_mu_m: f64,
    pub target_mu_s: f64,
    /// Fixed annotator spread multiplier; when set, only the mean offset is
    /// calibrated and `target_mu_s` is not enforced.
    pub disagreement_scale: Option<f64>,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn arousal(seed: u64) -> Self {
        Self {
            dimension: "arousal".into(),
            sequences: 9,
            frames: 300,
            annotators: 6,
            feature_dim: 8,
            target_mu_m: 0.01,
            target_mu_s: 0.23,
            disagreement_scale: None,
            seed,
        }
    }

    pub fn valence(seed: u64) -> Self {
        Self {
            dimension: "valence".into(),
            target_mu_m: 0.11,
            target_mu_s: 0.14,
            ..Self::arousal(seed)
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "arousal" => Ok(Self::arousal(seed)),
            "valence" => Ok(Self::valence(seed)),
            other => Err(Error::invalid(format!("unknown preset `{other}` (expected arousal or valence)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.annotators < 3 {
            return Err(Error::invalid(format!(
                "{} annotators give nu = {0}, but the t label model needs nu > 2 (at least 3 annotators)",
                self.annotators
            )));
        }
        if self.sequences == 0 || self.frames < 2 || self.feature_dim == 0 {
            return Err(Error::invalid("need at least one sequence, two frames and one feature"));
        }
        if !(self.target_mu_m.abs() < 1.0) {
            return Err(Error::invalid(format!("target_mu_m must lie in (-1, 1), got {}", self.target_mu_m)));
        }
        if !(self.target_mu_s >= 0.0 && self.target_mu_s <= 1.0) {
            return Err(Error::invalid(format!(
                "target_mu_s must lie in [0, 1] for labels bounded in [-1, 1], got {}",
                self.target_mu_s
            )));
        }
        if let Some(d) = self.disagreement_scale {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::invalid(format!("disagreement scale must be non-negative, got {d}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub features: FeatureSequence,
    pub annotations: AnnotationMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub dimension: String,
    pub sequences: Vec<Sequence>,
}

/// Corpus-level means of the per-frame label mean and spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub mu_m: f64,
    pub mu_s: f64,
}

impl Corpus {
    pub fn stats(&self) -> Result<CorpusStats> {
        let (mut sm, mut ss, mut n) = (0.0, 0.0, 0usize);
        for seq in &self.sequences {
            let l = label_distribution(&seq.annotations)?;
            sm += l.m.iter().sum::<f64>();
            ss += l.s.iter().sum::<f64>();
            n += l.len();
        }
        if n == 0 {
            return Err(Error::invalid("empty corpus"));
        }
        Ok(CorpusStats {
            mu_m: sm / n as f64,
            mu_s: ss / n as f64,
        })
    }
}

/// Random ingredients of one sequence, fixed before calibration.
struct SeqDraws {
    latent: Vec<f64>,
    envelope_signal: Vec<f64>,
    /// deviation of each annotator, T×a, before the spread multiplier
    deviations: Array2<f64>,
}

fn slow_sum(rng: &mut DetRng, frames: usize, count: usize, f_lo: f64, f_hi: f64) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| (rng.random_range(0.3..1.0), rng.random_range(f_lo..f_hi), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let norm = comps.iter().map(|c| c.0 * c.0).sum::<f64>().sqrt() * std::f64::consts::FRAC_1_SQRT_2;
    (0..frames)
        .map(|t| {
            let time = t as f64 * DEFAULT_FRAME_PERIOD;
            comps.iter().map(|(a, f, p)| a * (2.0 * PI * f * time + p).sin()).sum::<f64>() / norm
        })
        .collect()
}

fn draw_sequence(rng: &mut DetRng, frames: usize, annotators: usize) -> SeqDraws {
    let latent = slow_sum(rng, frames, SINUSOIDS, 0.02, 0.4);
    let envelope_signal = slow_sum(rng, frames, 2, 0.01, 0.1);
    let innov = StudentT::new(3.0).expect("valid dof");
    // t₃ has variance 3
    let innov_scale = (1.0 - AR_COEF * AR_COEF).sqrt() / 3f64.sqrt();
    let mut deviations = Array2::zeros((frames, annotators));
    for i in 0..annotators {
        let z: f64 = StandardNormal.sample(rng);
        let bias = 0.4 * z;
        let drift_amp = rng.random_range(0.1..0.5);
        let drift_f = rng.random_range(0.01..0.08);
        let drift_p = rng.random_range(0.0..2.0 * PI);
        let mut e: f64 = StandardNormal.sample(rng);
        for t in 0..frames {
            e = AR_COEF * e + innov_scale * innov.sample(rng);
            let time = t as f64 * DEFAULT_FRAME_PERIOD;
            let drift = drift_amp * (2.0 * PI * drift_f * time + drift_p).sin();
            let env = (ENVELOPE_GAIN * envelope_signal[t]).exp();
            deviations[[t, i]] = env * (bias + drift + e);
        }
    }
    SeqDraws {
        latent,
        envelope_signal,
        deviations,
    }
}

fn latent_at(raw: f64, offset: f64) -> f64 {
    (1.2 * raw + offset).tanh()
}

fn annotate(d: &SeqDraws, scale: f64, offset: f64) -> Array2<f64> {
    let mut v = d.deviations.clone();
    for ((t, _), x) in v.indexed_iter_mut() {
        *x = (latent_at(d.latent[t], offset) + scale * *x).clamp(-1.0, 1.0);
    }
    v
}

/// Corpus means of m and s without building annotation matrices.
fn label_means(draws: &[SeqDraws], scale: f64, offset: f64) -> (f64, f64) {
    let (mut sm, mut ss, mut n) = (0.0, 0.0, 0usize);
    for d in draws {
        let v = annotate(d, scale, offset);
        let a = v.ncols() as f64;
        for row in v.rows() {
            let m = row.sum() / a;
            let var = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (a - 1.0);
            sm += m;
            ss += var.sqrt();
        }
        n += v.nrows();
    }
    (sm / n as f64, ss / n as f64)
}

fn bisect(mut lo: f64, mut hi: f64, target: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Calibrated generator output.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub stats: CorpusStats,
    pub scale: f64,
    pub offset: f64,
}

pub fn synth_corpus(spec: &CorpusSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let draws: Vec<SeqDraws> = (0..spec.sequences)
        .map(|j| draw_sequence(&mut split_rng(spec.seed, j as u64 + 1), spec.frames, spec.annotators))
        .collect();

    let scale_for = |offset: f64| match spec.disagreement_scale {
        Some(d) => d,
        None => bisect(0.0, MAX_SCALE, spec.target_mu_s, |sc| label_means(&draws, sc, offset).1),
    };
    let offset = bisect(-MAX_OFFSET, MAX_OFFSET, spec.target_mu_m, |off| {
        label_means(&draws, scale_for(off), off).0
    });
    let scale = scale_for(offset);

    let mut map_rng = split_rng(spec.seed, 0);
    let map: Array2<f64> = Array2::from_shape_fn((spec.feature_dim, 4), |_| StandardNormal.sample(&mut map_rng));
    let mut sequences = Vec::with_capacity(spec.sequences);
    for (j, d) in draws.iter().enumerate() {
        let annotations = AnnotationMatrix::new(annotate(d, scale, offset), DEFAULT_FRAME_PERIOD, spec.dimension.clone())?;
        let mut noise_rng = split_rng(spec.seed, (1 << 32) + j as u64);
        let features = Array2::from_shape_fn((spec.frames, spec.feature_dim), |(t, k)| {
            let l = latent_at(d.latent[t], offset);
            let basis = [l, l * l, d.envelope_signal[t], 1.0];
            let z: f64 = (0..4).map(|c| map[[k, c]] * basis[c]).sum();
            let eps: f64 = StandardNormal.sample(&mut noise_rng);
            z.tanh() + FEATURE_NOISE * eps
        });
        sequences.push(Sequence {
            features: FeatureSequence::new(features, DEFAULT_FRAME_PERIOD)?,
            annotations,
        });
    }
    let corpus = Corpus {
        dimension: spec.dimension.clone(),
        sequences,
    };
    let stats = corpus.stats()?;
    if (stats.mu_m - spec.target_mu_m).abs() > CALIBRATION_TOLERANCE {
        return Err(Error::invalid(format!(
            "could not reach target mean {} (got {})",
            spec.target_mu_m, stats.mu_m
        )));
    }
    if spec.disagreement_scale.is_none() && (stats.mu_s - spec.target_mu_s).abs() > CALIBRATION_TOLERANCE {
        return Err(Error::invalid(format!(
            "could not reach target spread {} (got {})",
            spec.target_mu_s, stats.mu_s
        )));
    }
    Ok(SynthCorpus {
        corpus,
        stats,
        scale,
        offset,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceFiles {
    pub features: String,
    pub annotations: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dimension: String,
    pub sequences: usize,
    pub frames: usize,
    pub annotators: usize,
    pub feature_dim: usize,
    pub frame_period: f64,
    pub seed: Option<u64>,
    pub target_mu_m: Option<f64>,
    pub target_mu_s: Option<f64>,
    pub achieved_mu_m: f64,
    pub achieved_mu_s: f64,
    pub disagreement_scale: Option<f64>,
    pub files: Vec<SequenceFiles>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn for_synth(spec: &CorpusSpec, synth: &SynthCorpus) -> Self {
        Self {
            version: MANIFEST_VERSION,
            dimension: spec.dimension.clone(),
            sequences: spec.sequences,
            frames: spec.frames,
            annotators: spec.annotators,
            feature_dim: spec.feature_dim,
            frame_period: DEFAULT_FRAME_PERIOD,
            seed: Some(spec.seed),
            target_mu_m: Some(spec.target_mu_m),
            target_mu_s: if spec.disagreement_scale.is_some() { None } else { Some(spec.target_mu_s) },
            achieved_mu_m: synth.stats.mu_m,
            achieved_mu_s: synth.stats.mu_s,
            disagreement_scale: spec.disagreement_scale,
            files: file_names(spec.sequences),
        }
    }
}

fn file_names(n: usize) -> Vec<SequenceFiles> {
    (1..=n)
        .map(|j| SequenceFiles {
            features: format!("seq_{j:03}_features.csv"),
            annotations: format!("seq_{j:03}_annotations.csv"),
        })
        .collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the sequences and `manifest` into `dir`.
pub fn write_corpus(dir: &Path, corpus: &Corpus, manifest: &Manifest) -> Result<()> {
    if manifest.files.len() != corpus.sequences.len() {
        return Err(Error::shape("write_corpus", corpus.sequences.len(), manifest.files.len()));
    }
    create_dir(dir)?;
    for (seq, files) in corpus.sequences.iter().zip(&manifest.files) {
        seq.features.write_csv(&dir.join(&files.features))?;
        seq.annotations.write_csv(&dir.join(&files.annotations))?;
    }
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path: PathBuf = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line() as u64,
        msg: e.to_string(),
    })
}

/// Loads a corpus written by [`write_corpus`].
pub fn read_corpus(dir: &Path) -> Result<(Corpus, Manifest)> {
    let manifest = read_manifest(dir)?;
    if manifest.files.is_empty() {
        return Err(Error::invalid(format!("{}: manifest lists no sequences", dir.display())));
    }
    let mut sequences = Vec::with_capacity(manifest.files.len());
    for files in &manifest.files {
        let fpath = dir.join(&files.features);
        let features = FeatureSequence::read_csv(&fpath, manifest.frame_period)?;
        let apath = dir.join(&files.annotations);
        let annotations = AnnotationMatrix::read_csv(&apath, manifest.frame_period, manifest.dimension.clone())?;
        if features.frames() != annotations.frames() {
            return Err(Error::Parse {
                path: apath,
                line: 1,
                msg: format!("{} annotation frames but {} feature frames", annotations.frames(), features.frames()),
            });
        }
        sequences.push(Sequence { features, annotations });
    }
    Ok((
        Corpus {
            dimension: manifest.dimension.clone(),
            sequences,
        },
        manifest,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_hit_their_targets() {
        for spec in [CorpusSpec::arousal(1), CorpusSpec::valence(1)] {
            let out = synth_corpus(&spec).unwrap();
            assert!((out.stats.mu_m - spec.target_mu_m).abs() < 0.05, "{:?}", out.stats);
            assert!((out.stats.mu_s - spec.target_mu_s).abs() < 0.05, "{:?}", out.stats);
            assert_eq!(out.corpus.sequences.len(), 9);
            assert_eq!(out.corpus.sequences[0].annotations.annotators(), 6);
            assert_eq!(out.corpus.sequences[0].features.dim(), 8);
        }
    }

    #[test]
    fn zero_disagreement_gives_identical_annotators() {
        let spec = CorpusSpec {
            disagreement_scale: Some(0.0),
            sequences: 2,
            frames: 50,
            ..CorpusSpec::arousal(3)
        };
        let out = synth_corpus(&spec).unwrap();
        for seq in &out.corpus.sequences {
            let l = label_distribution(&seq.annotations).unwrap();
            assert!(l.s.iter().all(|&s| s == crate::distributions::SIGMA_FLOOR));
        }
    }

    #[test]
    fn infeasible_specs_rejected() {
        let spec = CorpusSpec {
            target_mu_s: 1.5,
            ..CorpusSpec::arousal(1)
        };
        assert!(synth_corpus(&spec).is_err());
        let spec = CorpusSpec {
            annotators: 2,
            ..CorpusSpec::arousal(1)
        };
        let err = synth_corpus(&spec).unwrap_err().to_string();
        assert!(err.contains("nu"), "{err}");
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = CorpusSpec {
            sequences: 2,
            frames: 40,
            ..CorpusSpec::valence(11)
        };
        assert_eq!(synth_corpus(&spec).unwrap(), synth_corpus(&spec).unwrap());
    }
}
