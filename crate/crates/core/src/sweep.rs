//! Divergence landscapes over the label spread.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distributions::{Gaussian, SIGMA_FLOOR};
use crate::error::{Error, Result};
use crate::losses::{kl_gauss_gauss, kl_t_gauss, LabelFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariant {
    TKl,
    GaussKl,
    Both,
}

impl FromStr for SweepVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t_kl" => Ok(SweepVariant::TKl),
            "gauss_kl" => Ok(SweepVariant::GaussKl),
            "both" => Ok(SweepVariant::Both),
            other => Err(Error::invalid(format!("unknown sweep variant `{other}` (expected t_kl, gauss_kl or both)"))),
        }
    }
}

/// Grid over the label spread `s` for a fixed prediction `N(μ̂, σ̂²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub sigma_hat: f64,
    pub nu: f64,
    /// Label mean minus predicted mean.
    pub mu_delta: f64,
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    pub variant: SweepVariant,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_hat > 0.0 && self.sigma_hat.is_finite()) {
            return Err(Error::invalid(format!("sigma_hat must be positive, got {}", self.sigma_hat)));
        }
        if !(self.nu > 2.0) {
            return Err(Error::invalid(format!("nu must exceed 2, got {}", self.nu)));
        }
        if !self.mu_delta.is_finite() {
            return Err(Error::invalid("mu_delta must be finite"));
        }
        if !(self.lo >= SIGMA_FLOOR) {
            return Err(Error::invalid(format!("lo must be at least {SIGMA_FLOOR}, got {}", self.lo)));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid(format!("step must be positive, got {}", self.step)));
        }
        if !(self.hi >= self.lo && self.hi.is_finite()) {
            return Err(Error::invalid(format!("hi ({}) must not be below lo ({})", self.hi, self.lo)));
        }
        Ok(())
    }

    /// Grid points `lo + k·step` up to `hi` (with a small tolerance so an
    /// endpoint hit by rounding is kept).
    pub fn grid(&self) -> Vec<f64> {
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|k| self.lo + k as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub kl_t: Option<f64>,
    pub kl_gauss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub argmin_t: Option<f64>,
    pub argmin_gauss: Option<f64>,
}

fn argmin(rows: &[SweepRow], pick: impl Fn(&SweepRow) -> Option<f64>) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for r in rows {
        if let Some(v) = pick(r) {
            if best.is_none_or(|(b, _)| v < b) {
                best = Some((v, r.sigma));
            }
        }
    }
    best.map(|(_, s)| s)
}

pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let pred = Gaussian::new(0.0, spec.sigma_hat)?;
    let want_t = spec.variant != SweepVariant::GaussKl;
    let want_g = spec.variant != SweepVariant::TKl;
    let mut rows = Vec::new();
    for s in spec.grid() {
        let kl_t = if want_t {
            Some(kl_t_gauss(&LabelFrame::new(spec.nu, spec.mu_delta, s), &pred)?)
        } else {
            None
        };
        let kl_gauss = if want_g {
            Some(kl_gauss_gauss(&Gaussian::new(spec.mu_delta, s)?, &pred))
        } else {
            None
        };
        rows.push(SweepRow { sigma: s, kl_t, kl_gauss });
    }
    Ok(SweepResult {
        argmin_t: argmin(&rows, |r| r.kl_t),
        argmin_gauss: argmin(&rows, |r| r.kl_gauss),
        rows,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

/// `sigma,kl_t,kl_gauss` rows followed by a `# argmin` footer. Columns of a
/// variant that was not requested are left empty.
pub fn sweep_csv(res: &SweepResult) -> String {
    let mut out = String::from("sigma,kl_t,kl_gauss\n");
    for r in &res.rows {
        let _ = writeln!(out, "{},{},{}", r.sigma, cell(r.kl_t), cell(r.kl_gauss));
    }
    let _ = writeln!(out, "# argmin kl_t={} kl_gauss={}", cell(res.argmin_t), cell(res.argmin_gauss));
    out
}

/// Parses the output of [`sweep_csv`].
pub fn read_sweep_csv(path: &Path) -> Result<SweepResult> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64,
        msg,
    };
    let opt = |s: &str, line: usize| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| perr(line, format!("`{s}`: {e}")))
        }
    };
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some("sigma,kl_t,kl_gauss") {
        return Err(perr(1, "expected header `sigma,kl_t,kl_gauss`".into()));
    }
    let mut rows = Vec::new();
    let mut footer = None;
    for (i, line) in lines {
        if let Some(rest) = line.strip_prefix("# argmin ") {
            let mut t = None;
            let mut g = None;
            for part in rest.split_whitespace() {
                match part.split_once('=') {
                    Some(("kl_t", v)) => t = opt(v, i + 1)?,
                    Some(("kl_gauss", v)) => g = opt(v, i + 1)?,
                    _ => return Err(perr(i + 1, format!("bad footer entry `{part}`"))),
                }
            }
            footer = Some((t, g));
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(perr(i + 1, format!("expected 3 fields, found {}", f.len())));
        }
        let sigma = opt(f[0], i + 1)?.ok_or_else(|| perr(i + 1, "missing sigma".into()))?;
        rows.push(SweepRow {
            sigma,
            kl_t: opt(f[1], i + 1)?,
            kl_gauss: opt(f[2], i + 1)?,
        });
    }
    let (argmin_t, argmin_gauss) = footer.ok_or_else(|| perr(text.lines().count(), "missing argmin footer".into()))?;
    Ok(SweepResult {
        rows,
        argmin_t,
        argmin_gauss,
    })
}
