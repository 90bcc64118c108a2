//! Multi-annotator traces and their per-frame summaries.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::distributions::SIGMA_FLOOR;
use crate::error::{Error, Result};

pub const DEFAULT_FRAME_PERIOD: f64 = 0.040;

/// Per-frame annotations: rows are frames, columns are annotators.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationMatrix {
    values: Array2<f64>,
    frame_period: f64,
    dimension: String,
}

impl AnnotationMatrix {
    /// Validates and ingests a T×a grid. Values are clamped to [−1, 1]; NaN
    /// and infinities are rejected.
    pub fn new(mut values: Array2<f64>, frame_period: f64, dimension: impl Into<String>) -> Result<Self> {
        let (frames, annotators) = values.dim();
        if frames == 0 {
            return Err(Error::invalid("annotation matrix has no frames"));
        }
        if annotators < 2 {
            return Err(Error::invalid(format!("need at least 2 annotators, got {annotators}")));
        }
        if !(frame_period > 0.0 && frame_period.is_finite()) {
            return Err(Error::invalid(format!("frame period must be positive, got {frame_period}")));
        }
        for ((t, i), v) in values.indexed_iter_mut() {
            if !v.is_finite() {
                return Err(Error::invalid(format!("non-finite annotation at frame {t}, annotator {}", i + 1)));
            }
            *v = v.clamp(-1.0, 1.0);
        }
        Ok(Self {
            values,
            frame_period,
            dimension: dimension.into(),
        })
    }

    /// Builds a matrix from one trace per annotator.
    pub fn from_traces(traces: &[Vec<f64>], frame_period: f64, dimension: impl Into<String>) -> Result<Self> {
        let a = traces.len();
        let t = traces.first().map_or(0, Vec::len);
        if traces.iter().any(|tr| tr.len() != t) {
            return Err(Error::invalid("annotator traces differ in length"));
        }
        let values = Array2::from_shape_fn((t, a), |(f, i)| traces[i][f]);
        Self::new(values, frame_period, dimension)
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn annotators(&self) -> usize {
        self.values.ncols()
    }

    pub fn frame_period(&self) -> f64 {
        self.frame_period
    }

    pub fn dimension(&self) -> &str {
        &self.dimension
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn annotator(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.column(i)
    }

    /// Writes the `time_s,ann_1,...,ann_a` CSV form.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header: Vec<String> = (1..=self.annotators()).map(|i| format!("ann_{i}")).collect();
        write_time_csv(path, &header, &self.values, self.frame_period)
    }

    pub fn read_csv(path: &Path, frame_period: f64, dimension: impl Into<String>) -> Result<Self> {
        let values = read_time_csv(path, "ann_", frame_period)?;
        Self::new(values, frame_period, dimension).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: e.to_string(),
        })
    }
}

/// Per-frame Student-t label model: ν, mean trace m, spread trace s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub nu: f64,
    pub m: Vec<f64>,
    pub s: Vec<f64>,
}

impl LabelDistribution {
    pub fn new(nu: f64, m: Vec<f64>, s: Vec<f64>) -> Result<Self> {
        if !(nu > 2.0) {
            return Err(Error::domain("LabelDistribution::new", format!("nu must exceed 2, got {nu}")));
        }
        if m.len() != s.len() {
            return Err(Error::shape("LabelDistribution::new", m.len(), s.len()));
        }
        if m.iter().chain(&s).any(|v| !v.is_finite()) {
            return Err(Error::invalid("label distribution has non-finite entries"));
        }
        let s = s.into_iter().map(|v| v.max(SIGMA_FLOOR)).collect();
        Ok(Self { nu, m, s })
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Concatenates several sequences sharing the same ν.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a LabelDistribution>) -> Result<Self> {
        let mut nu = None;
        let (mut m, mut s) = (Vec::new(), Vec::new());
        for p in parts {
            match nu {
                None => nu = Some(p.nu),
                Some(v) if v != p.nu => {
                    return Err(Error::invalid(format!("cannot concatenate nu={v} with nu={}", p.nu)))
                }
                _ => {}
            }
            m.extend_from_slice(&p.m);
            s.extend_from_slice(&p.s);
        }
        let nu = nu.ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        Ok(Self { nu, m, s })
    }
}

/// Arithmetic mean over annotators, per frame.
pub fn mean_label(a: &AnnotationMatrix) -> Vec<f64> {
    a.values
        .axis_iter(Axis(0))
        .map(|row| row.sum() / row.len() as f64)
        .collect()
}

/// Unbiased (divisor a−1) standard deviation over annotators, per frame,
/// floored at [`SIGMA_FLOOR`].
pub fn unbiased_std(a: &AnnotationMatrix) -> Result<Vec<f64>> {
    let n = a.annotators();
    if n < 2 {
        return Err(Error::invalid(format!("unbiased std needs at least 2 annotators, got {n}")));
    }
    Ok(a.values
        .axis_iter(Axis(0))
        .map(|row| {
            let m = row.sum() / n as f64;
            let ss: f64 = row.iter().map(|y| (y - m) * (y - m)).sum();
            (ss / (n as f64 - 1.0)).sqrt().max(SIGMA_FLOOR)
        })
        .collect())
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

/// Per-annotator reliability weights used by [`ewe_label`]: Pearson correlation
/// with the mean of the remaining annotators, clipped to [0, 1].
pub fn ewe_weights(a: &AnnotationMatrix) -> Result<Vec<f64>> {
    let (t, n) = a.values.dim();
    if t < 2 {
        return Ok(vec![1.0; n]);
    }
    let cols: Vec<Vec<f64>> = (0..n).map(|i| a.annotator(i).to_vec()).collect();
    let totals: Vec<f64> = a.values.axis_iter(Axis(0)).map(|r| r.sum()).collect();
    let mut weights = Vec::with_capacity(n);
    for (i, col) in cols.iter().enumerate() {
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            return Err(Error::invalid(format!(
                "annotator {} has a constant trace; correlation is undefined",
                i + 1
            )));
        }
        let others: Vec<f64> = totals
            .iter()
            .zip(col)
            .map(|(tot, y)| (tot - y) / (n as f64 - 1.0))
            .collect();
        // A flat leave-one-out mean carries no evidence about annotator i.
        let r = pearson(col, &others).unwrap_or(0.0);
        weights.push(r.clamp(0.0, 1.0));
    }
    Ok(weights)
}

/// Evaluator-weighted estimator: correlation-weighted mean of the annotators.
/// Falls back to [`mean_label`] if every weight clips to zero.
pub fn ewe_label(a: &AnnotationMatrix) -> Result<Vec<f64>> {
    let w = ewe_weights(a)?;
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Ok(mean_label(a));
    }
    Ok(a.values
        .axis_iter(Axis(0))
        .map(|row| row.iter().zip(&w).map(|(y, wi)| y * wi).sum::<f64>() / total)
        .collect())
}

/// Student-t label model with ν equal to the number of annotators.
pub fn label_distribution(a: &AnnotationMatrix) -> Result<LabelDistribution> {
    let n = a.annotators();
    if n < 3 {
        return Err(Error::domain(
            "label_distribution",
            format!("{n} annotators give nu = {n}; the t label model needs nu > 2 (at least 3 annotators)"),
        ));
    }
    LabelDistribution::new(n as f64, mean_label(a), unbiased_std(a)?)
}

pub(crate) fn write_time_csv(path: &Path, header: &[String], values: &Array2<f64>, period: f64) -> Result<()> {
    let mut out = String::with_capacity(values.len() * 12);
    out.push_str("time_s");
    for h in header {
        out.push(',');
        out.push_str(h);
    }
    out.push('\n');
    for (t, row) in values.axis_iter(Axis(0)).enumerate() {
        out.push_str(&format!("{:.6}", t as f64 * period));
        for v in row {
            out.push(',');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads a `time_s,<prefix>1,...` CSV and checks the time grid.
pub(crate) fn read_time_csv(path: &Path, prefix: &str, period: f64) -> Result<Array2<f64>> {
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(1, format!("{other:?}")),
        })?;
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.get(0) != Some("time_s") {
        return Err(parse_err(1, "first column must be `time_s`".into()));
    }
    let width = headers.len() - 1;
    if width == 0 {
        return Err(parse_err(1, "no value columns".into()));
    }
    for (k, h) in headers.iter().skip(1).enumerate() {
        let want = format!("{prefix}{}", k + 1);
        if h != want {
            return Err(parse_err(1, format!("column {} should be `{want}`, found `{h}`", k + 2)));
        }
    }
    let mut data = Vec::new();
    let mut prev_time: Option<f64> = None;
    let mut rows = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width + 1 {
            return Err(parse_err(line, format!("expected {} fields, found {}", width + 1, rec.len())));
        }
        let time: f64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad time value `{}`", &rec[0])))?;
        if let Some(p) = prev_time {
            if ((time - p) - period).abs() > 1e-6 + 1e-12 {
                return Err(parse_err(
                    line,
                    format!("time step {} differs from frame period {period}", time - p),
                ));
            }
        }
        prev_time = Some(time);
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("bad value `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value `{field}`")));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(1, "no data rows".into()));
    }
    Array2::from_shape_vec((rows, width), data).map_err(|e| parse_err(1, e.to_string()))
}
