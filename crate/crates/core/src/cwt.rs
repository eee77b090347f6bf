//! Ten-scale Mexican-hat wavelet analysis of normalized log-F0.
//!
//! Scale `i` (1-based) has width `tau_i = 2^(i+1) * 5 ms`, so the columns span
//! 20 ms to 10.24 s. Analysis weights each column by `(i + 2.5)^(-5/2)` and
//! recomposition sums the columns with the same weight again.

use std::io::{Read, Write};

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use thiserror::Error;

use crate::stats;

pub const SCALES: usize = 10;
pub const TAU0_MS: f64 = 5.0;
/// Kernel support in units of the scale: `|x - t| <= K * tau`.
pub const KERNEL_SUPPORT: f64 = 5.0;

#[derive(Debug, Error)]
pub enum CwtError {
    #[error("scale must be at least one frame, got {0}")]
    InvalidScale(f64),
    #[error("signal is empty")]
    Empty,
    #[error("non-finite input at frame {0}")]
    NonFinite(usize),
    #[error("expected {SCALES} columns, got {0}")]
    Columns(usize),
    #[error("scale {scale}: std must be positive and finite, got {std}")]
    ScaleStd { scale: usize, std: f64 },
    #[error("no frames to compute scale statistics from")]
    NoFrames,
    #[error("scale stats line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("cwt csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Unit-L2-norm Mexican hat, `C (1 - x^2) exp(-x^2 / 2)`.
pub fn mexican_hat(x: f64) -> f64 {
    let c = 2.0 / (3f64.sqrt() * std::f64::consts::PI.powf(0.25));
    let x2 = x * x;
    c * (1.0 - x2) * (-0.5 * x2).exp()
}

/// Scale width in milliseconds for 1-based scale index `i`.
pub fn scale_ms(i: usize) -> f64 {
    debug_assert!((1..=SCALES).contains(&i));
    TAU0_MS * 2f64.powi(i as i32 + 1)
}

/// Analysis/synthesis weight `(i + 2.5)^(-5/2)` for 1-based scale `i`.
pub fn scale_weight(i: usize) -> f64 {
    (i as f64 + 2.5).powf(-2.5)
}

/// Half-sample symmetric reflection into `0..len`; periodic with period
/// `2 * len`, so offsets of any size are valid.
#[inline]
pub(crate) fn reflect(i: isize, len: usize) -> usize {
    let period = 2 * len as isize;
    let r = i.rem_euclid(period) as usize;
    if r < len {
        r
    } else {
        2 * len - 1 - r
    }
}

/// Sampled, truncated wavelet at scale `tau` for offsets `-h..=h`, shifted to
/// zero sum. Truncation alone leaves a residual DC response of order 1e-5
/// (growing with `sqrt(tau)`); removing the kernel mean makes constant input
/// map to zero up to rounding.
fn kernel(tau: f64) -> Vec<f64> {
    let h = (KERNEL_SUPPORT * tau).floor() as isize;
    let mut k: Vec<f64> = (-h..=h).map(|x| mexican_hat(x as f64 / tau)).collect();
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= mean);
    k
}

/// Discrete CWT of `signal` at one scale (in frames), unit-step Riemann sum
/// with mirror-padded boundaries.
pub fn cwt_scale(signal: &[f64], tau_frames: f64) -> Result<Vec<f64>, CwtError> {
    if !(tau_frames.is_finite() && tau_frames >= 1.0) {
        return Err(CwtError::InvalidScale(tau_frames));
    }
    if signal.is_empty() {
        return Err(CwtError::Empty);
    }
    let ker = kernel(tau_frames);
    let h = ker.len() / 2;
    let t_len = signal.len();
    let padded: Vec<f64> = (0..t_len + 2 * h)
        .map(|j| signal[reflect(j as isize - h as isize, t_len)])
        .collect();
    let norm = tau_frames.powf(-0.5);
    Ok((0..t_len)
        .map(|t| {
            let window = &padded[t..t + ker.len()];
            norm * window.iter().zip(&ker).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect())
}

/// T × 10 weighted wavelet coefficients; column `i-1` holds scale `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CwtMatrix {
    coeffs: Array2<f64>,
    frame_period_ms: f64,
}

impl CwtMatrix {
    pub fn new(coeffs: Array2<f64>, frame_period_ms: f64) -> Result<Self, CwtError> {
        if coeffs.ncols() != SCALES {
            return Err(CwtError::Columns(coeffs.ncols()));
        }
        if coeffs.nrows() == 0 {
            return Err(CwtError::Empty);
        }
        if let Some(((t, _), _)) = coeffs.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(CwtError::NonFinite(t));
        }
        Ok(Self {
            coeffs,
            frame_period_ms,
        })
    }

    pub fn coeffs(&self) -> &Array2<f64> {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Array2<f64> {
        self.coeffs
    }

    pub fn frames(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn frame_period_ms(&self) -> f64 {
        self.frame_period_ms
    }

    pub fn tau0_ms(&self) -> f64 {
        TAU0_MS
    }

    /// Index (1-based) of the column with the largest sum of squares.
    pub fn max_energy_scale(&self) -> usize {
        let energy = self.coeffs.map(|v| v * v).sum_axis(Axis(0));
        energy
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &e)| if e > best.1 { (i, e) } else { best })
            .0
            + 1
    }

    /// CSV with header `t,scale1..scale10`.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), CwtError> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["t".to_string()];
        header.extend((1..=SCALES).map(|i| format!("scale{i}")));
        w.write_record(&header)?;
        for (t, row) in self.coeffs.rows().into_iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R, frame_period_ms: f64) -> Result<Self, CwtError> {
        let mut r = csv::Reader::from_reader(source);
        let mut data = Vec::new();
        let mut rows = 0;
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != SCALES + 1 {
                return Err(CwtError::Parse {
                    line: line + 2,
                    msg: format!("expected {} fields, got {}", SCALES + 1, rec.len()),
                });
            }
            for field in rec.iter().skip(1) {
                data.push(field.trim().parse::<f64>().map_err(|e| CwtError::Parse {
                    line: line + 2,
                    msg: e.to_string(),
                })?);
            }
            rows += 1;
        }
        let coeffs = Array2::from_shape_vec((rows, SCALES), data).expect("row width checked");
        Self::new(coeffs, frame_period_ms)
    }
}

/// Weighted 10-scale decomposition. Columns are computed in parallel; each
/// column's summation order is fixed so the result does not depend on the
/// thread count.
pub fn decompose10(norm_logf0: &[f64], frame_period_ms: f64) -> Result<CwtMatrix, CwtError> {
    if let Some(t) = norm_logf0.iter().position(|v| !v.is_finite()) {
        return Err(CwtError::NonFinite(t));
    }
    if norm_logf0.is_empty() {
        return Err(CwtError::Empty);
    }
    let columns: Vec<Vec<f64>> = (1..=SCALES)
        .into_par_iter()
        .map(|i| {
            let w = scale_weight(i);
            cwt_scale(norm_logf0, scale_ms(i) / frame_period_ms)
                .map(|col| col.into_iter().map(|v| v * w).collect())
        })
        .collect::<Result<_, _>>()?;
    let t_len = norm_logf0.len();
    let coeffs = Array2::from_shape_fn((t_len, SCALES), |(t, i)| columns[i][t]);
    CwtMatrix::new(coeffs, frame_period_ms)
}

/// `f(t) = sum_i m[t, i] * (i + 2.5)^(-5/2)`.
pub fn recompose10(m: &CwtMatrix) -> Vec<f64> {
    m.coeffs
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(c, v)| v * scale_weight(c + 1))
                .sum()
        })
        .collect()
}

/// Per-scale mean and std of CWT coefficients over a training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleStats {
    mean: [f64; SCALES],
    std: [f64; SCALES],
}

impl ScaleStats {
    pub fn new(mean: [f64; SCALES], std: [f64; SCALES]) -> Result<Self, CwtError> {
        for (i, &s) in std.iter().enumerate() {
            if !(s.is_finite() && s > 0.0) {
                return Err(CwtError::ScaleStd { scale: i + 1, std: s });
            }
        }
        Ok(Self { mean, std })
    }

    /// Pooled population statistics per column.
    pub fn from_corpus<'a, I>(mats: I) -> Result<Self, CwtError>
    where
        I: IntoIterator<Item = &'a CwtMatrix> + Clone,
    {
        let mut mean = [0.0; SCALES];
        let mut std = [0.0; SCALES];
        for c in 0..SCALES {
            let column: Vec<f64> = mats
                .clone()
                .into_iter()
                .flat_map(|m| m.coeffs.column(c).to_vec())
                .collect();
            let (m, s, _) = stats::mean_std(column.iter().copied()).ok_or(CwtError::NoFrames)?;
            mean[c] = m;
            std[c] = s;
        }
        Self::new(mean, std)
    }

    pub fn mean(&self) -> &[f64; SCALES] {
        &self.mean
    }

    pub fn std(&self) -> &[f64; SCALES] {
        &self.std
    }

    /// `scale<i>.mean=` / `scale<i>.std=` lines.
    pub fn render(&self) -> String {
        let mut s = String::from("# per-scale CWT coefficient statistics\n");
        for i in 0..SCALES {
            s.push_str(&format!("scale{}.mean={:?}\n", i + 1, self.mean[i]));
            s.push_str(&format!("scale{}.std={:?}\n", i + 1, self.std[i]));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, CwtError> {
        let mut mean = [None; SCALES];
        let mut std = [None; SCALES];
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let err = |msg: String| CwtError::Parse { line, msg };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err("expected key=value".into()))?;
            let (scale, field) = key
                .trim()
                .strip_prefix("scale")
                .and_then(|k| k.split_once('.'))
                .ok_or_else(|| err(format!("unknown key {key}")))?;
            let i: usize = scale
                .parse()
                .ok()
                .filter(|i| (1..=SCALES).contains(i))
                .ok_or_else(|| err(format!("bad scale index in {key}")))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|e| err(format!("{key}: {e}")))?;
            let slot = match field {
                "mean" => &mut mean[i - 1],
                "std" => &mut std[i - 1],
                _ => return Err(err(format!("unknown key {key}"))),
            };
            if slot.replace(v).is_some() {
                return Err(err(format!("duplicate key {key}")));
            }
        }
        let collect = |arr: [Option<f64>; SCALES], what: &str| -> Result<[f64; SCALES], CwtError> {
            let mut out = [0.0; SCALES];
            for (i, v) in arr.iter().enumerate() {
                out[i] = v.ok_or_else(|| CwtError::Parse {
                    line: 0,
                    msg: format!("missing scale{}.{what}", i + 1),
                })?;
            }
            Ok(out)
        };
        Self::new(collect(mean, "mean")?, collect(std, "std")?)
    }
}

pub fn standardize_scales(m: &CwtMatrix, s: &ScaleStats) -> CwtMatrix {
    let mut coeffs = m.coeffs.clone();
    for (c, mut col) in coeffs.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| (v - s.mean[c]) / s.std[c]);
    }
    CwtMatrix {
        coeffs,
        frame_period_ms: m.frame_period_ms,
    }
}

pub fn destandardize_scales(m: &CwtMatrix, s: &ScaleStats) -> CwtMatrix {
    let mut coeffs = m.coeffs.clone();
    for (c, mut col) in coeffs.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| v * s.std[c] + s.mean[c]);
    }
    CwtMatrix {
        coeffs,
        frame_period_ms: m.frame_period_ms,
    }
}
