//! F0 preprocessing: gap filling, log scale, speaker z-normalization and the
//! log-Gaussian baseline transform.

use std::fmt::Write as _;

use thiserror::Error;

use crate::features::VoicingMask;
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum F0Error {
    #[error("contour has no voiced frames")]
    AllUnvoiced,
    #[error("non-positive or non-finite F0 {value} at frame {frame}")]
    NonPositive { frame: usize, value: f64 },
    #[error("need at least 2 voiced frames for statistics, got {0}")]
    TooFewVoiced(usize),
    #[error("voiced log-F0 has zero variance")]
    ZeroVariance,
    #[error("invalid statistics: mean {mean}, std {std}")]
    InvalidStats { mean: f64, std: f64 },
    #[error("length mismatch: contour {contour}, mask {mask}")]
    LengthMismatch { contour: usize, mask: usize },
    #[error("stats file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Corpus-level statistics of voiced log-F0 (natural log of Hz).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerF0Stats {
    mean: f64,
    std: f64,
    n_voiced: u64,
}

impl SpeakerF0Stats {
    pub fn new(mean: f64, std: f64, n_voiced: u64) -> Result<Self, F0Error> {
        if !mean.is_finite() || !(std.is_finite() && std > 0.0) {
            return Err(F0Error::InvalidStats { mean, std });
        }
        Ok(Self { mean, std, n_voiced })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn n_voiced(&self) -> u64 {
        self.n_voiced
    }

    /// `mean=`, `std=`, `n_voiced=` lines. Floats use the shortest
    /// round-tripping representation.
    pub fn render(&self) -> String {
        let mut s = String::from("# voiced log-F0 statistics (natural log of Hz)\n");
        writeln!(s, "mean={:?}", self.mean).unwrap();
        writeln!(s, "std={:?}", self.std).unwrap();
        writeln!(s, "n_voiced={}", self.n_voiced).unwrap();
        s
    }

    pub fn parse(text: &str) -> Result<Self, F0Error> {
        let (mut mean, mut std, mut n) = (None, None, None);
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let err = |msg: String| F0Error::Parse { line, msg };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let float = || {
                value
                    .parse::<f64>()
                    .map_err(|e| err(format!("{key}: {e}")))
            };
            let slot_taken = |taken: bool| {
                if taken {
                    Err(err(format!("duplicate key {key}")))
                } else {
                    Ok(())
                }
            };
            match key {
                "mean" => {
                    slot_taken(mean.is_some())?;
                    mean = Some(float()?)
                }
                "std" => {
                    slot_taken(std.is_some())?;
                    std = Some(float()?)
                }
                "n_voiced" => {
                    slot_taken(n.is_some())?;
                    n = Some(
                        value
                            .parse::<u64>()
                            .map_err(|e| err(format!("n_voiced: {e}")))?,
                    )
                }
                other => return Err(err(format!("unknown key {other}"))),
            }
        }
        let missing = |k: &str| F0Error::Parse {
            line: 0,
            msg: format!("missing key {k}"),
        };
        Self::new(
            mean.ok_or_else(|| missing("mean"))?,
            std.ok_or_else(|| missing("std"))?,
            n.ok_or_else(|| missing("n_voiced"))?,
        )
    }
}

/// Gap-free log-F0 together with the voicing it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousLogF0 {
    pub values: Vec<f64>,
    pub mask: VoicingMask,
}

impl ContinuousLogF0 {
    /// interpolate → log.
    pub fn from_f0(f0: &[f64]) -> Result<Self, F0Error> {
        let filled = interpolate_unvoiced(f0)?;
        Ok(Self {
            values: to_log(&filled)?,
            mask: VoicingMask::from_f0(f0),
        })
    }

    pub fn voiced_values(&self) -> impl Iterator<Item = f64> + Clone + '_ {
        self.values
            .iter()
            .zip(self.mask.as_slice())
            .filter(|(_, &v)| v)
            .map(|(&x, _)| x)
    }
}

/// Fills unvoiced (0.0) frames: linear between voiced flanks, nearest voiced
/// value held at the ends.
pub fn interpolate_unvoiced(f0: &[f64]) -> Result<Vec<f64>, F0Error> {
    let voiced: Vec<usize> = (0..f0.len()).filter(|&t| f0[t] > 0.0).collect();
    let (&first, &last) = match (voiced.first(), voiced.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(F0Error::AllUnvoiced),
    };
    let mut out = f0.to_vec();
    out[..first].fill(f0[first]);
    out[last + 1..].fill(f0[last]);
    for pair in voiced.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a > 1 {
            let span = (b - a) as f64;
            for (t, slot) in out.iter_mut().enumerate().take(b).skip(a + 1) {
                let w = (t - a) as f64 / span;
                *slot = f0[a] * (1.0 - w) + f0[b] * w;
            }
        }
    }
    Ok(out)
}

pub fn to_log(f0: &[f64]) -> Result<Vec<f64>, F0Error> {
    f0.iter()
        .enumerate()
        .map(|(frame, &value)| {
            if value.is_finite() && value > 0.0 {
                Ok(value.ln())
            } else {
                Err(F0Error::NonPositive { frame, value })
            }
        })
        .collect()
}

/// Pooled population statistics over the voiced frames of every utterance.
pub fn compute_stats<'a, I>(corpus: I) -> Result<SpeakerF0Stats, F0Error>
where
    I: IntoIterator<Item = (&'a [f64], &'a VoicingMask)>,
{
    let mut voiced = Vec::new();
    for (logf0, mask) in corpus {
        if logf0.len() != mask.len() {
            return Err(F0Error::LengthMismatch {
                contour: logf0.len(),
                mask: mask.len(),
            });
        }
        voiced.extend(
            logf0
                .iter()
                .zip(mask.as_slice())
                .filter(|(_, &v)| v)
                .map(|(&x, _)| x),
        );
    }
    if voiced.len() < 2 {
        return Err(F0Error::TooFewVoiced(voiced.len()));
    }
    let (mean, std, n) = stats::mean_std(voiced.iter().copied()).unwrap();
    if stats::is_degenerate(mean, std) {
        return Err(F0Error::ZeroVariance);
    }
    SpeakerF0Stats::new(mean, std, n as u64)
}

pub fn normalize(logf0: &[f64], stats: &SpeakerF0Stats) -> Vec<f64> {
    logf0.iter().map(|x| (x - stats.mean) / stats.std).collect()
}

pub fn denormalize(norm: &[f64], stats: &SpeakerF0Stats) -> Vec<f64> {
    norm.iter().map(|z| z * stats.std + stats.mean).collect()
}

/// Zeroes every frame the mask marks unvoiced.
pub fn reapply_voicing(f0_hz: &[f64], mask: &VoicingMask) -> Result<Vec<f64>, F0Error> {
    if f0_hz.len() != mask.len() {
        return Err(F0Error::LengthMismatch {
            contour: f0_hz.len(),
            mask: mask.len(),
        });
    }
    Ok(f0_hz
        .iter()
        .zip(mask.as_slice())
        .map(|(&f, &v)| if v { f } else { 0.0 })
        .collect())
}

/// Log-Gaussian normalized transform of voiced frames; unvoiced frames stay 0.
pub fn lg_convert(f0: &[f64], src: &SpeakerF0Stats, tgt: &SpeakerF0Stats) -> Vec<f64> {
    f0.iter()
        .map(|&f| {
            if f > 0.0 {
                ((f.ln() - src.mean) / src.std * tgt.std + tgt.mean).exp()
            } else {
                0.0
            }
        })
        .collect()
}
