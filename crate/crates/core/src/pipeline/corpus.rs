use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{FeatureKind, PipelineError};
use crate::cwt::{decompose10, standardize_scales, CwtMatrix, ScaleStats};
use crate::f0::{compute_stats, normalize, ContinuousLogF0, F0Error, SpeakerF0Stats};
use crate::features::{read_features, write_features, UtteranceFeatures};
use crate::nn::Tensor;
use crate::stats::{is_degenerate, mean_std};

/// Per-dimension mean and std of MCEPs over a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct McepStats {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl McepStats {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self, PipelineError> {
        if mean.is_empty() || mean.len() != std.len() {
            return Err(PipelineError::Dimension(format!(
                "{} means vs {} stds",
                mean.len(),
                std.len()
            )));
        }
        if let Some(d) = (0..mean.len()).find(|&d| !mean[d].is_finite() || is_degenerate(mean[d], std[d])) {
            return Err(PipelineError::Dimension(format!(
                "mcep dim {} has degenerate statistics (mean {}, std {})",
                d + 1,
                mean[d],
                std[d]
            )));
        }
        Ok(Self { mean, std })
    }

    pub fn from_corpus<'a>(mceps: impl IntoIterator<Item = &'a Array2<f64>> + Clone) -> Result<Self, PipelineError> {
        let dim = mceps
            .clone()
            .into_iter()
            .next()
            .map(|m| m.ncols())
            .ok_or(PipelineError::NoUtterances { rejected: 0 })?;
        let (mut mean, mut std) = (Vec::with_capacity(dim), Vec::with_capacity(dim));
        for d in 0..dim {
            let column: Vec<f64> = mceps
                .clone()
                .into_iter()
                .flat_map(|m| m.column(d).to_vec())
                .collect();
            let (m, s, _) = mean_std(column.iter().copied()).expect("non-empty corpus");
            mean.push(m);
            std.push(s);
        }
        Self::new(mean, std)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    fn check(&self, m: &Array2<f64>) -> Result<(), PipelineError> {
        if m.ncols() != self.dim() {
            return Err(PipelineError::Dimension(format!(
                "mcep has {} dims, statistics have {}",
                m.ncols(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, m: &Array2<f64>) -> Result<Array2<f64>, PipelineError> {
        self.check(m)?;
        let mut out = m.clone();
        for (d, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.mean[d]) / self.std[d]);
        }
        Ok(out)
    }

    pub fn denormalize(&self, m: &Array2<f64>) -> Result<Array2<f64>, PipelineError> {
        self.check(m)?;
        let mut out = m.clone();
        for (d, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.std[d] + self.mean[d]);
        }
        Ok(out)
    }

    /// `dim<i>.mean=` / `dim<i>.std=` lines, 1-based.
    pub fn render(&self) -> String {
        let mut s = String::from("# per-dimension MCEP statistics\n");
        for d in 0..self.dim() {
            s.push_str(&format!("dim{}.mean={:?}\n", d + 1, self.mean[d]));
            s.push_str(&format!("dim{}.std={:?}\n", d + 1, self.std[d]));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut mean: Vec<Option<f64>> = Vec::new();
        let mut std: Vec<Option<f64>> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let err = |msg: String| PipelineError::Parse { line, msg };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err("expected key=value".into()))?;
            let key = key.trim();
            let (d, field) = key
                .strip_prefix("dim")
                .and_then(|k| k.split_once('.'))
                .and_then(|(i, f)| i.parse::<usize>().ok().filter(|&i| i >= 1).map(|i| (i - 1, f)))
                .ok_or_else(|| err(format!("unknown key {key}")))?;
            let v: f64 = value.trim().parse().map_err(|e| err(format!("{key}: {e}")))?;
            let target = match field {
                "mean" => &mut mean,
                "std" => &mut std,
                _ => return Err(err(format!("unknown key {key}"))),
            };
            if target.len() <= d {
                target.resize(d + 1, None);
            }
            if target[d].replace(v).is_some() {
                return Err(err(format!("duplicate key {key}")));
            }
        }
        let dim = mean.len().max(std.len());
        let take = |v: &[Option<f64>], what: &str| -> Result<Vec<f64>, PipelineError> {
            (0..dim)
                .map(|d| {
                    v.get(d).copied().flatten().ok_or_else(|| PipelineError::Parse {
                        line: 0,
                        msg: format!("missing dim{}.{what}", d + 1),
                    })
                })
                .collect()
        };
        Self::new(take(&mean, "mean")?, take(&std, "std")?)
    }
}

/// Statistics bundle of one speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerStats {
    pub f0: SpeakerF0Stats,
    pub scales: ScaleStats,
    pub mcep: McepStats,
}

pub const F0_STATS_FILE: &str = "stats.txt";
pub const SCALE_STATS_FILE: &str = "scale_stats.txt";
pub const MCEP_STATS_FILE: &str = "mcep_stats.txt";

impl SpeakerStats {
    /// Writes the three stats files into `dir`, each name prefixed by
    /// `prefix` (empty for a corpus directory).
    pub fn save(&self, dir: &Path, prefix: &str) -> Result<(), PipelineError> {
        fs::write(dir.join(format!("{prefix}{F0_STATS_FILE}")), self.f0.render())?;
        fs::write(dir.join(format!("{prefix}{SCALE_STATS_FILE}")), self.scales.render())?;
        fs::write(dir.join(format!("{prefix}{MCEP_STATS_FILE}")), self.mcep.render())?;
        Ok(())
    }

    pub fn load(dir: &Path, prefix: &str) -> Result<Self, PipelineError> {
        let read = |name: &str| {
            let path = dir.join(format!("{prefix}{name}"));
            fs::read_to_string(&path).map_err(|e| PipelineError::from(e).at(&path))
        };
        let at = |name: &str| dir.join(format!("{prefix}{name}"));
        Ok(Self {
            f0: SpeakerF0Stats::parse(&read(F0_STATS_FILE)?)
                .map_err(|e| PipelineError::from(e).at(at(F0_STATS_FILE)))?,
            scales: ScaleStats::parse(&read(SCALE_STATS_FILE)?)
                .map_err(|e| PipelineError::from(e).at(at(SCALE_STATS_FILE)))?,
            mcep: McepStats::parse(&read(MCEP_STATS_FILE)?).map_err(|e| e.at(at(MCEP_STATS_FILE)))?,
        })
    }
}

/// An utterance left out of a corpus and why.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub id: String,
    pub reason: String,
}

/// Accepted utterances of one speaker with statistics computed from exactly
/// those utterances and the normalized training matrices derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerCorpus {
    ids: Vec<String>,
    utterances: Vec<UtteranceFeatures>,
    stats: SpeakerStats,
    rejected: Vec<Rejection>,
    /// `D x T` z-normalized MCEPs.
    mcep_norm: Vec<Tensor>,
    /// `10 x T` standardized CWT coefficients.
    cwt_std: Vec<Tensor>,
}

impl SpeakerCorpus {
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn utterances(&self) -> &[UtteranceFeatures] {
        &self.utterances
    }

    pub fn stats(&self) -> &SpeakerStats {
        &self.stats
    }

    pub fn rejected(&self) -> &[Rejection] {
        &self.rejected
    }

    pub fn training_matrices(&self, kind: FeatureKind) -> &[Tensor] {
        match kind {
            FeatureKind::Spectrum => &self.mcep_norm,
            FeatureKind::Prosody => &self.cwt_std,
        }
    }
}

/// `T x D` matrix to a `D x T` tensor.
pub fn mcep_to_tensor(m: &Array2<f64>) -> Tensor {
    let t = m.t();
    let data = t.iter().copied().collect();
    Tensor::new(vec![m.ncols(), m.nrows()], data).expect("non-empty matrix")
}

/// `D x T` tensor back to a `T x D` matrix.
pub fn tensor_to_mcep(t: &Tensor) -> Array2<f64> {
    let (d, n) = (t.shape()[0], t.shape()[1]);
    Array2::from_shape_vec((d, n), t.data().to_vec())
        .expect("rank-2 tensor")
        .reversed_axes()
        .as_standard_layout()
        .into_owned()
}

/// Normalized log-F0 and standardized CWT coefficients of one utterance.
pub fn prosody_features(
    u: &UtteranceFeatures,
    f0: &SpeakerF0Stats,
    scales: &ScaleStats,
) -> Result<(ContinuousLogF0, Vec<f64>, CwtMatrix), PipelineError> {
    let cont = ContinuousLogF0::from_f0(u.f0())?;
    let norm = normalize(&cont.values, f0);
    let raw = decompose10(&norm, u.frame_period_ms())?;
    Ok((cont, norm, standardize_scales(&raw, scales)))
}

fn cwt_tensor(m: &CwtMatrix) -> Tensor {
    mcep_to_tensor(m.coeffs())
}

/// Runs the preprocessing chain over every utterance. All-unvoiced
/// utterances are listed in [`SpeakerCorpus::rejected`]; dimension or frame
/// period disagreements are errors.
pub fn prepare_corpus(items: Vec<(String, UtteranceFeatures)>) -> Result<SpeakerCorpus, PipelineError> {
    let mut rejected = Vec::new();
    let mut accepted = Vec::new();
    let mut conts = Vec::new();
    for (id, u) in items {
        match ContinuousLogF0::from_f0(u.f0()) {
            Ok(c) => {
                conts.push(c);
                accepted.push((id, u));
            }
            Err(F0Error::AllUnvoiced) => rejected.push(Rejection {
                id,
                reason: "no voiced frames".into(),
            }),
            Err(e) => return Err(PipelineError::from(e)),
        }
    }
    let Some((_, first)) = accepted.first() else {
        return Err(PipelineError::NoUtterances {
            rejected: rejected.len(),
        });
    };
    let (period, mdim, adim) = (first.frame_period_ms(), first.mcep_dim(), first.ap_dim());
    for (id, u) in &accepted {
        if u.frame_period_ms() != period || u.mcep_dim() != mdim || u.ap_dim() != adim {
            return Err(PipelineError::Dimension(format!(
                "utterance {id}: period {} ms, mcep {} dims, ap {} dims; corpus has {period} ms, {mdim}, {adim}",
                u.frame_period_ms(),
                u.mcep_dim(),
                u.ap_dim()
            )));
        }
    }

    let f0 = compute_stats(conts.iter().map(|c| (c.values.as_slice(), &c.mask)))?;
    let raw: Vec<CwtMatrix> = conts
        .iter()
        .map(|c| decompose10(&normalize(&c.values, &f0), period))
        .collect::<Result<_, _>>()?;
    let scales = ScaleStats::from_corpus(raw.iter())?;
    let cwt_std = raw
        .iter()
        .map(|m| cwt_tensor(&standardize_scales(m, &scales)))
        .collect();
    let mcep = McepStats::from_corpus(accepted.iter().map(|(_, u)| u.mcep()))?;
    let mcep_norm = accepted
        .iter()
        .map(|(_, u)| mcep.normalize(u.mcep()).map(|m| mcep_to_tensor(&m)))
        .collect::<Result<_, _>>()?;
    let (ids, utterances) = accepted.into_iter().unzip();
    Ok(SpeakerCorpus {
        ids,
        utterances,
        stats: SpeakerStats { f0, scales, mcep },
        rejected,
        mcep_norm,
        cwt_std,
    })
}

/// Every `*.vcf` in `dir`, sorted by file name; ids are the file stems.
pub fn read_speaker_dir(dir: &Path) -> Result<Vec<(String, UtteranceFeatures)>, PipelineError> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| PipelineError::from(e).at(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "vcf"));
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let file = fs::File::open(&p).map_err(|e| PipelineError::from(e).at(&p))?;
            let u = read_features(std::io::BufReader::new(file))
                .map_err(|e| PipelineError::from(e).at(&p))?;
            Ok((id, u))
        })
        .collect()
}

/// Writes `<id>.vcf` for each utterance and the corpus stats files.
pub fn write_speaker_dir(dir: &Path, corpus: &SpeakerCorpus) -> Result<(), PipelineError> {
    fs::create_dir_all(dir)?;
    for (id, u) in corpus.ids.iter().zip(&corpus.utterances) {
        let mut buf = Vec::new();
        write_features(u, &mut buf)?;
        fs::write(dir.join(format!("{id}.vcf")), buf)?;
    }
    corpus.stats.save(dir, "")
}
