use std::fs;
use std::path::Path;

use super::corpus::{mcep_to_tensor, prosody_features, tensor_to_mcep, SpeakerStats};
use super::{Direction, FeatureKind, PipelineError};
use crate::config::Config;
use crate::cwt::{destandardize_scales, recompose10, reflect, CwtMatrix};
use crate::cyclegan::ModelPair;
use crate::f0::{denormalize, lg_convert, reapply_voicing, F0Error};
use crate::features::UtteranceFeatures;
use crate::nn::{Generator, NnError, Tensor};

/// A frame-synchronous map on `C x T` feature matrices.
pub trait FeatureMap {
    fn map(&self, x: &Tensor) -> Result<Tensor, NnError>;

    /// `T` must be a multiple of this.
    fn factor(&self) -> usize;
}

impl FeatureMap for Generator {
    fn map(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.infer(x)
    }

    fn factor(&self) -> usize {
        self.downsample_factor()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityMap;

impl FeatureMap for IdentityMap {
    fn map(&self, x: &Tensor) -> Result<Tensor, NnError> {
        Ok(x.clone())
    }

    fn factor(&self) -> usize {
        1
    }
}

/// Mirror-pads the time axis up to a multiple of `f.factor()`, applies `f`
/// and crops the result back to the input length.
pub fn apply_padded(f: &dyn FeatureMap, x: &Tensor) -> Result<Tensor, NnError> {
    if x.rank() != 2 {
        return Err(NnError::Shape(format!("expected [C, T], got {:?}", x.shape())));
    }
    let (c_n, t_len) = (x.shape()[0], x.shape()[1]);
    let factor = f.factor().max(1);
    let padded_len = t_len.div_ceil(factor) * factor;
    if padded_len == t_len {
        return f.map(x);
    }
    let mut data = Vec::with_capacity(c_n * padded_len);
    for row in x.data().chunks(t_len) {
        data.extend((0..padded_len).map(|t| row[reflect(t as isize, t_len)]));
    }
    let y = f.map(&Tensor::new(vec![c_n, padded_len], data)?)?;
    let out_c = y.shape()[0];
    let cropped = y
        .data()
        .chunks(padded_len)
        .flat_map(|row| row[..t_len].iter().copied())
        .collect();
    Tensor::new(vec![out_c, t_len], cropped)
}

fn check_mcep(u: &UtteranceFeatures, src: &SpeakerStats, tgt: &SpeakerStats) -> Result<(), PipelineError> {
    if u.mcep_dim() != src.mcep.dim() || u.mcep_dim() != tgt.mcep.dim() {
        return Err(PipelineError::Dimension(format!(
            "utterance has {} mcep dims, statistics have {} (source) and {} (target)",
            u.mcep_dim(),
            src.mcep.dim(),
            tgt.mcep.dim()
        )));
    }
    Ok(())
}

fn map_mcep(
    u: &UtteranceFeatures,
    spectrum: &dyn FeatureMap,
    src: &SpeakerStats,
    tgt: &SpeakerStats,
) -> Result<ndarray::Array2<f64>, PipelineError> {
    let norm = mcep_to_tensor(&src.mcep.normalize(u.mcep())?);
    let mapped = apply_padded(spectrum, &norm)?;
    tgt.mcep.denormalize(&tensor_to_mcep(&mapped))
}

/// Runs the full conversion chain with arbitrary maps. The source voicing
/// mask, frame count and APs are carried over unchanged.
pub fn convert_with(
    u: &UtteranceFeatures,
    spectrum: &dyn FeatureMap,
    prosody: &dyn FeatureMap,
    src: &SpeakerStats,
    tgt: &SpeakerStats,
) -> Result<UtteranceFeatures, PipelineError> {
    check_mcep(u, src, tgt)?;
    let mcep = map_mcep(u, spectrum, src, tgt)?;

    let (cont, _, standardized) = prosody_features(u, &src.f0, &src.scales)?;
    let mapped = apply_padded(prosody, &mcep_to_tensor(standardized.coeffs()))?;
    let coeffs = CwtMatrix::new(tensor_to_mcep(&mapped), u.frame_period_ms())?;
    let norm = recompose10(&destandardize_scales(&coeffs, &tgt.scales));
    let hz: Vec<f64> = denormalize(&norm, &tgt.f0).iter().map(|v| v.exp()).collect();
    let f0 = reapply_voicing(&hz, &cont.mask)?;

    Ok(u.with_mcep(mcep)?.with_f0(f0)?)
}

/// Trained spectrum and prosody CycleGANs with the statistics of both
/// speakers.
#[derive(Debug, Clone)]
pub struct ConversionModels {
    pub spectrum: ModelPair,
    pub prosody: ModelPair,
    pub x: SpeakerStats,
    pub y: SpeakerStats,
}

pub const HYPER_FILE: &str = "hyper.cfg";

impl ConversionModels {
    /// Model directory layout: `hyper.cfg`, `x_*` / `y_*` stats files and
    /// `<kind>_{gxy,gyx,dx,dy}.vcm`.
    pub fn save(&self, dir: &Path, cfg: &Config) -> Result<(), PipelineError> {
        fs::create_dir_all(dir)?;
        Self::save_metadata(dir, cfg, &self.x, &self.y)?;
        self.spectrum.save(dir, FeatureKind::Spectrum.prefix())?;
        self.prosody.save(dir, FeatureKind::Prosody.prefix())?;
        Ok(())
    }

    /// Everything but the networks; written before training starts.
    pub fn save_metadata(dir: &Path, cfg: &Config, x: &SpeakerStats, y: &SpeakerStats) -> Result<(), PipelineError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(HYPER_FILE), cfg.render())?;
        x.save(dir, "x_")?;
        y.save(dir, "y_")
    }

    pub fn load_config(dir: &Path) -> Result<Config, PipelineError> {
        let path = dir.join(HYPER_FILE);
        let text = fs::read_to_string(&path).map_err(|e| PipelineError::from(e).at(&path))?;
        Config::parse(&text).map_err(|e| PipelineError::from(e).at(&path))
    }

    pub fn load_pair(dir: &Path, kind: FeatureKind, cfg: &Config) -> Result<ModelPair, PipelineError> {
        Ok(ModelPair::load(
            dir,
            kind.prefix(),
            cfg.gen_config(kind.channels()),
            cfg.disc_config(),
            cfg.hyper.adam(),
        )?)
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let cfg = Self::load_config(dir)?;
        Ok(Self {
            spectrum: Self::load_pair(dir, FeatureKind::Spectrum, &cfg)?,
            prosody: Self::load_pair(dir, FeatureKind::Prosody, &cfg)?,
            x: SpeakerStats::load(dir, "x_")?,
            y: SpeakerStats::load(dir, "y_")?,
        })
    }

    /// Source stats, target stats and the forward generators for `dir`.
    pub fn oriented(&self, dir: Direction) -> (&SpeakerStats, &SpeakerStats, &Generator, &Generator) {
        match dir {
            Direction::XtoY => (&self.x, &self.y, &self.spectrum.g_xy, &self.prosody.g_xy),
            Direction::YtoX => (&self.y, &self.x, &self.spectrum.g_yx, &self.prosody.g_yx),
        }
    }
}

pub fn convert_utterance(
    u: &UtteranceFeatures,
    m: &ConversionModels,
    dir: Direction,
) -> Result<UtteranceFeatures, PipelineError> {
    let (src, tgt, spectrum, prosody) = m.oriented(dir);
    convert_with(u, spectrum, prosody, src, tgt)
}

/// Baseline conversion: F0 through the LG transform, MCEPs through
/// `spectrum` or passed through unchanged when it is `None`.
pub fn lg_convert_utterance(
    u: &UtteranceFeatures,
    spectrum: Option<&dyn FeatureMap>,
    src: &SpeakerStats,
    tgt: &SpeakerStats,
) -> Result<UtteranceFeatures, PipelineError> {
    if u.voicing().voiced_count() == 0 {
        return Err(F0Error::AllUnvoiced.into());
    }
    let f0 = lg_convert(u.f0(), &src.f0, &tgt.f0);
    let out = u.with_f0(f0)?;
    match spectrum {
        Some(map) => {
            check_mcep(u, src, tgt)?;
            Ok(out.with_mcep(map_mcep(u, map, src, tgt)?)?)
        }
        None => Ok(out),
    }
}
