//! Corpus preparation, separate training of the spectrum and prosody
//! CycleGANs, frame-synchronous conversion, synthetic corpora and objective
//! metrics.

mod convert;
mod corpus;
mod metrics;
mod synth;

pub use convert::{
    apply_padded, convert_utterance, convert_with, lg_convert_utterance, ConversionModels,
    FeatureMap, IdentityMap, HYPER_FILE,
};
pub use corpus::{
    mcep_to_tensor, prepare_corpus, prosody_features, read_speaker_dir, tensor_to_mcep,
    write_speaker_dir, McepStats, Rejection, SpeakerCorpus, SpeakerStats, F0_STATS_FILE,
    MCEP_STATS_FILE, SCALE_STATS_FILE,
};
pub use metrics::{metrics, Metrics};
pub use synth::{make_synthetic_corpus, synth_id, synthesize, SpeakerSpec, SynthSpec};

use std::path::PathBuf;
use std::str::FromStr;

use crate::config::{Config, ConfigError};
use crate::cwt::{CwtError, SCALES};
use crate::cyclegan::{train, GanError, LossLog, ModelPair};
use crate::f0::F0Error;
use crate::features::FeatureError;
use crate::nn::NnError;

/// Spectral feature dimension the spectrum networks are built for.
pub const SPECTRUM_CHANNELS: usize = 24;
pub const PROSODY_CHANNELS: usize = SCALES;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    F0(#[from] F0Error),
    #[error(transparent)]
    Cwt(#[from] CwtError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: Box<PipelineError>,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no usable utterances ({rejected} rejected)")]
    NoUtterances { rejected: usize },
    #[error("invalid synthetic corpus spec: {0}")]
    Synth(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("stats file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    pub fn at(self, path: impl Into<PathBuf>) -> Self {
        PipelineError::File {
            path: path.into(),
            source: Box::new(self),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Spectrum,
    Prosody,
}

impl FeatureKind {
    pub fn channels(self) -> usize {
        match self {
            FeatureKind::Spectrum => SPECTRUM_CHANNELS,
            FeatureKind::Prosody => PROSODY_CHANNELS,
        }
    }

    /// File-name prefix in a model directory.
    pub fn prefix(self) -> &'static str {
        match self {
            FeatureKind::Spectrum => "spectrum",
            FeatureKind::Prosody => "prosody",
        }
    }
}

impl FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spectrum" => Ok(FeatureKind::Spectrum),
            "prosody" => Ok(FeatureKind::Prosody),
            other => Err(format!("unknown feature kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    XtoY,
    YtoX,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::XtoY => "x2y",
            Direction::YtoX => "y2x",
        }
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "x2y" => Ok(Direction::XtoY),
            "y2x" => Ok(Direction::YtoX),
            other => Err(format!("unknown direction `{other}` (expected x2y or y2x)")),
        }
    }
}

/// Trains one CycleGAN on the `kind` features of two corpora. With a model
/// directory, the initial and every `checkpoint_every`-th state are written
/// as `<kind>_{gxy,gyx,dx,dy}.vcm` and losses go to `<kind>_losses.csv`; a
/// diverging run leaves the last good checkpoint in place.
pub fn train_pipeline(
    x: &SpeakerCorpus,
    y: &SpeakerCorpus,
    kind: FeatureKind,
    cfg: &Config,
    out: Option<&std::path::Path>,
) -> Result<ModelPair, PipelineError> {
    let channels = kind.channels();
    for (name, corpus) in [("x", x), ("y", y)] {
        let got = corpus.training_matrices(kind)[0].shape()[0];
        if got != channels {
            return Err(PipelineError::Dimension(format!(
                "corpus {name} has {got} {} channels, networks expect {channels}",
                kind.prefix()
            )));
        }
    }
    let gen = cfg.gen_config(channels);
    if cfg.hyper.crop_frames % gen.downsample_factor() != 0 {
        return Err(PipelineError::Dimension(format!(
            "crop_frames {} is not a multiple of the generator downsample factor {}",
            cfg.hyper.crop_frames,
            gen.downsample_factor()
        )));
    }
    let seed = cfg.hyper.seed ^ kind as u64;
    let mut pair = ModelPair::new(gen, cfg.disc_config(), cfg.hyper.adam(), seed)?;
    let prefix = kind.prefix();
    let mut log = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            pair.save(dir, prefix)?;
            let file = std::fs::File::create(dir.join(format!("{prefix}_losses.csv")))?;
            Some(LossLog::new(std::io::BufWriter::new(file))?)
        }
        None => None,
    };
    let h = &cfg.hyper;
    let result = train(
        &mut pair,
        x.training_matrices(kind),
        y.training_matrices(kind),
        h,
        |p, r| {
            if let Some(log) = log.as_mut() {
                if r.iter % h.log_every == 0 {
                    log.append(r)?;
                }
                let done = r.iter + 1;
                if done % cfg.checkpoint_every == 0 || done == h.iterations {
                    log.flush()?;
                    p.save(out.expect("log implies a directory"), prefix)?;
                }
            }
            Ok(())
        },
    );
    if let Some(log) = log.as_mut() {
        log.flush()?;
    }
    result?;
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        for d in [Direction::XtoY, Direction::YtoX] {
            assert_eq!(d.label().parse::<Direction>().unwrap(), d);
        }
        for k in [FeatureKind::Spectrum, FeatureKind::Prosody] {
            assert_eq!(k.prefix().parse::<FeatureKind>().unwrap(), k);
        }
        assert!("both".parse::<FeatureKind>().is_err());
        assert_eq!(FeatureKind::Prosody.channels(), 10);
        assert_eq!(FeatureKind::Spectrum.channels(), 24);
    }
}
