use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};

use super::corpus::{prepare_corpus, SpeakerCorpus};
use super::PipelineError;
use crate::features::{UtteranceFeatures, DEFAULT_FRAME_PERIOD_MS, DEFAULT_MCEP_DIM};
use crate::stats::mean_std;

/// Ground-truth statistics of one synthetic speaker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerSpec {
    /// Voiced log-F0 mean and std.
    pub logf0_mean: f64,
    pub logf0_std: f64,
    /// Added to every MCEP dimension's base level.
    pub mcep_offset: f64,
}

/// Two-speaker synthetic corpus description. Log-F0 intonation is a short
/// and a long sinusoid with random phases plus white noise, standardized
/// over the pooled voiced frames of the speaker so the generated voiced
/// log-F0 has exactly the requested mean and std. Voicing alternates
/// geometric runs; MCEPs are AR(1) around per-dimension levels.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub x: SpeakerSpec,
    pub y: SpeakerSpec,
    pub utterances: usize,
    pub frames: usize,
    pub frame_period_ms: f64,
    pub sample_rate_hz: u32,
    pub mcep_dim: usize,
    pub ap_dim: usize,
    pub short_period_ms: f64,
    pub short_amp: f64,
    pub long_period_ms: f64,
    pub long_amp: f64,
    pub noise: f64,
    pub voiced_fraction: f64,
    /// Mean voiced run length in frames; unvoiced runs get the mean that
    /// yields `voiced_fraction`.
    pub voiced_run: f64,
    pub mcep_std: f64,
    pub mcep_ar: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            x: SpeakerSpec {
                logf0_mean: 120f64.ln(),
                logf0_std: 0.15,
                mcep_offset: -1.0,
            },
            y: SpeakerSpec {
                logf0_mean: 220f64.ln(),
                logf0_std: 0.2,
                mcep_offset: 1.0,
            },
            utterances: 16,
            frames: 512,
            frame_period_ms: DEFAULT_FRAME_PERIOD_MS,
            sample_rate_hz: 16_000,
            mcep_dim: DEFAULT_MCEP_DIM,
            ap_dim: 1,
            short_period_ms: 200.0,
            short_amp: 0.5,
            long_period_ms: 2000.0,
            long_amp: 1.0,
            noise: 0.3,
            voiced_fraction: 0.7,
            voiced_run: 40.0,
            mcep_std: 0.5,
            mcep_ar: 0.9,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: &str| Err(PipelineError::Synth(msg.into()));
        for (name, s) in [("x", &self.x), ("y", &self.y)] {
            if !s.logf0_mean.is_finite() || !s.mcep_offset.is_finite() {
                return bad(&format!("speaker {name} has a non-finite mean"));
            }
            if !(s.logf0_std > 0.0 && s.logf0_std.is_finite()) {
                return bad(&format!("speaker {name} log-F0 std must be positive"));
            }
        }
        if self.utterances == 0 || self.frames < 2 {
            return bad("need at least one utterance of two frames");
        }
        if self.mcep_dim == 0 || self.ap_dim == 0 {
            return bad("feature dimensions must be positive");
        }
        if !(self.frame_period_ms > 0.0) || self.sample_rate_hz == 0 {
            return bad("frame period and sample rate must be positive");
        }
        if !(self.short_period_ms > 0.0 && self.long_period_ms > 0.0) {
            return bad("sinusoid periods must be positive");
        }
        let amps = [self.short_amp, self.long_amp, self.noise];
        if amps.iter().any(|a| !(a.is_finite() && *a >= 0.0)) || amps.iter().all(|&a| a == 0.0) {
            return bad("intonation amplitudes must be nonnegative and not all zero");
        }
        if !(self.voiced_fraction > 0.0 && self.voiced_fraction < 1.0) {
            return bad("voiced_fraction must lie in (0, 1)");
        }
        if !(self.voiced_run >= 1.0 && self.unvoiced_run() >= 1.0) {
            return bad("mean voiced and unvoiced run lengths must be at least one frame");
        }
        if !(self.mcep_std > 0.0 && self.mcep_std.is_finite()) {
            return bad("mcep_std must be positive");
        }
        if !(0.0..1.0).contains(&self.mcep_ar) {
            return bad("mcep_ar must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn unvoiced_run(&self) -> f64 {
        self.voiced_run * (1.0 - self.voiced_fraction) / self.voiced_fraction
    }

    /// Level of MCEP dimension `d` for a speaker.
    pub fn mcep_level(&self, s: &SpeakerSpec, d: usize) -> f64 {
        s.mcep_offset + 2.0 * 0.8f64.powi(d as i32)
    }
}

/// Run length with mean `mean` (>= 1), support 1, 2, ...
fn run_length(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    let g = Geometric::new(1.0 / mean).expect("mean >= 1");
    1 + g.sample(rng) as usize
}

fn voicing(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut flags = Vec::with_capacity(spec.frames);
    let mut voiced = rng.random_bool(spec.voiced_fraction);
    while flags.len() < spec.frames {
        let mean = if voiced { spec.voiced_run } else { spec.unvoiced_run() };
        let n = run_length(rng, mean).min(spec.frames - flags.len());
        flags.extend(std::iter::repeat_n(voiced, n));
        voiced = !voiced;
    }
    if !flags.contains(&true) {
        // Every utterance keeps at least one voiced run.
        let n = run_length(rng, spec.voiced_run).min(spec.frames);
        let start = rng.random_range(0..=spec.frames - n);
        flags[start..start + n].fill(true);
    }
    flags
}

fn intonation(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    let (ps, pl) = (
        spec.short_period_ms / spec.frame_period_ms,
        spec.long_period_ms / spec.frame_period_ms,
    );
    let (phs, phl) = (rng.random::<f64>() * tau, rng.random::<f64>() * tau);
    (0..spec.frames)
        .map(|t| {
            let t = t as f64;
            let n: f64 = StandardNormal.sample(rng);
            spec.short_amp * (tau * t / ps + phs).sin() + spec.long_amp * (tau * t / pl + phl).sin() + spec.noise * n
        })
        .collect()
}

fn mcep(spec: &SynthSpec, s: &SpeakerSpec, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let innov = spec.mcep_std * (1.0 - spec.mcep_ar * spec.mcep_ar).sqrt();
    let mut m = Array2::zeros((spec.frames, spec.mcep_dim));
    for d in 0..spec.mcep_dim {
        let mut e = spec.mcep_std * rng.sample::<f64, _>(StandardNormal);
        let level = spec.mcep_level(s, d);
        for t in 0..spec.frames {
            if t > 0 {
                e = spec.mcep_ar * e + innov * rng.sample::<f64, _>(StandardNormal);
            }
            m[(t, d)] = level + e;
        }
    }
    m
}

fn speaker(spec: &SynthSpec, s: &SpeakerSpec, rng: &mut ChaCha8Rng) -> Result<Vec<UtteranceFeatures>, PipelineError> {
    let raw: Vec<(Vec<bool>, Vec<f64>, Array2<f64>, Array2<f64>)> = (0..spec.utterances)
        .map(|_| {
            let v = voicing(spec, rng);
            let z = intonation(spec, rng);
            let m = mcep(spec, s, rng);
            let ap = Array2::from_shape_fn((spec.frames, spec.ap_dim), |_| rng.random::<f64>());
            (v, z, m, ap)
        })
        .collect();
    let pooled = raw
        .iter()
        .flat_map(|(v, z, _, _)| z.iter().zip(v).filter(|(_, &on)| on).map(|(&x, _)| x));
    let (zm, zs, _) = mean_std(pooled).expect("at least one voiced frame");
    if !(zs > 0.0) {
        return Err(PipelineError::Synth("voiced intonation has zero variance".into()));
    }
    raw.into_iter()
        .map(|(v, z, m, ap)| {
            let f0 = z
                .iter()
                .zip(&v)
                .map(|(&x, &on)| {
                    if on {
                        (s.logf0_mean + s.logf0_std * (x - zm) / zs).exp()
                    } else {
                        0.0
                    }
                })
                .collect();
            Ok(UtteranceFeatures::new(spec.frame_period_ms, spec.sample_rate_hz, f0, m, ap)?)
        })
        .collect()
}

/// Raw utterances of both speakers. Speaker X and Y draw from independent
/// streams of one seeded generator.
pub fn synthesize(
    spec: &SynthSpec,
    seed: u64,
) -> Result<(Vec<UtteranceFeatures>, Vec<UtteranceFeatures>), PipelineError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let xs = speaker(spec, &spec.x, &mut rng)?;
    rng.set_stream(1);
    rng.set_word_pos(0);
    let ys = speaker(spec, &spec.y, &mut rng)?;
    Ok((xs, ys))
}

/// Utterance ids in a synthetic corpus.
pub fn synth_id(i: usize) -> String {
    format!("utt{i:04}")
}

pub fn make_synthetic_corpus(spec: &SynthSpec, seed: u64) -> Result<(SpeakerCorpus, SpeakerCorpus), PipelineError> {
    let (xs, ys) = synthesize(spec, seed)?;
    let named = |us: Vec<UtteranceFeatures>| us.into_iter().enumerate().map(|(i, u)| (synth_id(i), u)).collect();
    Ok((prepare_corpus(named(xs))?, prepare_corpus(named(ys))?))
}
