//! Flat `key = value` run configuration.
//!
//! Every training hyperparameter, architecture knob and synthetic-corpus
//! field has a key. Lines starting with `#` are comments. Unknown,
//! duplicate and malformed keys are errors naming the key; missing keys keep
//! their defaults.

use crate::cyclegan::GanHyper;
use crate::nn::{DiscConfig, GenConfig};
use crate::pipeline::SynthSpec;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: invalid value for `{key}`: {msg}")]
    Value { line: usize, key: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub hyper: GanHyper,
    /// Generator layout; `channels` is set per feature kind.
    pub gen: GenConfig,
    pub disc: DiscConfig,
    pub synth: SynthSpec,
    /// Checkpoints are written every this many iterations and at the end.
    pub checkpoint_every: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            hyper: GanHyper::desk(),
            gen: GenConfig::desk(0),
            disc: DiscConfig::default(),
            synth: SynthSpec::default(),
            checkpoint_every: 500,
        }
    }
}

trait Value: Sized {
    fn render(&self) -> String;
    fn parse(s: &str) -> Result<Self, String>;
}

impl Value for f64 {
    fn render(&self) -> String {
        format!("{self:?}")
    }

    fn parse(s: &str) -> Result<Self, String> {
        let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err("must be finite".into())
        }
    }
}

macro_rules! int_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn render(&self) -> String {
                self.to_string()
            }

            fn parse(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
        }
    )*};
}

int_value!(u32, u64, usize);

impl Value for bool {
    fn render(&self) -> String {
        self.to_string()
    }

    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err("expected true or false".into()),
        }
    }
}

macro_rules! keys {
    ($($key:literal => $($field:ident).+ : $t:ty,)*) => {
        /// Every accepted key, in render order.
        pub const KEYS: &[&str] = &[$($key),*];

        fn get(c: &Config, key: &str) -> Option<String> {
            match key {
                $($key => Some(Value::render(&c.$($field).+)),)*
                _ => None,
            }
        }

        fn set(c: &mut Config, key: &str, v: &str) -> Option<Result<(), String>> {
            match key {
                $($key => Some(<$t as Value>::parse(v).map(|v| c.$($field).+ = v)),)*
                _ => None,
            }
        }
    };
}

keys! {
    "lambda_cyc" => hyper.lambda_cyc: f64,
    "lambda_id" => hyper.lambda_id: f64,
    "id_cutoff_iters" => hyper.id_cutoff_iters: u64,
    "lr_g" => hyper.lr_g: f64,
    "lr_d" => hyper.lr_d: f64,
    "const_iters" => hyper.const_iters: u64,
    "decay_iters" => hyper.decay_iters: u64,
    "beta1" => hyper.beta1: f64,
    "beta2" => hyper.beta2: f64,
    "adam_eps" => hyper.adam_eps: f64,
    "crop_frames" => hyper.crop_frames: usize,
    "iterations" => hyper.iterations: u64,
    "seed" => hyper.seed: u64,
    "saturating" => hyper.saturating: bool,
    "clamp_delta" => hyper.clamp_delta: f64,
    "log_every" => hyper.log_every: u64,
    "checkpoint_every" => checkpoint_every: u64,
    "gen_width" => gen.width: usize,
    "gen_n_down" => gen.n_down: usize,
    "gen_n_res" => gen.n_res: usize,
    "gen_n_up" => gen.n_up: usize,
    "gen_k_in" => gen.k_in: usize,
    "gen_k_down" => gen.k_down: usize,
    "gen_k_res" => gen.k_res: usize,
    "gen_k_up" => gen.k_up: usize,
    "gen_k_out" => gen.k_out: usize,
    "disc_base" => disc.base: usize,
    "disc_n_layers" => disc.n_layers: usize,
    "disc_kernel" => disc.kernel: usize,
    "disc_instance_norm" => disc.instance_norm: bool,
    "synth_x_logf0_mean" => synth.x.logf0_mean: f64,
    "synth_x_logf0_std" => synth.x.logf0_std: f64,
    "synth_x_mcep_offset" => synth.x.mcep_offset: f64,
    "synth_y_logf0_mean" => synth.y.logf0_mean: f64,
    "synth_y_logf0_std" => synth.y.logf0_std: f64,
    "synth_y_mcep_offset" => synth.y.mcep_offset: f64,
    "synth_utterances" => synth.utterances: usize,
    "synth_frames" => synth.frames: usize,
    "synth_frame_period_ms" => synth.frame_period_ms: f64,
    "synth_sample_rate_hz" => synth.sample_rate_hz: u32,
    "synth_mcep_dim" => synth.mcep_dim: usize,
    "synth_ap_dim" => synth.ap_dim: usize,
    "synth_short_period_ms" => synth.short_period_ms: f64,
    "synth_short_amp" => synth.short_amp: f64,
    "synth_long_period_ms" => synth.long_period_ms: f64,
    "synth_long_amp" => synth.long_amp: f64,
    "synth_noise" => synth.noise: f64,
    "synth_voiced_fraction" => synth.voiced_fraction: f64,
    "synth_voiced_run" => synth.voiced_run: f64,
    "synth_mcep_std" => synth.mcep_std: f64,
    "synth_mcep_ar" => synth.mcep_ar: f64,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        let mut seen = std::collections::HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line,
                    text: content.to_string(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Malformed {
                    line,
                    text: content.to_string(),
                });
            }
            match set(&mut cfg, key, value) {
                None => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                    })
                }
                Some(Err(msg)) => {
                    return Err(ConfigError::Value {
                        line,
                        key: key.to_string(),
                        msg,
                    })
                }
                Some(Ok(())) => {}
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let v = get(self, key).expect("listed key");
            s.push_str(&format!("{key} = {v}\n"));
        }
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.hyper.validate().map_err(|e| invalid(&e))?;
        self.gen_config(1).validate().map_err(|e| invalid(&e))?;
        self.disc.validate().map_err(|e| invalid(&e))?;
        self.synth.validate().map_err(|e| invalid(&e))?;
        if self.checkpoint_every == 0 {
            return Err(ConfigError::Invalid("checkpoint_every must be positive".into()));
        }
        Ok(())
    }

    pub fn gen_config(&self, channels: usize) -> GenConfig {
        GenConfig {
            channels,
            ..self.gen
        }
    }

    pub fn disc_config(&self) -> DiscConfig {
        self.disc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.hyper.lambda_cyc, 10.0);
        assert_eq!(c.hyper.iterations, 2000);
        assert_eq!(c.hyper.crop_frames, 64);
    }

    #[test]
    fn override_and_comments() {
        let c = Config::parse("# run\n\n  lambda_cyc = 7 \ndisc_instance_norm=true\n").unwrap();
        assert_eq!(c.hyper.lambda_cyc, 7.0);
        assert!(c.disc.instance_norm);
        assert_eq!(c.hyper.lambda_id, 5.0);
    }

    #[test]
    fn errors_name_the_key() {
        let e = Config::parse("lambda_cyc = abc").unwrap_err();
        assert!(matches!(&e, ConfigError::Value { key, line: 1, .. } if key == "lambda_cyc"));
        assert!(e.to_string().contains("lambda_cyc"));
        assert!(matches!(
            Config::parse("lambda_cyk = 1"),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
        assert!(matches!(
            Config::parse("seed = 1\nseed = 2"),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
        assert!(matches!(Config::parse("seed"), Err(ConfigError::Malformed { .. })));
        assert!(matches!(Config::parse("seed = -1"), Err(ConfigError::Value { .. })));
        assert!(matches!(Config::parse("lr_g = inf"), Err(ConfigError::Value { .. })));
        assert!(matches!(Config::parse("gen_k_in = 4"), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn render_lists_every_key_once() {
        let text = Config::default().render();
        assert_eq!(text.lines().count(), KEYS.len());
        let mut keys: Vec<_> = KEYS.to_vec();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), KEYS.len());
    }

    proptest! {
        #[test]
        fn parse_render_fixed_point(
            lc in 0.001f64..100.0,
            lr in 1e-6f64..1e-2,
            seed in any::<u64>(),
            iters in 0u64..1_000_000,
            sat in any::<bool>(),
            width in 1usize..128,
            mean in 3.0f64..7.0,
        ) {
            let mut c = Config::default();
            c.hyper.lambda_cyc = lc;
            c.hyper.lr_g = lr;
            c.hyper.seed = seed;
            c.hyper.iterations = iters;
            c.hyper.saturating = sat;
            c.gen.width = width;
            c.synth.y.logf0_mean = mean;
            let once = Config::parse(&c.render()).unwrap();
            prop_assert_eq!(&once, &c);
            prop_assert_eq!(once.render(), c.render());
        }
    }
}
