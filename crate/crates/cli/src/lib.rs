//! Command surface of the `spvc` tool. Each subcommand maps one pipeline
//! stage onto files.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use spvc::config::Config;
use spvc::cwt::{decompose10, recompose10, CwtMatrix};
use spvc::f0::{compute_stats, denormalize, normalize, reapply_voicing, ContinuousLogF0, SpeakerF0Stats};
use spvc::features::{read_features, validate, write_features, UtteranceFeatures};
use spvc::gradcheck::{check_objectives, check_ops, CheckResult, FD_EPS, FD_TOL};
use spvc::pipeline::{
    convert_utterance, lg_convert_utterance, make_synthetic_corpus, metrics, prepare_corpus, prosody_features,
    read_speaker_dir, train_pipeline, write_speaker_dir, ConversionModels, Direction, FeatureKind, FeatureMap,
    SpeakerStats, F0_STATS_FILE,
};

#[derive(Debug, Parser)]
#[command(name = "spvc", version, about = "Non-parallel spectrum and prosody conversion with CycleGANs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Spectrum,
    Prosody,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    X2y,
    Y2x,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::X2y => Direction::XtoY,
            DirectionArg::Y2x => Direction::YtoX,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a two-speaker synthetic corpus as `<out>/x` and `<out>/y`.
    SynthData {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Configuration file; `synth_*` keys describe the corpus.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Random seed.
        #[arg(long, env = "VC_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Compute speaker statistics and write a prepared corpus directory.
    Prep {
        /// Directory of `.vcf` utterances of one speaker.
        #[arg(long)]
        input: PathBuf,
        /// Output corpus directory (utterances, stats files, rejects.txt).
        #[arg(long)]
        out: PathBuf,
        /// Print one CSV diagnostics row per utterance to stdout.
        #[arg(long)]
        per_utterance: bool,
        /// Also write each utterance's standardized CWT coefficients as `<id>.cwt.csv`.
        #[arg(long)]
        dump: bool,
    },
    /// Decompose an utterance's normalized log-F0 into 10 CWT scales (CSV).
    CwtAnalyze {
        /// Input `.vcf` file.
        #[arg(long)]
        input: PathBuf,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        /// Speaker corpus directory whose stats.txt normalizes log-F0; defaults to the utterance's own statistics.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Recompose F0 from a CWT CSV onto the voicing of a template utterance.
    CwtSynth {
        /// CWT CSV written by cwt-analyze.
        #[arg(long)]
        input: PathBuf,
        /// Utterance providing voicing, MCEPs, APs and frame period.
        #[arg(long)]
        template: PathBuf,
        /// Output `.vcf` file.
        #[arg(long)]
        out: PathBuf,
        /// Speaker corpus directory whose stats.txt denormalizes log-F0; defaults to the template's own statistics.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Train the spectrum and/or prosody CycleGAN on two corpus directories.
    Train {
        /// Source speaker directory of `.vcf` files.
        #[arg(long)]
        x: PathBuf,
        /// Target speaker directory of `.vcf` files.
        #[arg(long)]
        y: PathBuf,
        /// Model output directory.
        #[arg(long)]
        out: PathBuf,
        /// Which CycleGAN to train; `both` trains the two concurrently.
        #[arg(long, value_enum, default_value_t = KindArg::Both)]
        kind: KindArg,
        /// Configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Random seed; overrides the configuration file.
        #[arg(long, env = "VC_SEED")]
        seed: Option<u64>,
        /// Iteration count; overrides the configuration file.
        #[arg(long)]
        iterations: Option<u64>,
    },
    /// Convert utterances with trained models.
    Convert {
        /// Model directory written by train.
        #[arg(long)]
        model: PathBuf,
        /// Input `.vcf` file or directory.
        #[arg(long)]
        input: PathBuf,
        /// Output `.vcf` file, or directory when the input is a directory.
        #[arg(long)]
        out: PathBuf,
        /// Conversion direction.
        #[arg(long, value_enum)]
        direction: DirectionArg,
    },
    /// Baseline conversion: log-Gaussian F0 transform, MCEPs passed through or mapped by a spectrum model.
    LgConvert {
        /// Source speaker corpus directory (stats files).
        #[arg(long)]
        src: PathBuf,
        /// Target speaker corpus directory (stats files).
        #[arg(long)]
        tgt: PathBuf,
        /// Input `.vcf` file or directory.
        #[arg(long)]
        input: PathBuf,
        /// Output `.vcf` file, or directory when the input is a directory.
        #[arg(long)]
        out: PathBuf,
        /// Model directory whose spectrum generator maps the MCEPs; passthrough when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Spectrum generator direction when --model is given.
        #[arg(long, value_enum, default_value_t = DirectionArg::X2y)]
        direction: DirectionArg,
    },
    /// Objective metrics between reference and converted utterances.
    Eval {
        /// Reference `.vcf` file or directory.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Hypothesis `.vcf` file or directory (matched by file name).
        #[arg(long)]
        hyp: PathBuf,
    },
    /// Finite-difference gradient checks of every op and both objectives.
    Gradcheck {
        /// Number of consecutive seeds to check.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// First seed.
        #[arg(long, env = "VC_SEED", default_value_t = 0)]
        seed: u64,
    },
}

fn read_vcf(path: &Path) -> Result<UtteranceFeatures> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_features(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn write_vcf(path: &Path, u: &UtteranceFeatures) -> Result<()> {
    let mut buf = Vec::new();
    write_features(u, &mut buf)?;
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Config::parse(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(Config::default()),
    }
}

fn read_f0_stats(dir: &Path) -> Result<SpeakerF0Stats> {
    let path = dir.join(F0_STATS_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    SpeakerF0Stats::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

fn own_f0_stats(u: &UtteranceFeatures) -> Result<SpeakerF0Stats> {
    let cont = ContinuousLogF0::from_f0(u.f0())?;
    Ok(compute_stats([(cont.values.as_slice(), &cont.mask)])?)
}

/// Applies `f` to one file, or to every `.vcf` of a directory.
fn map_files(input: &Path, out: &Path, f: impl Fn(&UtteranceFeatures) -> Result<UtteranceFeatures>) -> Result<usize> {
    if input.is_dir() {
        fs::create_dir_all(out)?;
        let items = read_speaker_dir(input)?;
        for (id, u) in &items {
            let converted = f(u).with_context(|| format!("utterance {id}"))?;
            write_vcf(&out.join(format!("{id}.vcf")), &converted)?;
        }
        Ok(items.len())
    } else {
        write_vcf(out, &f(&read_vcf(input)?)?)?;
        Ok(1)
    }
}

fn fmt_corr(c: Option<f64>) -> String {
    c.map_or_else(|| "nan".to_string(), |v| format!("{v}"))
}

fn train_kind(
    x: &spvc::pipeline::SpeakerCorpus,
    y: &spvc::pipeline::SpeakerCorpus,
    kind: FeatureKind,
    cfg: &Config,
    out: &Path,
) -> Result<()> {
    train_pipeline(x, y, kind, cfg, Some(out)).with_context(|| format!("training {}", kind.prefix()))?;
    eprintln!("{}: {} iterations done", kind.prefix(), cfg.hyper.iterations);
    Ok(())
}

fn print_check(out: &mut impl Write, r: &CheckResult) -> Result<()> {
    writeln!(
        out,
        "{},{},{},{:e},{}",
        r.name,
        r.seed,
        r.checked,
        r.max_rel_err,
        if r.passed() { "pass" } else { "FAIL" }
    )?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    match cli.command {
        Command::SynthData { out: dir, config, seed } => {
            let cfg = load_config(config.as_deref())?;
            let (x, y) = make_synthetic_corpus(&cfg.synth, seed)?;
            write_speaker_dir(&dir.join("x"), &x)?;
            write_speaker_dir(&dir.join("y"), &y)?;
            writeln!(out, "wrote {} + {} utterances to {}", x.ids().len(), y.ids().len(), dir.display())?;
        }
        Command::Prep {
            input,
            out: dir,
            per_utterance,
            dump,
        } => {
            let corpus = prepare_corpus(read_speaker_dir(&input)?)?;
            write_speaker_dir(&dir, &corpus)?;
            let mut rejects = String::new();
            for r in corpus.rejected() {
                rejects.push_str(&format!("{}\t{}\n", r.id, r.reason));
                eprintln!("rejected {}: {}", r.id, r.reason);
            }
            fs::write(dir.join("rejects.txt"), rejects)?;
            if per_utterance {
                writeln!(out, "id,frames,voiced_frames,voiced_fraction,mcep_dim,ap_dim")?;
                for (id, u) in corpus.ids().iter().zip(corpus.utterances()) {
                    let d = validate(u);
                    writeln!(
                        out,
                        "{id},{},{},{},{},{}",
                        d.frame_count, d.voiced_frames, d.voiced_fraction, d.mcep_dim, d.ap_dim
                    )?;
                }
            }
            if dump {
                let s = corpus.stats();
                for (id, u) in corpus.ids().iter().zip(corpus.utterances()) {
                    let (_, _, m) = prosody_features(u, &s.f0, &s.scales)?;
                    let file = fs::File::create(dir.join(format!("{id}.cwt.csv")))?;
                    m.write_csv(BufWriter::new(file))?;
                }
            }
            eprintln!(
                "{} utterances accepted, {} rejected",
                corpus.ids().len(),
                corpus.rejected().len()
            );
        }
        Command::CwtAnalyze { input, out: path, stats } => {
            let u = read_vcf(&input)?;
            let f0_stats = match stats {
                Some(dir) => read_f0_stats(&dir)?,
                None => own_f0_stats(&u)?,
            };
            let cont = ContinuousLogF0::from_f0(u.f0())?;
            let m = decompose10(&normalize(&cont.values, &f0_stats), u.frame_period_ms())?;
            let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            m.write_csv(BufWriter::new(file))?;
            writeln!(out, "max_energy_scale={}", m.max_energy_scale())?;
        }
        Command::CwtSynth {
            input,
            template,
            out: path,
            stats,
        } => {
            let u = read_vcf(&template)?;
            let f0_stats = match stats {
                Some(dir) => read_f0_stats(&dir)?,
                None => own_f0_stats(&u)?,
            };
            let file = fs::File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let m = CwtMatrix::read_csv(BufReader::new(file), u.frame_period_ms())?;
            if m.frames() != u.frames() {
                bail!("{} has {} frames, template has {}", input.display(), m.frames(), u.frames());
            }
            let hz: Vec<f64> = denormalize(&recompose10(&m), &f0_stats).iter().map(|v| v.exp()).collect();
            write_vcf(&path, &u.with_f0(reapply_voicing(&hz, &u.voicing())?)?)?;
        }
        Command::Train {
            x,
            y,
            out: dir,
            kind,
            config,
            seed,
            iterations,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.hyper.seed = s;
            }
            if let Some(n) = iterations {
                cfg.hyper.iterations = n;
            }
            let xc = prepare_corpus(read_speaker_dir(&x)?).with_context(|| format!("preparing {}", x.display()))?;
            let yc = prepare_corpus(read_speaker_dir(&y)?).with_context(|| format!("preparing {}", y.display()))?;
            ConversionModels::save_metadata(&dir, &cfg, xc.stats(), yc.stats())?;
            match kind {
                KindArg::Spectrum => train_kind(&xc, &yc, FeatureKind::Spectrum, &cfg, &dir)?,
                KindArg::Prosody => train_kind(&xc, &yc, FeatureKind::Prosody, &cfg, &dir)?,
                KindArg::Both => std::thread::scope(|s| -> Result<()> {
                    let spectrum = s.spawn(|| train_kind(&xc, &yc, FeatureKind::Spectrum, &cfg, &dir));
                    let prosody = train_kind(&xc, &yc, FeatureKind::Prosody, &cfg, &dir);
                    let spectrum = spectrum.join().expect("spectrum training thread panicked");
                    spectrum.and(prosody)
                })?,
            }
            writeln!(out, "models in {}", dir.display())?;
        }
        Command::Convert {
            model,
            input,
            out: path,
            direction,
        } => {
            let models = ConversionModels::load(&model)?;
            let n = map_files(&input, &path, |u| Ok(convert_utterance(u, &models, direction.into())?))?;
            writeln!(out, "converted {n} utterances")?;
        }
        Command::LgConvert {
            src,
            tgt,
            input,
            out: path,
            model,
            direction,
        } => {
            let (s, t) = (SpeakerStats::load(&src, "")?, SpeakerStats::load(&tgt, "")?);
            let generator = match &model {
                Some(dir) => {
                    let cfg = ConversionModels::load_config(dir)?;
                    let pair = ConversionModels::load_pair(dir, FeatureKind::Spectrum, &cfg)?;
                    Some(match Direction::from(direction) {
                        Direction::XtoY => pair.g_xy,
                        Direction::YtoX => pair.g_yx,
                    })
                }
                None => None,
            };
            let map = generator.as_ref().map(|g| g as &dyn FeatureMap);
            let n = map_files(&input, &path, |u| Ok(lg_convert_utterance(u, map, &s, &t)?))?;
            writeln!(out, "converted {n} utterances")?;
        }
        Command::Eval { reference, hyp } => {
            if reference.is_dir() {
                let hyps = read_speaker_dir(&hyp)?;
                writeln!(out, "id,mcd_db,f0_rmse_hz,f0_corr")?;
                let mut mcds = Vec::new();
                for (id, r) in read_speaker_dir(&reference)? {
                    let Some((_, h)) = hyps.iter().find(|(hid, _)| *hid == id) else {
                        bail!("no hypothesis for utterance {id}");
                    };
                    let m = metrics(&r, h).with_context(|| format!("utterance {id}"))?;
                    writeln!(out, "{id},{},{},{}", m.mcd_db, m.f0_rmse_hz, fmt_corr(m.f0_corr))?;
                    mcds.push(m.mcd_db);
                }
                if mcds.is_empty() {
                    bail!("no utterances in {}", reference.display());
                }
                eprintln!("mean mcd_db={}", mcds.iter().sum::<f64>() / mcds.len() as f64);
            } else {
                let m = metrics(&read_vcf(&reference)?, &read_vcf(&hyp)?)?;
                writeln!(out, "mcd_db={}", m.mcd_db)?;
                writeln!(out, "f0_rmse_hz={}", m.f0_rmse_hz)?;
                writeln!(out, "f0_corr={}", fmt_corr(m.f0_corr))?;
            }
        }
        Command::Gradcheck { seeds, seed } => {
            if seeds == 0 {
                bail!("--seeds must be positive");
            }
            writeln!(out, "# central differences, eps {FD_EPS:e}, tolerance {FD_TOL:e}")?;
            writeln!(out, "check,seed,entries,max_rel_err,status")?;
            let mut failed = 0;
            for s in seed..seed + seeds {
                let mut results = check_ops(s)?;
                results.extend(check_objectives(s)?);
                for r in &results {
                    print_check(&mut out, r)?;
                    failed += usize::from(!r.passed());
                }
            }
            out.flush()?;
            if failed > 0 {
                bail!("{failed} gradient checks failed");
            }
        }
    }
    out.flush()?;
    Ok(())
}
