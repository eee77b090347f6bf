//! Adversarial, cycle-consistency and identity losses, the learning-rate
//! schedule, and the alternating discriminator/generator update for one
//! feature kind.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cwt::reflect;
use crate::nn::{
    read_checkpoint, write_checkpoint, AdamConfig, AdamState, Bound, DiscConfig, Discriminator,
    GenConfig, Generator, NnError, Tape, Tensor, Var,
};

#[derive(Debug, thiserror::Error)]
pub enum GanError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("non-finite {what} at iteration {iter} ({report})")]
    NonFinite {
        iter: u64,
        what: &'static str,
        report: String,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid hyperparameter: {0}")]
    Hyper(String),
    #[error("loss log: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Training hyperparameters shared by both feature kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct GanHyper {
    pub lambda_cyc: f64,
    pub lambda_id: f64,
    pub id_cutoff_iters: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub const_iters: u64,
    pub decay_iters: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub crop_frames: usize,
    pub iterations: u64,
    pub seed: u64,
    /// Generator minimizes `log(1 - D(G(x)))` instead of maximizing
    /// `log D(G(x))`.
    pub saturating: bool,
    /// Discriminator outputs are clamped to `[delta, 1 - delta]` before logs.
    pub clamp_delta: f64,
    /// Loss rows are written every `log_every` iterations.
    pub log_every: u64,
}

impl Default for GanHyper {
    fn default() -> Self {
        Self {
            lambda_cyc: 10.0,
            lambda_id: 5.0,
            id_cutoff_iters: 10_000,
            lr_g: 2e-4,
            lr_d: 1e-4,
            const_iters: 200_000,
            decay_iters: 200_000,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            crop_frames: 128,
            iterations: 400_000,
            seed: 0,
            saturating: false,
            clamp_delta: 1e-7,
            log_every: 1,
        }
    }
}

impl GanHyper {
    /// Full-length schedule shortened to 2000 iterations on 64-frame crops.
    pub fn desk() -> Self {
        Self {
            crop_frames: 64,
            iterations: 2000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GanError> {
        let positive = [
            ("lambda_cyc", self.lambda_cyc),
            ("lr_g", self.lr_g),
            ("lr_d", self.lr_d),
            ("beta2", self.beta2),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(GanError::Hyper(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda_id.is_finite() && self.lambda_id >= 0.0) {
            return Err(GanError::Hyper(format!("lambda_id must be >= 0, got {}", self.lambda_id)));
        }
        if !(self.beta1 >= 0.0 && self.beta1 < 1.0 && self.beta2 < 1.0) {
            return Err(GanError::Hyper("betas must lie in [0, 1)".into()));
        }
        if !(self.clamp_delta > 0.0 && self.clamp_delta < 0.5) {
            return Err(GanError::Hyper(format!("clamp_delta out of range: {}", self.clamp_delta)));
        }
        if self.crop_frames == 0 || self.decay_iters == 0 || self.log_every == 0 {
            return Err(GanError::Hyper(
                "crop_frames, decay_iters and log_every must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    /// Weight of the identity term at `iter`.
    pub fn lambda_id_at(&self, iter: u64) -> f64 {
        if iter < self.id_cutoff_iters {
            self.lambda_id
        } else {
            0.0
        }
    }
}

/// `(lr_g, lr_d)`: constant for `const_iters`, then linear to zero over
/// `decay_iters`, zero afterwards.
pub fn lr_schedule(iter: u64, h: &GanHyper) -> (f64, f64) {
    if iter < h.const_iters {
        return (h.lr_g, h.lr_d);
    }
    let into = iter - h.const_iters;
    if into >= h.decay_iters {
        return (0.0, 0.0);
    }
    let f = 1.0 - into as f64 / h.decay_iters as f64;
    (h.lr_g * f, h.lr_d * f)
}

/// A feature-to-feature map recorded on a tape.
pub trait Translator {
    fn translate(&self, tape: &mut Tape, x: Var) -> Result<Var, NnError>;
}

/// A map from features to a probability in (0, 1) recorded on a tape.
pub trait Critic {
    fn score(&self, tape: &mut Tape, x: Var) -> Result<Var, NnError>;
}

/// A network paired with its parameters bound on a particular tape.
pub struct OnTape<'a, M> {
    pub model: &'a M,
    pub bound: &'a Bound,
}

impl Translator for OnTape<'_, Generator> {
    fn translate(&self, tape: &mut Tape, x: Var) -> Result<Var, NnError> {
        self.model.forward(tape, self.bound, x)
    }
}

impl Critic for OnTape<'_, Discriminator> {
    fn score(&self, tape: &mut Tape, x: Var) -> Result<Var, NnError> {
        self.model.forward(tape, self.bound, x)
    }
}

fn batch_mean(tape: &mut Tape, terms: &[Var]) -> Result<Var, NnError> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scale(acc, 1.0 / terms.len() as f64))
}

fn log_prob(tape: &mut Tape, p: Var, delta: f64, complement: bool) -> Result<Var, NnError> {
    let c = tape.clamp(p, delta, 1.0 - delta);
    let c = if complement {
        let neg = tape.scale(c, -1.0);
        tape.add_scalar(neg, 1.0)
    } else {
        c
    };
    tape.log(c)
}

fn nonempty(batch: &[Var], what: &'static str) -> Result<(), GanError> {
    if batch.is_empty() {
        Err(GanError::Empty(what))
    } else {
        Ok(())
    }
}

/// `mean log D(real) + mean log(1 - D(fake))`.
pub fn adv_loss(
    tape: &mut Tape,
    d: &impl Critic,
    real: &[Var],
    fake: &[Var],
    delta: f64,
) -> Result<Var, GanError> {
    nonempty(real, "real batch")?;
    nonempty(fake, "fake batch")?;
    let mut terms = Vec::with_capacity(real.len());
    for &r in real {
        let p = d.score(tape, r)?;
        terms.push(log_prob(tape, p, delta, false)?);
    }
    let a = batch_mean(tape, &terms)?;
    terms.clear();
    for &f in fake {
        let p = d.score(tape, f)?;
        terms.push(log_prob(tape, p, delta, true)?);
    }
    let b = batch_mean(tape, &terms)?;
    Ok(tape.add(a, b)?)
}

/// Generator side of the adversarial term, to be minimized.
pub fn generator_adv_loss(
    tape: &mut Tape,
    d: &impl Critic,
    fake: &[Var],
    delta: f64,
    saturating: bool,
) -> Result<Var, GanError> {
    nonempty(fake, "fake batch")?;
    let mut terms = Vec::with_capacity(fake.len());
    for &f in fake {
        let p = d.score(tape, f)?;
        terms.push(log_prob(tape, p, delta, saturating)?);
    }
    let m = batch_mean(tape, &terms)?;
    Ok(if saturating { m } else { tape.scale(m, -1.0) })
}

/// `mean |G_yx(G_xy(x)) - x| + mean |G_xy(G_yx(y)) - y|`, each averaged over
/// the batch.
pub fn cycle_loss(
    tape: &mut Tape,
    g_xy: &impl Translator,
    g_yx: &impl Translator,
    xs: &[Var],
    ys: &[Var],
) -> Result<Var, GanError> {
    nonempty(xs, "x batch")?;
    nonempty(ys, "y batch")?;
    let mut terms = Vec::new();
    for &x in xs {
        let f = g_xy.translate(tape, x)?;
        let back = g_yx.translate(tape, f)?;
        terms.push(tape.l1_mean(back, x)?);
    }
    let a = batch_mean(tape, &terms)?;
    terms.clear();
    for &y in ys {
        let f = g_yx.translate(tape, y)?;
        let back = g_xy.translate(tape, f)?;
        terms.push(tape.l1_mean(back, y)?);
    }
    let b = batch_mean(tape, &terms)?;
    Ok(tape.add(a, b)?)
}

/// `mean |G_yx(x) - x| + mean |G_xy(y) - y|`.
pub fn identity_loss(
    tape: &mut Tape,
    g_xy: &impl Translator,
    g_yx: &impl Translator,
    xs: &[Var],
    ys: &[Var],
) -> Result<Var, GanError> {
    nonempty(xs, "x batch")?;
    nonempty(ys, "y batch")?;
    let mut terms = Vec::new();
    for &x in xs {
        let same = g_yx.translate(tape, x)?;
        terms.push(tape.l1_mean(same, x)?);
    }
    let a = batch_mean(tape, &terms)?;
    terms.clear();
    for &y in ys {
        let same = g_xy.translate(tape, y)?;
        terms.push(tape.l1_mean(same, y)?);
    }
    let b = batch_mean(tape, &terms)?;
    Ok(tape.add(a, b)?)
}

/// Per-iteration loss values. `adv_d` is the discriminator's minimization
/// objective, the negated adversarial loss summed over both domains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub iter: u64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub cyc: f64,
    pub id: f64,
    pub total_g: f64,
    pub total_d: f64,
    pub lr_g: f64,
    pub lr_d: f64,
}

impl LossReport {
    pub const CSV_HEADER: [&'static str; 9] = [
        "iter", "adv_g", "adv_d", "cyc", "id", "total_g", "total_d", "lr_g", "lr_d",
    ];

    pub fn is_finite(&self) -> bool {
        [self.adv_g, self.adv_d, self.cyc, self.id, self.total_g, self.total_d]
            .iter()
            .all(|v| v.is_finite())
    }

    fn summary(&self) -> String {
        format!(
            "adv_g={} adv_d={} cyc={} id={} total_g={} total_d={}",
            self.adv_g, self.adv_d, self.cyc, self.id, self.total_g, self.total_d
        )
    }
}

/// CSV sink for [`LossReport`] rows.
pub struct LossLog<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> LossLog<W> {
    pub fn new(sink: W) -> Result<Self, GanError> {
        let mut writer = csv::Writer::from_writer(sink);
        writer.write_record(LossReport::CSV_HEADER)?;
        Ok(Self { writer })
    }

    pub fn append(&mut self, r: &LossReport) -> Result<(), GanError> {
        let vals = [r.adv_g, r.adv_d, r.cyc, r.id, r.total_g, r.total_d, r.lr_g, r.lr_d];
        let mut row = vec![r.iter.to_string()];
        row.extend(vals.iter().map(|v| format!("{v:?}")));
        self.writer.write_record(&row)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), GanError> {
        self.writer.flush()?;
        Ok(())
    }
}

/// Uniformly placed contiguous `C x crop` window. Inputs shorter than the
/// crop are mirror-padded on the right to exactly `crop` frames.
pub fn sample_crop<R: Rng + ?Sized>(
    features: &Tensor,
    crop: usize,
    rng: &mut R,
) -> Result<Tensor, GanError> {
    let shape = features.shape();
    if shape.len() != 2 || crop == 0 {
        return Err(GanError::Empty("crop input must be a C x T matrix"));
    }
    let (c_n, t_len) = (shape[0], shape[1]);
    let start = if t_len > crop {
        rng.random_range(0..=t_len - crop)
    } else {
        0
    };
    let mut data = Vec::with_capacity(c_n * crop);
    for c in 0..c_n {
        let row = &features.data()[c * t_len..(c + 1) * t_len];
        data.extend((start..start + crop).map(|t| row[reflect(t as isize, t_len)]));
    }
    Ok(Tensor::new(vec![c_n, crop], data)?)
}

/// Two generators, two discriminators and their optimizer states.
#[derive(Debug, Clone)]
pub struct ModelPair {
    pub g_xy: Generator,
    pub g_yx: Generator,
    pub d_x: Discriminator,
    pub d_y: Discriminator,
    opt: [AdamState; 4],
}

pub const MODEL_NAMES: [&str; 4] = ["gxy", "gyx", "dx", "dy"];

/// Generator-side graph of one iteration.
struct GenPass {
    tape: Tape,
    bound_xy: Bound,
    bound_yx: Bound,
    x: Var,
    y: Var,
    fake_x: Var,
    fake_y: Var,
    cyc: Var,
    id: Option<Var>,
}

impl ModelPair {
    pub fn new(
        gen: GenConfig,
        disc: DiscConfig,
        adam: AdamConfig,
        seed: u64,
    ) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g_xy = Generator::new(gen, &mut rng)?;
        let g_yx = Generator::new(gen, &mut rng)?;
        let d_x = Discriminator::new(disc, &mut rng)?;
        let d_y = Discriminator::new(disc, &mut rng)?;
        let opt = [
            AdamState::new(g_xy.params(), adam),
            AdamState::new(g_yx.params(), adam),
            AdamState::new(d_x.params(), adam),
            AdamState::new(d_y.params(), adam),
        ];
        Ok(Self {
            g_xy,
            g_yx,
            d_x,
            d_y,
            opt,
        })
    }

    pub fn channels(&self) -> usize {
        self.g_xy.config().channels
    }

    fn check_crop(&self, t: &Tensor) -> Result<(), NnError> {
        self.g_xy.check_input(t.shape())
    }

    fn gen_pass(&self, x: &Tensor, y: &Tensor, with_id: bool) -> Result<GenPass, GanError> {
        self.check_crop(x)?;
        self.check_crop(y)?;
        let mut tape = Tape::new();
        let bound_xy = tape.bind(self.g_xy.params());
        let bound_yx = tape.bind(self.g_yx.params());
        let xv = tape.leaf(x.clone());
        let yv = tape.leaf(y.clone());
        let gxy = OnTape {
            model: &self.g_xy,
            bound: &bound_xy,
        };
        let gyx = OnTape {
            model: &self.g_yx,
            bound: &bound_yx,
        };
        let fake_y = gxy.translate(&mut tape, xv)?;
        let fake_x = gyx.translate(&mut tape, yv)?;
        let back_x = gyx.translate(&mut tape, fake_y)?;
        let back_y = gxy.translate(&mut tape, fake_x)?;
        let cx = tape.l1_mean(back_x, xv)?;
        let cy = tape.l1_mean(back_y, yv)?;
        let cyc = tape.add(cx, cy)?;
        let id = if with_id {
            Some(identity_loss(&mut tape, &gxy, &gyx, &[xv], &[yv])?)
        } else {
            None
        };
        Ok(GenPass {
            tape,
            bound_xy,
            bound_yx,
            x: xv,
            y: yv,
            fake_x,
            fake_y,
            cyc,
            id,
        })
    }

    /// Discriminator objective (negated adversarial loss over both domains)
    /// on detached fakes, with gradients for `[d_x, d_y]` when requested.
    fn disc_objective(
        &self,
        x: &Tensor,
        y: &Tensor,
        fake_x: &Tensor,
        fake_y: &Tensor,
        h: &GanHyper,
        grads: bool,
    ) -> Result<(f64, Option<[Vec<Tensor>; 2]>), GanError> {
        let mut tape = Tape::new();
        let bx = tape.bind(self.d_x.params());
        let by = tape.bind(self.d_y.params());
        let (xv, yv) = (tape.leaf(x.clone()), tape.leaf(y.clone()));
        let (fx, fy) = (tape.leaf(fake_x.clone()), tape.leaf(fake_y.clone()));
        let dx = OnTape {
            model: &self.d_x,
            bound: &bx,
        };
        let dy = OnTape {
            model: &self.d_y,
            bound: &by,
        };
        let ax = adv_loss(&mut tape, &dx, &[xv], &[fx], h.clamp_delta)?;
        let ay = adv_loss(&mut tape, &dy, &[yv], &[fy], h.clamp_delta)?;
        let sum = tape.add(ax, ay)?;
        let loss = tape.scale(sum, -1.0);
        let value = tape.value(loss).item();
        if !grads {
            return Ok((value, None));
        }
        let g = tape.backward(loss)?;
        Ok((value, Some([g.for_params(&bx), g.for_params(&by)])))
    }

    /// Appends the adversarial terms through the current discriminators and
    /// returns `(adv_g, total_g)` variables.
    fn finish_gen_objective(
        &self,
        pass: &mut GenPass,
        h: &GanHyper,
        iter: u64,
    ) -> Result<(Var, Var), GanError> {
        let tape = &mut pass.tape;
        let bx = tape.bind(self.d_x.params());
        let by = tape.bind(self.d_y.params());
        let dx = OnTape {
            model: &self.d_x,
            bound: &bx,
        };
        let dy = OnTape {
            model: &self.d_y,
            bound: &by,
        };
        let ay = generator_adv_loss(tape, &dy, &[pass.fake_y], h.clamp_delta, h.saturating)?;
        let ax = generator_adv_loss(tape, &dx, &[pass.fake_x], h.clamp_delta, h.saturating)?;
        let adv = tape.add(ay, ax)?;
        let cyc = tape.scale(pass.cyc, h.lambda_cyc);
        let mut total = tape.add(adv, cyc)?;
        if let Some(id) = pass.id {
            let id = tape.scale(id, h.lambda_id_at(iter));
            total = tape.add(total, id)?;
        }
        Ok((adv, total))
    }

    /// Full generator objective at `iter` with gradients for `[g_xy, g_yx]`.
    pub fn generator_objective(
        &self,
        x: &Tensor,
        y: &Tensor,
        h: &GanHyper,
        iter: u64,
    ) -> Result<(f64, [Vec<Tensor>; 2]), GanError> {
        let mut pass = self.gen_pass(x, y, h.lambda_id_at(iter) > 0.0)?;
        let (_, total) = self.finish_gen_objective(&mut pass, h, iter)?;
        let g = pass.tape.backward(total)?;
        Ok((
            pass.tape.value(total).item(),
            [g.for_params(&pass.bound_xy), g.for_params(&pass.bound_yx)],
        ))
    }

    /// Generator objective value only.
    pub fn generator_objective_value(
        &self,
        x: &Tensor,
        y: &Tensor,
        h: &GanHyper,
        iter: u64,
    ) -> Result<f64, GanError> {
        let mut pass = self.gen_pass(x, y, h.lambda_id_at(iter) > 0.0)?;
        let (_, total) = self.finish_gen_objective(&mut pass, h, iter)?;
        Ok(pass.tape.value(total).item())
    }

    /// Discriminator objective on fakes produced by the current generators,
    /// with gradients for `[d_x, d_y]`.
    pub fn discriminator_objective(
        &self,
        x: &Tensor,
        y: &Tensor,
        h: &GanHyper,
    ) -> Result<(f64, [Vec<Tensor>; 2]), GanError> {
        let (fx, fy) = (self.g_yx.infer(y)?, self.g_xy.infer(x)?);
        let (v, g) = self.disc_objective(x, y, &fx, &fy, h, true)?;
        Ok((v, g.expect("gradients requested")))
    }

    pub fn discriminator_objective_value(
        &self,
        x: &Tensor,
        y: &Tensor,
        h: &GanHyper,
    ) -> Result<f64, GanError> {
        let (fx, fy) = (self.g_yx.infer(y)?, self.g_xy.infer(x)?);
        Ok(self.disc_objective(x, y, &fx, &fy, h, false)?.0)
    }

    /// One discriminator update on detached fakes, then one generator update
    /// through the updated discriminators.
    pub fn train_step(
        &mut self,
        x: &Tensor,
        y: &Tensor,
        h: &GanHyper,
        iter: u64,
    ) -> Result<LossReport, GanError> {
        let (lr_g, lr_d) = lr_schedule(iter, h);
        let lambda_id = h.lambda_id_at(iter);
        let mut pass = self.gen_pass(x, y, lambda_id > 0.0)?;

        let fake_x = pass.tape.value(pass.fake_x).clone();
        let fake_y = pass.tape.value(pass.fake_y).clone();
        let (adv_d, d_grads) = self.disc_objective(
            pass.tape.value(pass.x),
            pass.tape.value(pass.y),
            &fake_x,
            &fake_y,
            h,
            true,
        )?;
        let [gdx, gdy] = d_grads.expect("gradients requested");
        let nonfinite = |what, report: String| GanError::NonFinite { iter, what, report };
        if !adv_d.is_finite() {
            return Err(nonfinite("discriminator loss", format!("adv_d={adv_d}")));
        }
        self.opt[2].step(self.d_x.params_mut(), &gdx, lr_d)?;
        self.opt[3].step(self.d_y.params_mut(), &gdy, lr_d)?;

        let (adv, total) = self.finish_gen_objective(&mut pass, h, iter)?;
        let report = LossReport {
            iter,
            adv_g: pass.tape.value(adv).item(),
            adv_d,
            cyc: pass.tape.value(pass.cyc).item(),
            id: pass.id.map_or(0.0, |v| pass.tape.value(v).item()),
            total_g: pass.tape.value(total).item(),
            total_d: adv_d,
            lr_g,
            lr_d,
        };
        if !report.is_finite() {
            return Err(nonfinite("generator loss", report.summary()));
        }
        let g = pass.tape.backward(total)?;
        let (gxy, gyx) = (g.for_params(&pass.bound_xy), g.for_params(&pass.bound_yx));
        self.opt[0].step(self.g_xy.params_mut(), &gxy, lr_g)?;
        self.opt[1].step(self.g_yx.params_mut(), &gyx, lr_g)?;
        Ok(report)
    }

    /// Writes `<prefix>_{gxy,gyx,dx,dy}.vcm` into `dir`.
    pub fn save(&self, dir: &Path, prefix: &str) -> Result<(), GanError> {
        let stores = [
            self.g_xy.params(),
            self.g_yx.params(),
            self.d_x.params(),
            self.d_y.params(),
        ];
        for (name, store) in MODEL_NAMES.iter().zip(stores) {
            let mut buf = Vec::new();
            write_checkpoint(store, &mut buf)?;
            let path = dir.join(format!("{prefix}_{name}.vcm"));
            let tmp = path.with_extension("vcm.tmp");
            std::fs::write(&tmp, &buf)?;
            std::fs::rename(&tmp, &path)?;
        }
        Ok(())
    }

    /// Loads parameters saved by [`ModelPair::save`] into a pair built with
    /// matching configurations. Optimizer moments start fresh.
    pub fn load(
        dir: &Path,
        prefix: &str,
        gen: GenConfig,
        disc: DiscConfig,
        adam: AdamConfig,
    ) -> Result<Self, GanError> {
        let mut pair = Self::new(gen, disc, adam, 0)?;
        for name in MODEL_NAMES {
            let path = dir.join(format!("{prefix}_{name}.vcm"));
            let file = std::fs::File::open(&path)?;
            let store = read_checkpoint(std::io::BufReader::new(file))?;
            let dst = match name {
                "gxy" => pair.g_xy.params_mut(),
                "gyx" => pair.g_yx.params_mut(),
                "dx" => pair.d_x.params_mut(),
                _ => pair.d_y.params_mut(),
            };
            dst.load_from(&store)?;
        }
        Ok(pair)
    }
}

/// Runs `h.iterations` training steps on random crops drawn independently
/// from the two corpora (`C x T` matrices). `on_step` sees every report and
/// may stop training early by returning an error.
pub fn train<F>(
    pair: &mut ModelPair,
    xs: &[Tensor],
    ys: &[Tensor],
    h: &GanHyper,
    mut on_step: F,
) -> Result<(), GanError>
where
    F: FnMut(&ModelPair, &LossReport) -> Result<(), GanError>,
{
    h.validate()?;
    if xs.is_empty() || ys.is_empty() {
        return Err(GanError::Empty("training corpus"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h.seed);
    for iter in 0..h.iterations {
        let x = sample_crop(&xs[rng.random_range(0..xs.len())], h.crop_frames, &mut rng)?;
        let y = sample_crop(&ys[rng.random_range(0..ys.len())], h.crop_frames, &mut rng)?;
        let report = pair.train_step(&x, &y, h, iter)?;
        on_step(pair, &report)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Identity;
    impl Translator for Identity {
        fn translate(&self, _: &mut Tape, x: Var) -> Result<Var, NnError> {
            Ok(x)
        }
    }

    struct Shift(f64);
    impl Translator for Shift {
        fn translate(&self, tape: &mut Tape, x: Var) -> Result<Var, NnError> {
            Ok(tape.add_scalar(x, self.0))
        }
    }

    struct Const(f64);
    impl Critic for Const {
        fn score(&self, tape: &mut Tape, _: Var) -> Result<Var, NnError> {
            Ok(tape.leaf(Tensor::scalar(self.0)))
        }
    }

    /// Probability equal to the input's first entry.
    struct First;
    impl Critic for First {
        fn score(&self, tape: &mut Tape, x: Var) -> Result<Var, NnError> {
            let v = tape.value(x).data()[0];
            Ok(tape.leaf(Tensor::scalar(v)))
        }
    }

    fn leaves(tape: &mut Tape, rows: &[Vec<f64>]) -> Vec<Var> {
        rows.iter()
            .map(|r| tape.leaf(Tensor::new(vec![1, r.len()], r.clone()).unwrap()))
            .collect()
    }

    #[test]
    fn adversarial_loss_at_half() {
        let mut tape = Tape::new();
        let real = leaves(&mut tape, &[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let fake = leaves(&mut tape, &[vec![0.0, 0.0]]);
        let v = adv_loss(&mut tape, &Const(0.5), &real, &fake, 1e-7).unwrap();
        assert!((tape.value(v).item() - (-1.3862944)).abs() <= 1e-7);
        assert!((tape.value(v).item() - 2.0 * 0.5f64.ln()).abs() <= 1e-15);
        let swapped = adv_loss(&mut tape, &Const(0.5), &fake, &real, 1e-7).unwrap();
        assert_eq!(tape.value(swapped).item(), tape.value(v).item());
    }

    #[test]
    fn adversarial_loss_perfect_discrimination() {
        let mut tape = Tape::new();
        let real = leaves(&mut tape, &[vec![1.0]]);
        let fake = leaves(&mut tape, &[vec![0.0]]);
        let v = adv_loss(&mut tape, &First, &real, &fake, 1e-7).unwrap();
        let got = tape.value(v).item();
        assert!(got < 0.0 && got > -3e-7, "{got}");
    }

    #[test]
    fn cycle_and_identity_examples() {
        let mut tape = Tape::new();
        let xs = leaves(&mut tape, &[vec![1.0, -2.0, 3.0]]);
        let ys = leaves(&mut tape, &[vec![0.5, 0.25, 8.0]]);
        let c = cycle_loss(&mut tape, &Identity, &Identity, &xs, &ys).unwrap();
        assert_eq!(tape.value(c).item(), 0.0);
        let c = cycle_loss(&mut tape, &Shift(0.25), &Shift(0.25), &xs, &ys).unwrap();
        assert!((tape.value(c).item() - 1.0).abs() < 1e-15);
        let i = identity_loss(&mut tape, &Identity, &Identity, &xs, &ys).unwrap();
        assert_eq!(tape.value(i).item(), 0.0);
        let i = identity_loss(&mut tape, &Shift(1.0), &Identity, &xs, &ys).unwrap();
        assert!((tape.value(i).item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_batches_rejected() {
        let mut tape = Tape::new();
        let xs = leaves(&mut tape, &[vec![1.0]]);
        assert!(cycle_loss(&mut tape, &Identity, &Identity, &xs, &[]).is_err());
        assert!(adv_loss(&mut tape, &Const(0.5), &[], &xs, 1e-7).is_err());
    }

    #[test]
    fn schedule_endpoints() {
        let h = GanHyper::default();
        assert_eq!(lr_schedule(0, &h), (2e-4, 1e-4));
        assert_eq!(lr_schedule(199_999, &h), (2e-4, 1e-4));
        assert_eq!(lr_schedule(300_000, &h), (1e-4, 5e-5));
        assert_eq!(lr_schedule(400_000, &h), (0.0, 0.0));
        assert_eq!(lr_schedule(1_000_000, &h), (0.0, 0.0));
        let mut prev = f64::INFINITY;
        for it in (200_000..=400_000).step_by(10_000) {
            let (g, _) = lr_schedule(it, &h);
            assert!(g <= prev);
            prev = g;
        }
    }

    #[test]
    fn identity_weight_cutoff() {
        let h = GanHyper::default();
        assert_eq!(h.lambda_id_at(5_000), 5.0);
        assert_eq!(h.lambda_id_at(9_999), 5.0);
        assert_eq!(h.lambda_id_at(10_000), 0.0);
        assert_eq!(h.lambda_id_at(20_000), 0.0);
    }

    fn tiny_pair(seed: u64) -> ModelPair {
        let gen = GenConfig {
            width: 4,
            n_res: 1,
            ..GenConfig::desk(10)
        };
        ModelPair::new(gen, DiscConfig::default(), AdamConfig::default(), seed).unwrap()
    }

    fn crops(seed: u64) -> (Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            Tensor::randn(&[10, 16], 1.0, &mut rng),
            Tensor::randn(&[10, 16], 1.0, &mut rng),
        )
    }

    #[test]
    fn zero_learning_rates_leave_params_bitwise() {
        let mut pair = tiny_pair(1);
        let before = pair.clone();
        let h = GanHyper {
            lr_g: 0.0,
            lr_d: 0.0,
            ..GanHyper::desk()
        };
        let (x, y) = crops(2);
        let r = pair.train_step(&x, &y, &h, 0).unwrap();
        assert!(r.is_finite());
        assert_eq!(pair.g_xy.params(), before.g_xy.params());
        assert_eq!(pair.g_yx.params(), before.g_yx.params());
        assert_eq!(pair.d_x.params(), before.d_x.params());
        assert_eq!(pair.d_y.params(), before.d_y.params());
    }

    #[test]
    fn identity_term_tracks_cutoff() {
        let pair = tiny_pair(3);
        let h = GanHyper::desk();
        let (x, y) = crops(4);
        let early = pair.clone().train_step(&x, &y, &h, 5_000).unwrap();
        assert!(early.id > 0.0);
        let expected = early.adv_g + h.lambda_cyc * early.cyc + h.lambda_id * early.id;
        assert!((early.total_g - expected).abs() < 1e-12);
        let late = pair.clone().train_step(&x, &y, &h, 20_000).unwrap();
        assert_eq!(late.total_g, late.adv_g + h.lambda_cyc * late.cyc);
    }

    #[test]
    fn train_step_changes_params() {
        let mut pair = tiny_pair(5);
        let before = pair.clone();
        let (x, y) = crops(6);
        pair.train_step(&x, &y, &GanHyper::desk(), 0).unwrap();
        assert_ne!(pair.g_xy.params(), before.g_xy.params());
        assert_ne!(pair.d_y.params(), before.d_y.params());
    }

    #[test]
    fn crop_windows() {
        let data: Vec<f64> = (0..30).map(f64::from).collect();
        let t = Tensor::new(vec![2, 15], data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_crop(&t, 15, &mut rng).unwrap(), t);
        for _ in 0..20 {
            let c = sample_crop(&t, 6, &mut rng).unwrap();
            let s = c.data()[0];
            let expect: Vec<f64> = (0..6).map(|i| s + i as f64).collect();
            assert_eq!(&c.data()[..6], &expect[..]);
            assert_eq!(c.data()[6], s + 15.0);
        }
        let padded = sample_crop(&t, 18, &mut rng).unwrap();
        assert_eq!(&padded.data()[13..18], &[13.0, 14.0, 14.0, 13.0, 12.0]);
        let a: Vec<Tensor> = {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            (0..5).map(|_| sample_crop(&t, 4, &mut r).unwrap()).collect()
        };
        let b: Vec<Tensor> = {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            (0..5).map(|_| sample_crop(&t, 4, &mut r).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_pair_round_trip() {
        let pair = tiny_pair(8);
        let dir = tempfile::tempdir().unwrap();
        pair.save(dir.path(), "prosody").unwrap();
        let back = ModelPair::load(
            dir.path(),
            "prosody",
            *pair.g_xy.config(),
            DiscConfig::default(),
            AdamConfig::default(),
        )
        .unwrap();
        assert_eq!(back.g_yx.params(), pair.g_yx.params());
        assert_eq!(back.d_x.params(), pair.d_x.params());
    }

    #[test]
    fn loss_log_format() {
        let mut buf = Vec::new();
        {
            let mut log = LossLog::new(&mut buf).unwrap();
            let r = LossReport {
                iter: 3,
                adv_g: 0.5,
                adv_d: 1.0,
                cyc: 2.0,
                id: 0.0,
                total_g: 20.5,
                total_d: 1.0,
                lr_g: 2e-4,
                lr_d: 1e-4,
            };
            log.append(&r).unwrap();
            log.flush().unwrap();
        }
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "iter,adv_g,adv_d,cyc,id,total_g,total_d,lr_g,lr_d\n3,0.5,1.0,2.0,0.0,20.5,1.0,0.0002,0.0001\n"
        );
    }

    proptest! {
        #[test]
        fn losses_permutation_invariant(
            rows in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 4), 2..6),
            probs in proptest::collection::vec(0.01f64..0.99, 2..6),
            shift in -1.0f64..1.0,
        ) {
            let n = rows.len().min(probs.len());
            let rows: Vec<Vec<f64>> = rows[..n].iter().zip(&probs[..n])
                .map(|(r, p)| { let mut r = r.clone(); r[0] = *p; r }).collect();
            let mut rev = rows.clone();
            rev.reverse();
            let mut tape = Tape::new();
            let a = leaves(&mut tape, &rows);
            let b = leaves(&mut tape, &rev);
            let pairs = [
                (cycle_loss(&mut tape, &Shift(shift), &Identity, &a, &a).unwrap(),
                 cycle_loss(&mut tape, &Shift(shift), &Identity, &b, &b).unwrap()),
                (identity_loss(&mut tape, &Shift(shift), &Shift(-shift), &a, &a).unwrap(),
                 identity_loss(&mut tape, &Shift(shift), &Shift(-shift), &b, &b).unwrap()),
                (adv_loss(&mut tape, &First, &a, &a, 1e-7).unwrap(),
                 adv_loss(&mut tape, &First, &b, &b, 1e-7).unwrap()),
            ];
            for (p, q) in pairs {
                prop_assert!((tape.value(p).item() - tape.value(q).item()).abs() <= 1e-12);
            }
        }

        #[test]
        fn l1_losses_nonnegative(
            row in proptest::collection::vec(-5.0f64..5.0, 1..8),
            s1 in -2.0f64..2.0,
            s2 in -2.0f64..2.0,
        ) {
            let mut tape = Tape::new();
            let xs = leaves(&mut tape, &[row.clone()]);
            let c = cycle_loss(&mut tape, &Shift(s1), &Shift(s2), &xs, &xs).unwrap();
            let i = identity_loss(&mut tape, &Shift(s1), &Shift(s2), &xs, &xs).unwrap();
            prop_assert!(tape.value(c).item() >= 0.0);
            prop_assert!(tape.value(i).item() >= 0.0);
        }
    }
}
