use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Bound, Conv1dSpec, Conv2dSpec, Tape, Var};
use super::tensor::Tensor;
use super::NnError;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct NormIds {
    gamma: ParamId,
    beta: ParamId,
}

fn add_conv<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    shape: &[usize],
    rng: &mut R,
) -> ConvIds {
    ConvIds {
        w: store.add(format!("{prefix}.w"), Tensor::randn(shape, INIT_STD, rng)),
        b: store.add(format!("{prefix}.b"), Tensor::zeros(&shape[..1])),
    }
}

fn add_norm(store: &mut ParamStore, prefix: &str, channels: usize) -> NormIds {
    NormIds {
        gamma: store.add(format!("{prefix}.gamma"), Tensor::full(&[channels], 1.0)),
        beta: store.add(format!("{prefix}.beta"), Tensor::zeros(&[channels])),
    }
}

/// 1-D generator layout. Kernel sizes must be odd so that stride-1 layers
/// keep the frame count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenConfig {
    pub channels: usize,
    pub width: usize,
    pub n_down: usize,
    pub n_res: usize,
    pub n_up: usize,
    pub k_in: usize,
    pub k_down: usize,
    pub k_res: usize,
    pub k_up: usize,
    pub k_out: usize,
}

impl GenConfig {
    /// Small default: width 64, two down blocks, three residual blocks, two
    /// up blocks.
    pub fn desk(channels: usize) -> Self {
        Self {
            channels,
            width: 64,
            n_down: 2,
            n_res: 3,
            n_up: 2,
            k_in: 15,
            k_down: 5,
            k_res: 3,
            k_up: 5,
            k_out: 15,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let kernels = [self.k_in, self.k_down, self.k_res, self.k_up, self.k_out];
        if self.channels == 0 || self.width == 0 {
            return Err(NnError::Config("channels and width must be positive".into()));
        }
        if kernels.iter().any(|k| k % 2 == 0) {
            return Err(NnError::Config(format!("kernel sizes must be odd: {kernels:?}")));
        }
        if self.n_down != self.n_up {
            return Err(NnError::Config(format!(
                "n_up ({}) must equal n_down ({}) to preserve length",
                self.n_up, self.n_down
            )));
        }
        if self.n_down > 16 {
            return Err(NnError::Config("n_down too large".into()));
        }
        Ok(())
    }

    pub fn downsample_factor(&self) -> usize {
        1 << self.n_down
    }

    /// Closed-form count of scalar parameters.
    pub fn param_count(&self) -> usize {
        let (c, w) = (self.channels, self.width);
        let input = 2 * w * c * self.k_in + 2 * w;
        let down = 2 * w * w * self.k_down + 2 * w + 4 * w;
        let res = (2 * w * w * self.k_res + 2 * w + 4 * w) + (w * w * self.k_res + w + 2 * w);
        let up = 4 * w * w * self.k_up + 4 * w + 4 * w;
        let out = c * w * self.k_out + c;
        input + self.n_down * down + self.n_res * res + self.n_up * up + out
    }
}

#[derive(Debug, Clone)]
struct GenLayout {
    input: ConvIds,
    down: Vec<(ConvIds, NormIds)>,
    res: Vec<(ConvIds, NormIds, ConvIds, NormIds)>,
    up: Vec<(ConvIds, NormIds)>,
    out: ConvIds,
}

/// Shape-preserving `C x T -> C x T` network of gated convolutions.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: GenConfig,
    params: ParamStore,
    layout: GenLayout,
}

fn same(k: usize) -> Conv1dSpec {
    Conv1dSpec {
        stride: 1,
        pad: k / 2,
    }
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(cfg: GenConfig, rng: &mut R) -> Result<Self, NnError> {
        cfg.validate()?;
        let (c, w) = (cfg.channels, cfg.width);
        let mut s = ParamStore::new();
        let input = add_conv(&mut s, "in", &[2 * w, c, cfg.k_in], rng);
        let down = (0..cfg.n_down)
            .map(|i| {
                let p = format!("down{i}");
                let conv = add_conv(&mut s, &p, &[2 * w, w, cfg.k_down], rng);
                (conv, add_norm(&mut s, &p, 2 * w))
            })
            .collect();
        let res = (0..cfg.n_res)
            .map(|i| {
                let p1 = format!("res{i}.conv1");
                let c1 = add_conv(&mut s, &p1, &[2 * w, w, cfg.k_res], rng);
                let n1 = add_norm(&mut s, &p1, 2 * w);
                let p2 = format!("res{i}.conv2");
                let c2 = add_conv(&mut s, &p2, &[w, w, cfg.k_res], rng);
                let n2 = add_norm(&mut s, &p2, w);
                (c1, n1, c2, n2)
            })
            .collect();
        let up = (0..cfg.n_up)
            .map(|i| {
                let p = format!("up{i}");
                let conv = add_conv(&mut s, &p, &[4 * w, w, cfg.k_up], rng);
                (conv, add_norm(&mut s, &p, 2 * w))
            })
            .collect();
        let out = add_conv(&mut s, "out", &[c, w, cfg.k_out], rng);
        Ok(Self {
            cfg,
            params: s,
            layout: GenLayout {
                input,
                down,
                res,
                up,
                out,
            },
        })
    }

    pub fn config(&self) -> &GenConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn downsample_factor(&self) -> usize {
        self.cfg.downsample_factor()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<(), NnError> {
        if shape.len() != 2 {
            return Err(NnError::Shape(format!("generator input must be C x T, got {shape:?}")));
        }
        if shape[0] != self.cfg.channels {
            return Err(NnError::Channels {
                expected: self.cfg.channels,
                got: shape[0],
            });
        }
        let factor = self.downsample_factor();
        if shape[1] % factor != 0 {
            return Err(NnError::IndivisibleLength {
                len: shape[1],
                factor,
            });
        }
        Ok(())
    }

    /// Records the forward pass on `tape` using parameters bound by
    /// `tape.bind(self.params())`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var, NnError> {
        self.check_input(tape.value(x).shape())?;
        let cfg = &self.cfg;
        let l = &self.layout;
        let conv = |tape: &mut Tape, h: Var, ids: ConvIds, spec: Conv1dSpec| {
            tape.conv1d(h, p.var(ids.w), p.var(ids.b), spec)
        };
        let norm = |tape: &mut Tape, h: Var, ids: NormIds| -> Result<Var, NnError> {
            let n = tape.instance_norm(h)?;
            tape.channel_affine(n, p.var(ids.gamma), p.var(ids.beta))
        };

        let h = conv(tape, x, l.input, same(cfg.k_in))?;
        let mut h = tape.glu(h)?;
        let down_spec = Conv1dSpec {
            stride: 2,
            pad: cfg.k_down / 2,
        };
        for &(c, n) in &l.down {
            let a = conv(tape, h, c, down_spec)?;
            let a = norm(tape, a, n)?;
            h = tape.glu(a)?;
        }
        for &(c1, n1, c2, n2) in &l.res {
            let a = conv(tape, h, c1, same(cfg.k_res))?;
            let a = norm(tape, a, n1)?;
            let a = tape.glu(a)?;
            let a = conv(tape, a, c2, same(cfg.k_res))?;
            let a = norm(tape, a, n2)?;
            h = tape.add(h, a)?;
        }
        for &(c, n) in &l.up {
            let a = conv(tape, h, c, same(cfg.k_up))?;
            let a = tape.pixel_shuffle1d(a, 2)?;
            let a = norm(tape, a, n)?;
            h = tape.glu(a)?;
        }
        conv(tape, h, l.out, same(cfg.k_out))
    }

    /// Forward pass on a private tape.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.params);
        let xv = tape.leaf(x.clone());
        let y = self.forward(&mut tape, &p, xv)?;
        Ok(tape.value(y).clone())
    }
}

/// 2-D discriminator layout over a `C x T` feature map seen as a
/// one-channel image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscConfig {
    pub base: usize,
    pub n_layers: usize,
    pub kernel: usize,
    /// Instance norm removes per-channel offsets, which hides a constant
    /// shift between domains from the classifier; off by default.
    pub instance_norm: bool,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self {
            base: 16,
            n_layers: 3,
            kernel: 3,
            instance_norm: false,
        }
    }
}

impl DiscConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.base == 0 || self.kernel % 2 == 0 || self.n_layers > 16 {
            return Err(NnError::Config(format!("invalid discriminator config {self:?}")));
        }
        Ok(())
    }

    pub fn min_input(&self) -> usize {
        1 << self.n_layers
    }

    pub fn param_count(&self) -> usize {
        let k2 = self.kernel * self.kernel;
        let mut ch = self.base;
        let mut n = 2 * ch * k2 + 2 * ch;
        for _ in 0..self.n_layers {
            let out = 2 * ch;
            n += 2 * out * ch * k2 + 2 * out;
            if self.instance_norm {
                n += 4 * out;
            }
            ch = out;
        }
        n + ch + 1
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    cfg: DiscConfig,
    params: ParamStore,
    input: ConvIds,
    blocks: Vec<(ConvIds, Option<NormIds>)>,
    fc: ConvIds,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(cfg: DiscConfig, rng: &mut R) -> Result<Self, NnError> {
        cfg.validate()?;
        let k = cfg.kernel;
        let mut s = ParamStore::new();
        let mut ch = cfg.base;
        let input = add_conv(&mut s, "in", &[2 * ch, 1, k, k], rng);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let p = format!("block{i}");
            let out = 2 * ch;
            let conv = add_conv(&mut s, &p, &[2 * out, ch, k, k], rng);
            let norm = cfg.instance_norm.then(|| add_norm(&mut s, &p, 2 * out));
            blocks.push((conv, norm));
            ch = out;
        }
        let fc = add_conv(&mut s, "fc", &[1, ch], rng);
        Ok(Self {
            cfg,
            params: s,
            input,
            blocks,
            fc,
        })
    }

    pub fn config(&self) -> &DiscConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Probability-valued output of shape `[1]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var, NnError> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 2 {
            return Err(NnError::Shape(format!("discriminator input must be C x T, got {shape:?}")));
        }
        let min = self.cfg.min_input();
        if shape[0] < min || shape[1] < min {
            return Err(NnError::ReceptiveField {
                height: shape[0],
                width: shape[1],
                min,
            });
        }
        let k = self.cfg.kernel;
        let img = tape.reshape(x, vec![1, shape[0], shape[1]])?;
        let same = Conv2dSpec {
            stride: (1, 1),
            pad: (k / 2, k / 2),
        };
        let strided = Conv2dSpec {
            stride: (2, 2),
            pad: (k / 2, k / 2),
        };
        let h = tape.conv2d(img, p.var(self.input.w), p.var(self.input.b), same)?;
        let mut h = tape.glu(h)?;
        for &(c, n) in &self.blocks {
            let mut a = tape.conv2d(h, p.var(c.w), p.var(c.b), strided)?;
            if let Some(n) = n {
                let z = tape.instance_norm(a)?;
                a = tape.channel_affine(z, p.var(n.gamma), p.var(n.beta))?;
            }
            h = tape.glu(a)?;
        }
        let pooled = tape.channel_mean(h)?;
        let logit = tape.linear(pooled, p.var(self.fc.w), p.var(self.fc.b))?;
        Ok(tape.sigmoid(logit))
    }

    pub fn infer(&self, x: &Tensor) -> Result<f64, NnError> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.params);
        let xv = tape.leaf(x.clone());
        let y = self.forward(&mut tape, &p, xv)?;
        Ok(tape.value(y).item())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_gen(channels: usize) -> GenConfig {
        GenConfig {
            width: 8,
            ..GenConfig::desk(channels)
        }
    }

    #[test]
    fn generator_preserves_shape() {
        for c in [24, 10] {
            let g = Generator::new(small_gen(c), &mut rng(1)).unwrap();
            let x = Tensor::randn(&[c, 128], 1.0, &mut rng(2));
            assert_eq!(g.infer(&x).unwrap().shape(), &[c, 128]);
        }
    }

    /// Walks the layer list and multiplies out each tensor's extents.
    fn shape_walk(cfg: &GenConfig) -> usize {
        let (c, w) = (cfg.channels, cfg.width);
        let conv = |co: usize, ci: usize, k: usize| co * ci * k + co;
        let norm = |ch: usize| 2 * ch;
        let mut total = conv(2 * w, c, cfg.k_in);
        for _ in 0..cfg.n_down {
            total += conv(2 * w, w, cfg.k_down) + norm(2 * w);
        }
        for _ in 0..cfg.n_res {
            total += conv(2 * w, w, cfg.k_res) + norm(2 * w) + conv(w, w, cfg.k_res) + norm(w);
        }
        for _ in 0..cfg.n_up {
            total += conv(4 * w, w, cfg.k_up) + norm(2 * w);
        }
        total + conv(c, w, cfg.k_out)
    }

    #[test]
    fn desk_parameter_count() {
        for c in [24, 10] {
            let cfg = GenConfig::desk(c);
            let g = Generator::new(cfg, &mut rng(0)).unwrap();
            assert_eq!(g.params().scalar_count(), shape_walk(&cfg));
            assert_eq!(cfg.param_count(), shape_walk(&cfg));
        }
        assert_eq!(GenConfig::desk(24).param_count(), 429_144);
        assert_eq!(GenConfig::desk(10).param_count(), 388_810);
    }

    #[test]
    fn zero_params_give_constant_output() {
        let mut g = Generator::new(small_gen(10), &mut rng(4)).unwrap();
        g.params_mut().fill(0.0);
        let x = Tensor::randn(&[10, 32], 3.0, &mut rng(5));
        let y = g.infer(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == y.data()[0]));
    }

    #[test]
    fn indivisible_length_rejected() {
        let g = Generator::new(small_gen(10), &mut rng(0)).unwrap();
        let err = g.infer(&Tensor::zeros(&[10, 30])).unwrap_err();
        assert!(matches!(err, NnError::IndivisibleLength { len: 30, factor: 4 }));
        assert!(matches!(
            g.infer(&Tensor::zeros(&[24, 32])),
            Err(NnError::Channels { .. })
        ));
    }

    #[test]
    fn discriminator_bounds_and_zero_params() {
        let d = Discriminator::new(DiscConfig::default(), &mut rng(7)).unwrap();
        assert_eq!(d.params().scalar_count(), DiscConfig::default().param_count());
        for scale in [0.0, 1.0, 100.0] {
            let x = Tensor::randn(&[24, 64], scale, &mut rng(8));
            let p = d.infer(&x).unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
        let mut z = d.clone();
        z.params_mut().fill(0.0);
        assert_eq!(z.infer(&Tensor::randn(&[10, 16], 1.0, &mut rng(9))).unwrap(), 0.5);
    }

    #[test]
    fn discriminator_rejects_tiny_input() {
        let d = Discriminator::new(DiscConfig::default(), &mut rng(7)).unwrap();
        assert!(matches!(
            d.infer(&Tensor::zeros(&[4, 64])),
            Err(NnError::ReceptiveField { min: 8, .. })
        ));
    }

    #[test]
    fn same_seed_same_outputs() {
        let x = Tensor::randn(&[24, 64], 1.0, &mut rng(11));
        let g1 = Generator::new(small_gen(24), &mut rng(3)).unwrap();
        let g2 = Generator::new(small_gen(24), &mut rng(3)).unwrap();
        assert_eq!(g1.infer(&x).unwrap(), g2.infer(&x).unwrap());
        let d1 = Discriminator::new(DiscConfig::default(), &mut rng(3)).unwrap();
        let d2 = Discriminator::new(DiscConfig::default(), &mut rng(3)).unwrap();
        assert_eq!(d1.infer(&x).unwrap().to_bits(), d2.infer(&x).unwrap().to_bits());
    }
}
