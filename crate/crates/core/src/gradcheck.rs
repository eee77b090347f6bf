//! Central finite-difference checks of the tape gradients, per op and for
//! the full generator and discriminator objectives.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cyclegan::{GanError, GanHyper, ModelPair};
use crate::nn::{
    AdamConfig, Conv1dSpec, Conv2dSpec, DiscConfig, GenConfig, NnError, ParamStore, Tape, Tensor,
    Var,
};

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Denominator floor, relative to the loss magnitude. Central differences
/// carry rounding noise of about `|loss| * 2^-52 / FD_EPS`, so entries whose
/// true gradient is zero are compared against that scale instead.
pub const REL_FLOOR: f64 = 1e-6;

/// Weight std of the networks under check. At the training init (0.02) the
/// pre-normalization activations are tiny and the `FD_EPS` truncation error
/// dominates the comparison.
pub const CHECK_WEIGHT_STD: f64 = 0.3;

/// Entries sampled per parameter tensor in the network checks.
const NET_SAMPLES: usize = 6;

pub fn relative_error(analytic: f64, numeric: f64, loss: f64) -> f64 {
    let floor = REL_FLOOR * loss.abs().max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub seed: u64,
    pub checked: usize,
    pub max_rel_err: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= FD_TOL
    }
}

type OpFn = fn(&mut Tape, &[Var]) -> Result<Var, NnError>;

/// Input generator: shape plus a sampler that keeps values away from kinks
/// or out-of-domain points.
struct OpCase {
    name: &'static str,
    inputs: Vec<(Vec<usize>, Sampler)>,
    f: OpFn,
}

#[derive(Clone, Copy)]
enum Sampler {
    Normal,
    Positive,
    /// |x| >= 0.1.
    OffZero,
    /// |x| <= 0.05.
    Small,
    /// Uniform on [0.05, 0.45] or [0.55, 0.95], away from a clamp bound at 0.5.
    OffHalf,
}

fn draw(rng: &mut ChaCha8Rng, shape: &[usize], s: Sampler) -> Tensor {
    let mut t = Tensor::randn(shape, 1.0, rng);
    for v in t.data_mut() {
        *v = match s {
            Sampler::Normal => *v,
            Sampler::Positive => 0.2 + v.abs(),
            Sampler::OffZero => v.signum() * (0.1 + v.abs()),
            Sampler::Small => 0.05 * v.tanh(),
            Sampler::OffHalf => {
                let u: f64 = rng.random_range(0.05..0.45);
                if *v > 0.0 {
                    u + 0.5
                } else {
                    u
                }
            }
        };
    }
    t
}

fn op_cases() -> Vec<OpCase> {
    use Sampler::*;
    let n = |s: &[usize]| (s.to_vec(), Normal);
    vec![
        OpCase { name: "add", inputs: vec![n(&[3, 4]), n(&[3, 4])], f: |t, v| t.add(v[0], v[1]) },
        OpCase { name: "sub", inputs: vec![n(&[3, 4]), n(&[3, 4])], f: |t, v| t.sub(v[0], v[1]) },
        OpCase { name: "mul", inputs: vec![n(&[3, 4]), n(&[3, 4])], f: |t, v| t.mul(v[0], v[1]) },
        OpCase { name: "scale", inputs: vec![n(&[5])], f: |t, v| Ok(t.scale(v[0], -1.7)) },
        OpCase { name: "add_scalar", inputs: vec![n(&[5])], f: |t, v| Ok(t.add_scalar(v[0], 0.3)) },
        OpCase { name: "sum", inputs: vec![n(&[2, 3])], f: |t, v| Ok(t.sum(v[0])) },
        OpCase { name: "mean", inputs: vec![n(&[2, 3])], f: |t, v| Ok(t.mean(v[0])) },
        OpCase { name: "log", inputs: vec![(vec![6], Positive)], f: |t, v| t.log(v[0]) },
        OpCase { name: "sigmoid", inputs: vec![n(&[6])], f: |t, v| Ok(t.sigmoid(v[0])) },
        OpCase {
            name: "leaky_relu",
            inputs: vec![(vec![8], OffZero)],
            f: |t, v| Ok(t.leaky_relu(v[0], 0.2)),
        },
        OpCase {
            name: "clamp",
            inputs: vec![(vec![8], OffHalf)],
            f: |t, v| Ok(t.clamp(v[0], 0.5, 1.1)),
        },
        OpCase {
            name: "l1_mean",
            inputs: vec![(vec![2, 5], OffZero), (vec![2, 5], Small)],
            f: |t, v| t.l1_mean(v[0], v[1]),
        },
        OpCase {
            name: "conv1d",
            inputs: vec![n(&[3, 9]), n(&[4, 3, 5]), n(&[4])],
            f: |t, v| t.conv1d(v[0], v[1], v[2], Conv1dSpec { stride: 1, pad: 2 }),
        },
        OpCase {
            name: "conv1d_stride2",
            inputs: vec![n(&[3, 10]), n(&[4, 3, 5]), n(&[4])],
            f: |t, v| t.conv1d(v[0], v[1], v[2], Conv1dSpec { stride: 2, pad: 2 }),
        },
        OpCase {
            name: "conv2d",
            inputs: vec![n(&[2, 5, 6]), n(&[3, 2, 3, 3]), n(&[3])],
            f: |t, v| {
                let spec = Conv2dSpec { stride: (1, 1), pad: (1, 1) };
                t.conv2d(v[0], v[1], v[2], spec)
            },
        },
        OpCase {
            name: "conv2d_stride2",
            inputs: vec![n(&[2, 6, 7]), n(&[3, 2, 3, 3]), n(&[3])],
            f: |t, v| {
                let spec = Conv2dSpec { stride: (2, 2), pad: (1, 1) };
                t.conv2d(v[0], v[1], v[2], spec)
            },
        },
        OpCase { name: "glu", inputs: vec![n(&[4, 5])], f: |t, v| t.glu(v[0]) },
        OpCase { name: "instance_norm", inputs: vec![n(&[3, 7])], f: |t, v| t.instance_norm(v[0]) },
        OpCase {
            name: "channel_affine",
            inputs: vec![n(&[3, 4]), n(&[3]), n(&[3])],
            f: |t, v| t.channel_affine(v[0], v[1], v[2]),
        },
        OpCase {
            name: "concat",
            inputs: vec![n(&[2, 3]), n(&[1, 3])],
            f: |t, v| t.concat(&[v[0], v[1]]),
        },
        OpCase {
            name: "pixel_shuffle1d",
            inputs: vec![n(&[4, 3])],
            f: |t, v| t.pixel_shuffle1d(v[0], 2),
        },
        OpCase { name: "reshape", inputs: vec![n(&[2, 6])], f: |t, v| t.reshape(v[0], vec![3, 4]) },
        OpCase { name: "channel_mean", inputs: vec![n(&[3, 2, 2])], f: |t, v| t.channel_mean(v[0]) },
        OpCase {
            name: "linear",
            inputs: vec![n(&[4]), n(&[3, 4]), n(&[3])],
            f: |t, v| t.linear(v[0], v[1], v[2]),
        },
    ]
}

/// `sum(f(inputs) * r)` for a fixed, non-uniform projection `r`, so every output
/// element contributes with a distinct weight.
fn projected(
    f: OpFn,
    inputs: &[Tensor],
    proj: Option<&Tensor>,
) -> Result<(Tape, Vec<Var>, Var, Tensor), NnError> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let r = match proj {
        Some(r) => r.clone(),
        None => {
            let shape = tape.value(out).shape().to_vec();
            let data = (0..tape.value(out).len())
                .map(|i| 0.5 + ((i * 7919) % 13) as f64 / 13.0)
                .collect();
            Tensor::new(shape, data)?
        }
    };
    let rv = tape.leaf(r.clone());
    let weighted = tape.mul(out, rv)?;
    let loss = tape.sum(weighted);
    Ok((tape, vars, loss, r))
}

fn check_op(case: &OpCase, seed: u64) -> Result<CheckResult, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor> = case
        .inputs
        .iter()
        .map(|(s, k)| draw(&mut rng, s, *k))
        .collect();
    let (tape, vars, loss, r) = projected(case.f, &inputs, None)?;
    let grads = tape.backward(loss)?;
    let loss_value = tape.value(loss).item();
    let eval = |inputs: &[Tensor]| -> Result<f64, NnError> {
        let (tape, _, loss, _) = projected(case.f, inputs, Some(&r))?;
        Ok(tape.value(loss).item())
    };
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        for i in 0..inputs[k].len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += FD_EPS;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= FD_EPS;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_EPS);
            worst = worst.max(relative_error(analytic.data()[i], numeric, loss_value));
            checked += 1;
        }
    }
    Ok(CheckResult {
        name: case.name.to_string(),
        seed,
        checked,
        max_rel_err: worst,
    })
}

/// Every differentiable op on random inputs drawn from `seed`.
pub fn check_ops(seed: u64) -> Result<Vec<CheckResult>, NnError> {
    op_cases().iter().map(|c| check_op(c, seed)).collect()
}

/// Small networks that keep the full-objective checks fast, with weights
/// redrawn at [`CHECK_WEIGHT_STD`].
pub fn tiny_pair(channels: usize, seed: u64) -> Result<ModelPair, NnError> {
    let gen = GenConfig {
        width: 4,
        n_res: 1,
        ..GenConfig::desk(channels)
    };
    let disc = DiscConfig {
        base: 4,
        ..DiscConfig::default()
    };
    let mut pair = ModelPair::new(gen, disc, AdamConfig::default(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3e1);
    for which in 0..4 {
        let s = store_mut(&mut pair, which);
        let names = s.names().to_vec();
        for (name, t) in names.iter().zip(s.values_mut()) {
            if name.ends_with(".w") {
                *t = Tensor::randn(t.shape(), CHECK_WEIGHT_STD, &mut rng);
            }
        }
    }
    Ok(pair)
}

fn store(pair: &ModelPair, which: usize) -> &ParamStore {
    match which {
        0 => pair.g_xy.params(),
        1 => pair.g_yx.params(),
        2 => pair.d_x.params(),
        _ => pair.d_y.params(),
    }
}

fn store_mut(pair: &mut ModelPair, which: usize) -> &mut ParamStore {
    match which {
        0 => pair.g_xy.params_mut(),
        1 => pair.g_yx.params_mut(),
        2 => pair.d_x.params_mut(),
        _ => pair.d_y.params_mut(),
    }
}

fn check_objective(
    name: &str,
    pair: &ModelPair,
    seed: u64,
    loss: f64,
    models: [usize; 2],
    analytic: &[Vec<Tensor>; 2],
    eval: impl Fn(&ModelPair) -> Result<f64, GanError>,
) -> Result<CheckResult, GanError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (slot, &which) in models.iter().enumerate() {
        let n_tensors = store(pair, which).len();
        for p in 0..n_tensors {
            let len = store(pair, which).values()[p].len();
            for i in sample(&mut rng, len, NET_SAMPLES.min(len)) {
                let mut plus = pair.clone();
                store_mut(&mut plus, which).values_mut()[p].data_mut()[i] += FD_EPS;
                let mut minus = pair.clone();
                store_mut(&mut minus, which).values_mut()[p].data_mut()[i] -= FD_EPS;
                let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_EPS);
                let a = analytic[slot][p].data()[i];
                worst = worst.max(relative_error(a, numeric, loss));
                checked += 1;
            }
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        seed,
        checked,
        max_rel_err: worst,
    })
}

/// Generator objective (adversarial through both discriminators, cycle and
/// identity terms) and discriminator objective on a tiny model pair.
pub fn check_objectives(seed: u64) -> Result<Vec<CheckResult>, GanError> {
    let channels = 10;
    let pair = tiny_pair(channels, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let x = Tensor::randn(&[channels, 16], 1.0, &mut rng);
    let y = Tensor::randn(&[channels, 16], 1.0, &mut rng);
    let mut out = Vec::new();
    for (name, saturating) in [("generator_objective", false), ("generator_objective_saturating", true)] {
        let h = GanHyper {
            saturating,
            ..GanHyper::desk()
        };
        let (loss, grads) = pair.generator_objective(&x, &y, &h, 0)?;
        out.push(check_objective(name, &pair, seed, loss, [0, 1], &grads, |p| {
            p.generator_objective_value(&x, &y, &h, 0)
        })?);
    }
    let h = GanHyper::desk();
    let (loss, grads) = pair.discriminator_objective(&x, &y, &h)?;
    out.push(check_objective("discriminator_objective", &pair, seed, loss, [2, 3], &grads, |p| {
        p.discriminator_objective_value(&x, &y, &h)
    })?);
    Ok(out)
}
