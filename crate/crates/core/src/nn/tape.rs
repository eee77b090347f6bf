//! Reverse-mode differentiation over a linear tape of tensor ops.
//!
//! Every op appends a node holding its forward value. `backward` walks the
//! nodes in reverse and accumulates gradients into each parent.

use super::conv::Geometry;
use super::params::ParamStore;
use super::tensor::Tensor;
use super::NnError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

pub const INSTANCE_NORM_EPS: f64 = 1e-8;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    Log(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Clamp(Var, f64, f64),
    L1Mean(Var, Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        spec: Conv1dSpec,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        spec: Conv2dSpec,
    },
    Glu(Var),
    InstanceNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    ChannelAffine {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    Concat(Vec<Var>),
    PixelShuffle1d(Var, usize),
    Reshape(Var),
    ChannelMean(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Parameters of one [`ParamStore`] placed on a tape, in store order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: super::ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<(), NnError> {
    if a.shape() != b.shape() {
        return Err(NnError::Shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn shape_err<T>(msg: String) -> Result<T, NnError> {
    Err(NnError::Shape(msg))
}

fn conv1d_geometry(ci: usize, len: usize, co: usize, k: usize, spec: Conv1dSpec) -> Geometry {
    Geometry {
        ci,
        h: 1,
        w: len,
        co,
        kh: 1,
        kw: k,
        sh: 1,
        sw: spec.stride,
        ph: 0,
        pw: spec.pad,
    }
}

fn conv2d_geometry(xs: &[usize], ws: &[usize], spec: Conv2dSpec) -> Geometry {
    Geometry {
        ci: xs[0],
        h: xs[1],
        w: xs[2],
        co: ws[0],
        kh: ws[2],
        kw: ws[3],
        sh: spec.stride.0,
        sw: spec.stride.1,
        ph: spec.pad.0,
        pw: spec.pad.1,
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Input or constant; gradients with respect to it are still available.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn bind(&mut self, store: &ParamStore) -> Bound {
        Bound {
            vars: store.values().iter().map(|t| self.leaf(t.clone())).collect(),
        }
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data).unwrap();
        self.push(value, op)
    }

    fn binary(
        &mut self,
        name: &str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NnError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(name, x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |v| v * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |v| v + s, Op::AddScalar(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let s = self.value(a).mean();
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NnError> {
        if let Some(&v) = self.value(a).data().iter().find(|&&v| !(v > 0.0)) {
            return Err(NnError::Domain(format!("log of {v}")));
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |v| v.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// `mean(|a - b|)` as a scalar.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("l1_mean", x, y)?;
        let s = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>()
            / x.len() as f64;
        Ok(self.push(Tensor::scalar(s), Op::L1Mean(a, b)))
    }

    /// `x: [Ci, T]`, `w: [Co, Ci, K]`, `b: [Co]` → `[Co, (T + 2p - K) / s + 1]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, spec: Conv1dSpec) -> Result<Var, NnError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() != 2 || ws.len() != 3 || ws[1] != xs[0] || bv.shape() != [ws[0]] {
            return shape_err(format!("conv1d: x {xs:?}, w {ws:?}, b {:?}", bv.shape()));
        }
        let (ci_n, t_len, co_n, k_n) = (xs[0], xs[1], ws[0], ws[2]);
        let Conv1dSpec { stride, pad } = spec;
        if stride == 0 || t_len + 2 * pad < k_n {
            return shape_err(format!("conv1d: input length {t_len} too short for kernel {k_n}"));
        }
        let geo = conv1d_geometry(ci_n, t_len, co_n, k_n, spec);
        let t_out = geo.out_w();
        let out = geo.forward(xv.data(), wv.data(), bv.data());
        let value = Tensor::new(vec![co_n, t_out], out)?;
        Ok(self.push(value, Op::Conv1d { x, w, b, spec }))
    }

    /// `x: [Ci, H, W]`, `w: [Co, Ci, KH, KW]`, `b: [Co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: Conv2dSpec) -> Result<Var, NnError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || bv.shape() != [ws[0]] {
            return shape_err(format!("conv2d: x {xs:?}, w {ws:?}, b {:?}", bv.shape()));
        }
        let (h, wd_len) = (xs[1], xs[2]);
        let (co_n, kh_n, kw_n) = (ws[0], ws[2], ws[3]);
        let Conv2dSpec {
            stride: (sh, sw),
            pad: (ph, pw),
        } = spec;
        if sh == 0 || sw == 0 || h + 2 * ph < kh_n || wd_len + 2 * pw < kw_n {
            return shape_err(format!("conv2d: input {h}x{wd_len} too small for kernel {kh_n}x{kw_n}"));
        }
        let geo = conv2d_geometry(xs, ws, spec);
        let (ho, wo) = (geo.out_h(), geo.out_w());
        let out = geo.forward(xv.data(), wv.data(), bv.data());
        let value = Tensor::new(vec![co_n, ho, wo], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, spec }))
    }

    /// Splits dim 0 in half, `a * sigmoid(b)`.
    pub fn glu(&mut self, x: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        let c2 = xv.shape()[0];
        if c2 % 2 != 0 {
            return shape_err(format!("glu: odd leading extent {c2}"));
        }
        let half = xv.len() / 2;
        let (a, g) = xv.data().split_at(half);
        let data = a.iter().zip(g).map(|(&p, &q)| p * sigmoid(q)).collect();
        let mut shape = xv.shape().to_vec();
        shape[0] = c2 / 2;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Glu(x)))
    }

    /// Per-channel (dim 0) normalization to zero mean and unit variance over
    /// the remaining dims, no affine part.
    pub fn instance_norm(&mut self, x: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        if xv.rank() < 2 {
            return shape_err(format!("instance_norm: rank {} input", xv.rank()));
        }
        let c_n = xv.shape()[0];
        let n = xv.len() / c_n;
        let mut out = vec![0.0; xv.len()];
        let mut inv_std = Vec::with_capacity(c_n);
        for c in 0..c_n {
            let src = &xv.data()[c * n..(c + 1) * n];
            let mean = src.iter().sum::<f64>() / n as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
            for (o, v) in out[c * n..(c + 1) * n].iter_mut().zip(src) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(value, Op::InstanceNorm { x, inv_std }))
    }

    /// `gamma[c] * x + beta[c]` along dim 0.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NnError> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let c_n = xv.shape()[0];
        if gv.shape() != [c_n] || bv.shape() != [c_n] {
            return shape_err(format!(
                "channel_affine: x {:?}, gamma {:?}, beta {:?}",
                xv.shape(),
                gv.shape(),
                bv.shape()
            ));
        }
        let n = xv.len() / c_n;
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| gv.data()[i / n] * v + bv.data()[i / n])
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::ChannelAffine { x, gamma, beta }))
    }

    /// Concatenation along dim 0.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let first = match parts.first() {
            Some(&v) => self.value(v),
            None => return shape_err("concat: no inputs".into()),
        };
        let tail = first.shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape()[1..] != tail[..] {
                return shape_err(format!("concat: {:?} vs trailing {tail:?}", t.shape()));
            }
            lead += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec())))
    }

    /// `[C * r, T]` → `[C, T * r]` with `out[c, t * r + j] = in[c * r + j, t]`.
    pub fn pixel_shuffle1d(&mut self, x: Var, r: usize) -> Result<Var, NnError> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 2 || r == 0 || s[0] % r != 0 {
            return shape_err(format!("pixel_shuffle1d: {s:?} by {r}"));
        }
        let (c_n, t_len) = (s[0] / r, s[1]);
        let mut out = vec![0.0; xv.len()];
        for c in 0..c_n {
            for j in 0..r {
                let src = &xv.data()[(c * r + j) * t_len..(c * r + j + 1) * t_len];
                for (t, v) in src.iter().enumerate() {
                    out[c * t_len * r + t * r + j] = *v;
                }
            }
        }
        let value = Tensor::new(vec![c_n, t_len * r], out)?;
        Ok(self.push(value, Op::PixelShuffle1d(x, r)))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, NnError> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Mean over every dim but the first: `[C, ...]` → `[C]`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        let c_n = xv.shape()[0];
        let n = xv.len() / c_n;
        let data = xv
            .data()
            .chunks_exact(n)
            .map(|ch| ch.iter().sum::<f64>() / n as f64)
            .collect();
        let value = Tensor::new(vec![c_n], data)?;
        Ok(self.push(value, Op::ChannelMean(x)))
    }

    /// `x: [N]`, `w: [M, N]`, `b: [M]` → `[M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let n = xv.len();
        if xv.rank() != 1 || wv.rank() != 2 || wv.shape()[1] != n || bv.shape() != [wv.shape()[0]]
        {
            return shape_err(format!(
                "linear: x {:?}, w {:?}, b {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            ));
        }
        let data = wv
            .data()
            .chunks_exact(n)
            .zip(bv.data())
            .map(|(row, b)| b + row.iter().zip(xv.data()).map(|(p, q)| p * q).sum::<f64>())
            .collect();
        let value = Tensor::new(vec![wv.shape()[0]], data)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    /// Gradients of the scalar `loss` with respect to every node recorded
    /// before it.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NnError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes[..=loss.0]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let len = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g)),
            Op::AddScalar(a) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g)),
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / n))
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] / x[i];
                    }
                })
            }
            Op::Sigmoid(a) => acc(*a, &mut |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * out[i] * (1.0 - out[i]);
                }
            }),
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a).data();
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += if x[i] > 0.0 { g[i] } else { slope * g[i] };
                    }
                })
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).data();
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        if x[i] >= *lo && x[i] <= *hi {
                            d[i] += g[i];
                        }
                    }
                })
            }
            Op::L1Mean(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let scale = g[0] / av.len() as f64;
                let sign = |i: usize| {
                    let diff = av[i] - bv[i];
                    if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                };
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += scale * sign(i);
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] -= scale * sign(i);
                    }
                });
            }
            Op::Conv1d { x, w, b, spec } => {
                let (xs, ws) = (self.value(*x).shape(), self.value(*w).shape());
                let geo = conv1d_geometry(xs[0], xs[1], ws[0], ws[2], *spec);
                self.conv_backward(geo, *x, *w, *b, g, grads)
            }
            Op::Conv2d { x, w, b, spec } => {
                let geo = conv2d_geometry(self.value(*x).shape(), self.value(*w).shape(), *spec);
                self.conv_backward(geo, *x, *w, *b, g, grads)
            }
            Op::Glu(x) => {
                let xv = self.value(*x).data();
                let half = xv.len() / 2;
                acc(*x, &mut |d| {
                    let (da, db) = d.split_at_mut(half);
                    for i in 0..half {
                        let s = sigmoid(xv[half + i]);
                        da[i] += g[i] * s;
                        db[i] += g[i] * xv[i] * s * (1.0 - s);
                    }
                })
            }
            Op::InstanceNorm { x, inv_std } => {
                let c_n = inv_std.len();
                let n = out.len() / c_n;
                acc(*x, &mut |d| {
                    for c in 0..c_n {
                        let r = c * n..(c + 1) * n;
                        let (gy, y) = (&g[r.clone()], &out[r.clone()]);
                        let sum_g: f64 = gy.iter().sum();
                        let sum_gy: f64 = gy.iter().zip(y).map(|(p, q)| p * q).sum();
                        let k = inv_std[c] / n as f64;
                        for (i, di) in d[r].iter_mut().enumerate() {
                            *di += k * (n as f64 * gy[i] - sum_g - y[i] * sum_gy);
                        }
                    }
                })
            }
            Op::ChannelAffine { x, gamma, beta } => {
                let (xv, gv) = (self.value(*x).data(), self.value(*gamma).data());
                let c_n = gv.len();
                let n = xv.len() / c_n;
                acc(*x, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * gv[i / n];
                    }
                });
                acc(*gamma, &mut |d| {
                    for c in 0..c_n {
                        d[c] += (c * n..(c + 1) * n).map(|i| g[i] * xv[i]).sum::<f64>();
                    }
                });
                acc(*beta, &mut |d| {
                    for c in 0..c_n {
                        d[c] += g[c * n..(c + 1) * n].iter().sum::<f64>();
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(p, &mut |d| {
                        d.iter_mut()
                            .zip(&g[off..off + len])
                            .for_each(|(d, g)| *d += g)
                    });
                    off += len;
                }
            }
            Op::PixelShuffle1d(x, r) => {
                let s = self.value(*x).shape();
                let (c_n, t_len, r) = (s[0] / r, s[1], *r);
                acc(*x, &mut |d| {
                    for c in 0..c_n {
                        for j in 0..r {
                            for t in 0..t_len {
                                d[(c * r + j) * t_len + t] += g[c * t_len * r + t * r + j];
                            }
                        }
                    }
                })
            }
            Op::Reshape(x) => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g)),
            Op::ChannelMean(x) => {
                let len = self.value(*x).len();
                let n = len / g.len();
                acc(*x, &mut |d| {
                    for i in 0..len {
                        d[i] += g[i / n] / n as f64;
                    }
                })
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let n = xv.len();
                acc(*x, &mut |d| {
                    for (m, gm) in g.iter().enumerate() {
                        for j in 0..n {
                            d[j] += gm * wv[m * n + j];
                        }
                    }
                });
                acc(*w, &mut |d| {
                    for (m, gm) in g.iter().enumerate() {
                        for j in 0..n {
                            d[m * n + j] += gm * xv[j];
                        }
                    }
                });
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
        }
    }

    fn conv_backward(
        &self,
        geo: Geometry,
        x: Var,
        w: Var,
        b: Var,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (xv, wv) = (self.value(x), self.value(w));
        let mut dx = grads[x.0].take().unwrap_or_else(|| vec![0.0; xv.len()]);
        let mut dw = grads[w.0].take().unwrap_or_else(|| vec![0.0; wv.len()]);
        let mut db = grads[b.0].take().unwrap_or_else(|| vec![0.0; geo.co]);
        geo.backward(xv.data(), wv.data(), g, &mut dx, &mut dw, &mut db);
        grads[x.0] = Some(dx);
        grads[w.0] = Some(dw);
        grads[b.0] = Some(db);
    }
}

/// Gradients for every node up to the loss. Nodes the loss does not depend
/// on report zeros.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self
            .shapes
            .get(v.0)
            .cloned()
            .expect("variable recorded after the loss");
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => Tensor::new(shape, g.clone()).unwrap(),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn for_params(&self, bound: &Bound) -> Vec<Tensor> {
        bound.vars.iter().map(|&v| self.wrt(v)).collect()
    }
}
