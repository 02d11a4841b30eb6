//! Tape-recording graph and reverse-mode backward pass.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::{self, ConvGeom};
use super::{AutonnError, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
    GlobalAvg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    AbsDiff,
}

/// Batch statistics produced by a train-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for running-statistic updates.
    pub var_unbiased: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Broadcast {
    a_idx: Vec<usize>,
    b_idx: Vec<usize>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
        dims: (usize, usize, usize),
    },
    Relu(Var),
    Sigmoid(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        window: (usize, usize),
        stride: (usize, usize),
    },
    GlobalAvgPool(Var),
    Binary {
        a: Var,
        b: Var,
        op: BinaryOp,
        bcast: Option<Broadcast>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Square(Var),
    Sqrt(Var),
    Scale(Var, f64),
    CosineChannel {
        x: Var,
        y: Var,
        nx: Vec<f64>,
        ny: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of executed operations. Each record's inputs precede it,
/// so a single reverse sweep visits every record once.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: IndexMap<String, Var>,
    stat_updates: Vec<(String, BatchStats)>,
}

fn shape_err(msg: String) -> AutonnError {
    AutonnError::Shape(msg)
}

impl Graph {
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` call with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub(crate) fn bound_var(&self, name: &str) -> Option<Var> {
        self.bound.get(name).copied()
    }

    pub(crate) fn record_binding(&mut self, name: &str, v: Var) {
        self.bound.insert(name.to_string(), v);
    }

    pub(crate) fn bindings(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bound.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub(crate) fn push_stat_update(&mut self, name: &str, stats: BatchStats) {
        self.stat_updates.push((name.to_string(), stats));
    }

    /// Drains the batch-norm statistics recorded by train-mode forwards.
    pub fn take_stat_updates(&mut self) -> Vec<(String, BatchStats)> {
        std::mem::take(&mut self.stat_updates)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var, AutonnError> {
        let xs = self.value(x);
        let ws = self.value(w);
        let (n, c, h, wd) = xs.nchw()?;
        let (o, i, kh, kw) = ws.nchw()?;
        if c != i {
            return Err(shape_err(format!(
                "conv2d: input {:?} has {c} channels but kernel {:?} expects {i}",
                xs.shape(),
                ws.shape()
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(AutonnError::InvalidArgument("conv2d stride must be positive".into()));
        }
        if h + 2 * padding.0 < kh || wd + 2 * padding.1 < kw {
            return Err(shape_err(format!(
                "conv2d: kernel {:?} larger than padded input {:?}",
                ws.shape(),
                xs.shape()
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(shape_err(format!(
                    "conv2d: bias {:?} does not match {o} output channels",
                    self.shape(b)
                )));
            }
        }
        let geom = ConvGeom {
            n,
            c,
            h,
            w: wd,
            o,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            ph: padding.0,
            pw: padding.1,
            oh: (h + 2 * padding.0 - kh) / stride.0 + 1,
            ow: (wd + 2 * padding.1 - kw) / stride.1 + 1,
        };
        let out = conv::forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let t = Tensor::new(&[n, o, geom.oh, geom.ow], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(t, Op::Conv2d { x, w, b, geom }, &inputs))
    }

    /// Batch normalization over every axis except the channel axis (axis 1).
    /// Accepts `N×C` or `N×C×H×W`. In eval mode `running` supplies the
    /// statistics; in train mode the batch statistics are used and returned.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&[f64], &[f64]),
        eps: f64,
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats>), AutonnError> {
        if !(eps > 0.0) {
            return Err(AutonnError::InvalidArgument(format!(
                "batch norm eps must be positive, got {eps}"
            )));
        }
        let xs = self.value(x);
        let (n, c, s) = match xs.shape()[..] {
            [n, c] => (n, c, 1),
            [n, c, h, w] => (n, c, h * w),
            _ => {
                return Err(shape_err(format!(
                    "batch norm expects N×C or N×C×H×W, got {:?}",
                    xs.shape()
                )))
            }
        };
        for (what, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(shape_err(format!(
                    "batch norm {what} {:?} does not match {c} channels of {:?}",
                    self.shape(v),
                    xs.shape()
                )));
            }
        }
        if running.0.len() != c || running.1.len() != c {
            return Err(shape_err(format!(
                "batch norm running statistics have {} entries, expected {c}",
                running.0.len()
            )));
        }
        let data = xs.data();
        let m = (n * s) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        let train = mode == Mode::Train;
        if train {
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * s;
                    mean[ci] += data[base..base + s].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|v| *v /= m);
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * s;
                    var[ci] += data[base..base + s]
                        .iter()
                        .map(|v| (v - mean[ci]).powi(2))
                        .sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= m);
        } else {
            mean.copy_from_slice(running.0);
            var.copy_from_slice(running.1);
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; data.len()];
        let mut out = vec![0.0; data.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * s;
                for k in base..base + s {
                    let xh = (data[k] - mean[ci]) * inv_std[ci];
                    xhat[k] = xh;
                    out[k] = g[ci] * xh + bt[ci];
                }
            }
        }
        let stats = train.then(|| BatchStats {
            var_unbiased: if m > 1.0 {
                var.iter().map(|v| v * m / (m - 1.0)).collect()
            } else {
                var.clone()
            },
            mean,
        });
        let t = Tensor::new(xs.shape(), out)?;
        let v = self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
                dims: (n, c, s),
            },
            &[x, gamma, beta],
        );
        Ok((v, stats))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xs = self.value(x);
        let data = xs.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(xs.shape(), data).unwrap();
        self.push(t, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Square root; the gradient at exactly zero is taken as 0.
    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |v| v * k, Op::Scale(x, k))
    }

    /// `y = x · wᵀ + b` with `x: N×F`, `w: G×F`, `b: G`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, AutonnError> {
        let xs = self.value(x);
        let ws = self.value(w);
        let (n, f) = match xs.shape()[..] {
            [n, f] => (n, f),
            _ => return Err(shape_err(format!("linear expects N×F input, got {:?}", xs.shape()))),
        };
        let (g, wf) = match ws.shape()[..] {
            [g, wf] => (g, wf),
            _ => return Err(shape_err(format!("linear expects G×F weights, got {:?}", ws.shape()))),
        };
        if f != wf {
            return Err(shape_err(format!(
                "linear: input {:?} does not match weights {:?}",
                xs.shape(),
                ws.shape()
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [g] {
                return Err(shape_err(format!(
                    "linear: bias {:?} does not match {g} outputs",
                    self.shape(b)
                )));
            }
        }
        let xd = xs.data();
        let wd = ws.data();
        let bd = b.map(|b| self.value(b).data());
        let mut out = vec![0.0; n * g];
        for r in 0..n {
            let row = &xd[r * f..(r + 1) * f];
            for j in 0..g {
                let dot: f64 = row.iter().zip(&wd[j * f..(j + 1) * f]).map(|(a, b)| a * b).sum();
                out[r * g + j] = dot + bd.map_or(0.0, |b| b[j]);
            }
        }
        let t = Tensor::new(&[n, g], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(t, Op::Linear { x, w, b }, &inputs))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)` in train mode,
    /// eval mode is the identity.
    pub fn dropout(&mut self, x: Var, p: f64, mode: Mode, seed: u64) -> Result<Var, AutonnError> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutonnError::InvalidArgument(format!(
                "dropout rate must lie in [0, 1), got {p}"
            )));
        }
        let len = self.value(x).len();
        let mask: Vec<f64> = if mode == Mode::Eval || p == 0.0 {
            vec![1.0; len]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let keep = 1.0 / (1.0 - p);
            (0..len)
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect()
        };
        let xs = self.value(x);
        let data = xs.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::new(xs.shape(), data)?;
        Ok(self.push(t, Op::Dropout { x, mask }, &[x]))
    }

    pub fn pool(
        &mut self,
        x: Var,
        kind: PoolKind,
        window: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Var, AutonnError> {
        let xs = self.value(x);
        let (n, c, h, w) = xs.nchw()?;
        if kind == PoolKind::GlobalAvg {
            let hw = (h * w) as f64;
            let data = xs
                .data()
                .chunks(h * w)
                .map(|ch| ch.iter().sum::<f64>() / hw)
                .collect();
            let t = Tensor::new(&[n, c, 1, 1], data)?;
            return Ok(self.push(t, Op::GlobalAvgPool(x), &[x]));
        }
        let (kh, kw) = window;
        let (sh, sw) = stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || kh > h || kw > w {
            return Err(AutonnError::InvalidArgument(format!(
                "pool window {window:?} / stride {stride:?} invalid for input {:?}",
                xs.shape()
            )));
        }
        let oh = (h - kh) / sh + 1;
        let ow = (w - kw) / sw + 1;
        let d = xs.data();
        let mut out = vec![0.0; n * c * oh * ow];
        let mut argmax = Vec::new();
        if kind == PoolKind::Max {
            argmax = vec![0; out.len()];
        }
        for nc in 0..n * c {
            let base = nc * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let oi = (nc * oh + oy) * ow + ox;
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    let mut sum = 0.0;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let ii = base + (oy * sh + ky) * w + ox * sw + kx;
                            sum += d[ii];
                            if d[ii] > best {
                                best = d[ii];
                                best_i = ii;
                            }
                        }
                    }
                    if kind == PoolKind::Max {
                        out[oi] = best;
                        argmax[oi] = best_i;
                    } else {
                        out[oi] = sum / (kh * kw) as f64;
                    }
                }
            }
        }
        let t = Tensor::new(&[n, c, oh, ow], out)?;
        let op = match kind {
            PoolKind::Max => Op::MaxPool { x, argmax },
            _ => Op::AvgPool { x, window, stride },
        };
        Ok(self.push(t, op, &[x]))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, AutonnError> {
        self.pool(x, PoolKind::GlobalAvg, (0, 0), (0, 0))
    }

    /// Elementwise binary op. Operands must have equal rank; each extent
    /// must match or be 1 on one side (broadcast).
    pub fn binary(&mut self, a: Var, b: Var, op: BinaryOp) -> Result<Var, AutonnError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let f = |x: f64, y: f64| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
            BinaryOp::AbsDiff => (x - y).abs(),
        };
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        if sa == sb {
            let data = ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect();
            let t = Tensor::new(&sa, data)?;
            return Ok(self.push(t, Op::Binary { a, b, op, bcast: None }, &[a, b]));
        }
        if sa.len() != sb.len() {
            return Err(shape_err(format!(
                "{op:?}: incompatible shapes {sa:?} and {sb:?}"
            )));
        }
        let mut out_shape = Vec::with_capacity(sa.len());
        for (&x, &y) in sa.iter().zip(&sb) {
            if x != y && x != 1 && y != 1 {
                return Err(shape_err(format!(
                    "{op:?}: incompatible shapes {sa:?} and {sb:?}"
                )));
            }
            out_shape.push(x.max(y));
        }
        let strides = |s: &[usize]| {
            let mut st = vec![0; s.len()];
            let mut acc = 1;
            for d in (0..s.len()).rev() {
                st[d] = if s[d] == 1 { 0 } else { acc };
                acc *= s[d];
            }
            st
        };
        let (st_a, st_b) = (strides(&sa), strides(&sb));
        let total: usize = out_shape.iter().product();
        let mut a_idx = Vec::with_capacity(total);
        let mut b_idx = Vec::with_capacity(total);
        let mut idx = vec![0usize; out_shape.len()];
        for _ in 0..total {
            a_idx.push(idx.iter().zip(&st_a).map(|(i, s)| i * s).sum());
            b_idx.push(idx.iter().zip(&st_b).map(|(i, s)| i * s).sum());
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let data = a_idx
            .iter()
            .zip(&b_idx)
            .map(|(&i, &j)| f(ad[i], bd[j]))
            .collect();
        let t = Tensor::new(&out_shape, data)?;
        Ok(self.push(
            t,
            Op::Binary {
                a,
                b,
                op,
                bcast: Some(Broadcast { a_idx, b_idx }),
            },
            &[a, b],
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutonnError> {
        self.binary(a, b, BinaryOp::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutonnError> {
        self.binary(a, b, BinaryOp::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutonnError> {
        self.binary(a, b, BinaryOp::Mul)
    }

    pub fn abs_diff(&mut self, a: Var, b: Var) -> Result<Var, AutonnError> {
        self.binary(a, b, BinaryOp::AbsDiff)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, AutonnError> {
        let first = inputs
            .first()
            .ok_or_else(|| AutonnError::InvalidArgument("concat of an empty list".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(AutonnError::InvalidArgument(format!(
                "concat axis {axis} out of range for rank {}",
                base.len()
            )));
        }
        let mut axis_total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(shape_err(format!(
                    "concat on axis {axis}: shape {s:?} incompatible with {base:?}"
                )));
            }
            axis_total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * axis_total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = axis_total;
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutonnError> {
        let t = self.value(x).reshape(shape)?;
        Ok(self.push(t.with_requires_grad(false), Op::Reshape(x), &[x]))
    }

    /// Flattens everything after the batch axis into `N×F`.
    pub fn flatten(&mut self, x: Var) -> Result<Var, AutonnError> {
        let s = self.shape(x);
        let n = s[0];
        let f: usize = s[1..].iter().product();
        self.reshape(x, &[n, f])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Cosine similarity across the channel axis at every spatial position:
    /// `(N,C,H,W) × (N,C,H,W) → (N,1,H,W)`. Positions where either norm is
    /// below 1e-12 yield 0 with zero gradient.
    pub fn cosine_channel(&mut self, x: Var, y: Var) -> Result<Var, AutonnError> {
        let xs = self.value(x);
        let ys = self.value(y);
        if xs.shape() != ys.shape() {
            return Err(shape_err(format!(
                "cosine similarity: shapes {:?} and {:?} differ",
                xs.shape(),
                ys.shape()
            )));
        }
        let (n, c, h, w) = xs.nchw()?;
        let hw = h * w;
        let (xd, yd) = (xs.data(), ys.data());
        let mut nx = vec![0.0; n * hw];
        let mut ny = vec![0.0; n * hw];
        let mut out = vec![0.0; n * hw];
        for ni in 0..n {
            for p in 0..hw {
                let (mut dot, mut sx, mut sy) = (0.0, 0.0, 0.0);
                for ci in 0..c {
                    let k = (ni * c + ci) * hw + p;
                    dot += xd[k] * yd[k];
                    sx += xd[k] * xd[k];
                    sy += yd[k] * yd[k];
                }
                let (a, b) = (sx.sqrt(), sy.sqrt());
                let o = ni * hw + p;
                nx[o] = a;
                ny[o] = b;
                out[o] = if a < COS_EPS || b < COS_EPS {
                    0.0
                } else {
                    (dot / (a * b)).clamp(-1.0, 1.0)
                };
            }
        }
        let t = Tensor::new(&[n, 1, h, w], out)?;
        Ok(self.push(t, Op::CosineChannel { x, y, nx, ny }, &[x, y]))
    }

    /// Reverse sweep from a scalar loss. Leaves that require grad receive
    /// their accumulated gradient (see [`Graph::grad`]).
    pub fn backward(&mut self, loss: Var) -> Result<(), AutonnError> {
        if self.nodes.is_empty() {
            return Err(AutonnError::EmptyTape);
        }
        let ls = self.shape(loss);
        if ls.iter().product::<usize>() != 1 {
            return Err(AutonnError::NonScalarLoss(ls.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                if self.nodes[i].value.requires_grad() {
                    self.nodes[i].value.set_grad(gout);
                }
                continue;
            }
            self.propagate(i, &gout, &mut grads);
        }
        // Leaves never reached still get an explicit zero gradient.
        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad() && node.value.grad().is_none() {
                let z = vec![0.0; node.value.len()];
                node.value.set_grad(z);
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let len = self.nodes[v.0].value.len();
            let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(g);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let cg = conv::backward(
                    geom,
                    val(*x),
                    val(*w),
                    gout,
                    self.wants(*x),
                    self.wants(*w),
                    b.is_some_and(|b| self.wants(b)),
                );
                if let Some(dx) = cg.dx {
                    acc(*x, &mut |g| add_into(g, &dx));
                }
                if let Some(dw) = cg.dw {
                    acc(*w, &mut |g| add_into(g, &dw));
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    acc(*b, &mut |g| add_into(g, &db));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
                dims: (n, c, s),
            } => {
                let (n, c, s) = (*n, *c, *s);
                let gm = val(*gamma);
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * s;
                        for k in base..base + s {
                            dgamma[ci] += gout[k] * xhat[k];
                            dbeta[ci] += gout[k];
                        }
                    }
                }
                if self.wants(*x) {
                    let mut dx = vec![0.0; gout.len()];
                    let m = (n * s) as f64;
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * s;
                            for k in base..base + s {
                                dx[k] = if *train {
                                    gm[ci] * inv_std[ci] / m
                                        * (m * gout[k] - dbeta[ci] - xhat[k] * dgamma[ci])
                                } else {
                                    gm[ci] * inv_std[ci] * gout[k]
                                };
                            }
                        }
                    }
                    acc(*x, &mut |g| add_into(g, &dx));
                }
                acc(*gamma, &mut |g| add_into(g, &dgamma));
                acc(*beta, &mut |g| add_into(g, &dbeta));
            }
            Op::Relu(x) => {
                let xd = val(*x);
                acc(*x, &mut |g| {
                    for ((g, &o), &xv) in g.iter_mut().zip(gout).zip(xd) {
                        if xv > 0.0 {
                            *g += o;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, &mut |g| {
                    for ((g, &o), &yv) in g.iter_mut().zip(gout).zip(y) {
                        *g += o * yv * (1.0 - yv);
                    }
                });
            }
            Op::Square(x) => {
                let xd = val(*x);
                acc(*x, &mut |g| {
                    for ((g, &o), &xv) in g.iter_mut().zip(gout).zip(xd) {
                        *g += 2.0 * xv * o;
                    }
                });
            }
            Op::Sqrt(x) => {
                let y = node.value.data();
                acc(*x, &mut |g| {
                    for ((g, &o), &yv) in g.iter_mut().zip(gout).zip(y) {
                        if yv > 0.0 {
                            *g += 0.5 * o / yv;
                        }
                    }
                });
            }
            Op::Scale(x, k) => {
                acc(*x, &mut |g| {
                    for (g, &o) in g.iter_mut().zip(gout) {
                        *g += k * o;
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let (n, f) = (self.shape(*x)[0], self.shape(*x)[1]);
                let gdim = self.shape(*w)[0];
                let (xd, wd) = (val(*x), val(*w));
                acc(*x, &mut |g| {
                    for r in 0..n {
                        for j in 0..gdim {
                            let o = gout[r * gdim + j];
                            if o == 0.0 {
                                continue;
                            }
                            for k in 0..f {
                                g[r * f + k] += o * wd[j * f + k];
                            }
                        }
                    }
                });
                acc(*w, &mut |g| {
                    for r in 0..n {
                        for j in 0..gdim {
                            let o = gout[r * gdim + j];
                            for k in 0..f {
                                g[j * f + k] += o * xd[r * f + k];
                            }
                        }
                    }
                });
                if let Some(b) = b {
                    acc(*b, &mut |g| {
                        for r in 0..n {
                            for j in 0..gdim {
                                g[j] += gout[r * gdim + j];
                            }
                        }
                    });
                }
            }
            Op::Dropout { x, mask } => {
                acc(*x, &mut |g| {
                    for ((g, &o), &m) in g.iter_mut().zip(gout).zip(mask) {
                        *g += o * m;
                    }
                });
            }
            Op::MaxPool { x, argmax } => {
                acc(*x, &mut |g| {
                    for (&o, &src) in gout.iter().zip(argmax) {
                        g[src] += o;
                    }
                });
            }
            Op::AvgPool { x, window, stride } => {
                let (n, c, h, w) = self.value(*x).nchw().unwrap();
                let (_, _, oh, ow) = node.value.nchw().unwrap();
                let norm = 1.0 / (window.0 * window.1) as f64;
                acc(*x, &mut |g| {
                    for nc in 0..n * c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let o = gout[(nc * oh + oy) * ow + ox] * norm;
                                for ky in 0..window.0 {
                                    for kx in 0..window.1 {
                                        g[nc * h * w + (oy * stride.0 + ky) * w + ox * stride.1 + kx] += o;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                let (_, _, h, w) = self.value(*x).nchw().unwrap();
                let hw = h * w;
                acc(*x, &mut |g| {
                    for (k, &o) in gout.iter().enumerate() {
                        let v = o / hw as f64;
                        g[k * hw..(k + 1) * hw].iter_mut().for_each(|e| *e += v);
                    }
                });
            }
            Op::Binary { a, b, op, bcast } => {
                let (ad, bd) = (val(*a), val(*b));
                let n = gout.len();
                let ia = |k: usize| bcast.as_ref().map_or(k, |bc| bc.a_idx[k]);
                let ib = |k: usize| bcast.as_ref().map_or(k, |bc| bc.b_idx[k]);
                acc(*a, &mut |g| {
                    for k in 0..n {
                        let (i, j) = (ia(k), ib(k));
                        g[i] += gout[k]
                            * match op {
                                BinaryOp::Add | BinaryOp::Sub => 1.0,
                                BinaryOp::Mul => bd[j],
                                BinaryOp::AbsDiff => sign(ad[i] - bd[j]),
                            };
                    }
                });
                acc(*b, &mut |g| {
                    for k in 0..n {
                        let (i, j) = (ia(k), ib(k));
                        g[j] += gout[k]
                            * match op {
                                BinaryOp::Add => 1.0,
                                BinaryOp::Sub => -1.0,
                                BinaryOp::Mul => ad[i],
                                BinaryOp::AbsDiff => -sign(ad[i] - bd[j]),
                            };
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for v in inputs {
                    let block = self.shape(*v)[*axis] * inner;
                    acc(*v, &mut |g| {
                        for o in 0..outer {
                            add_into(
                                &mut g[o * block..(o + 1) * block],
                                &gout[o * row + offset..o * row + offset + block],
                            );
                        }
                    });
                    offset += block;
                }
            }
            Op::Reshape(x) => acc(*x, &mut |g| add_into(g, gout)),
            Op::Sum(x) => acc(*x, &mut |g| g.iter_mut().for_each(|e| *e += gout[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                acc(*x, &mut |g| g.iter_mut().for_each(|e| *e += gout[0] / n));
            }
            Op::CosineChannel { x, y, nx, ny } => {
                let (nb, c, h, w) = self.value(*x).nchw().unwrap();
                let hw = h * w;
                let (xd, yd) = (val(*x), val(*y));
                let cs = node.value.data();
                let grad_of = |first: &[f64], second: &[f64], n1: &[f64], g: &mut [f64]| {
                    for ni in 0..nb {
                        for p in 0..hw {
                            let o = ni * hw + p;
                            let (a, b) = (nx[o], ny[o]);
                            if a < COS_EPS || b < COS_EPS || gout[o] == 0.0 {
                                continue;
                            }
                            let self_norm = n1[o];
                            for ci in 0..c {
                                let k = (ni * c + ci) * hw + p;
                                g[k] += gout[o]
                                    * (second[k] / (a * b) - cs[o] * first[k] / (self_norm * self_norm));
                            }
                        }
                    }
                };
                acc(*x, &mut |g| grad_of(xd, yd, nx, g));
                acc(*y, &mut |g| grad_of(yd, xd, ny, g));
            }
        }
    }
}

const COS_EPS: f64 = 1e-12;

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}
