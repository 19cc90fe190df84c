//! Reverse-mode automatic differentiation over coarse tensor operations.
//!
//! A [`Graph`] is a tape: every operation appends a node whose inputs were
//! appended before it, so node order is a topological order. [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients into leaf nodes.
//!
//! The operation set is deliberately small: exactly what the emotion
//! classifier and the distillation losses need.

mod attention;
mod kernels;

pub use attention::HeadFusion;
pub use kernels::Padding;

use attention::{AttentionGeometry, AttentionSaved};
use kernels::{gemm, ConvGeometry, MatMut, MatRef};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Train mode uses batch statistics and updates running statistics; eval
/// mode uses the running statistics only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running mean and (unbiased) variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeometry,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        x_hat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Relu {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Softmax {
        x: Var,
        temperature: f64,
    },
    ConcatChannels {
        a: Var,
        b: Var,
    },
    MeanPositions {
        x: Var,
    },
    FusedAttention {
        x: Var,
        wq: Var,
        wk: Var,
        wv: Var,
        geom: AttentionGeometry,
        saved: Vec<AttentionSaved>,
    },
    MeanRowLoss {
        x: Var,
        row_grads: Vec<f64>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Sum {
        x: Var,
    },
    WeightedSum {
        x: Var,
        weights: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(g, d)| *g += d),
        None => *slot = Some(delta),
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_from(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    /// Adds a tensor as a leaf. It takes part in differentiation only if
    /// `requires_grad` is set on it.
    pub fn leaf(&mut self, mut tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        tensor.zero_grad();
        self.push(tensor, Op::Leaf, requires_grad)
    }

    /// Adds a constant input.
    pub fn input(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Adds a copy of a trainable parameter.
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        let copy = Tensor::new(tensor.shape(), tensor.data().to_vec()).expect("valid tensor");
        self.leaf(copy.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, populated by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Clears all leaf gradients.
    pub fn zero_grad(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.value.zero_grad());
    }

    /// The fused attention map of one batch element, `positions × positions`
    /// row-major, if `v` is the output of [`Graph::fused_attention`].
    pub fn attention_map(&self, v: Var, sample: usize) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::FusedAttention { saved, .. } => saved.get(sample).map(|s| s.fused.as_slice()),
            _ => None,
        }
    }

    /// Stride-1 cross-correlation. `x: [N,C,H,W]`, `w: [O,C,kh,kw]`, `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: Padding) -> Result<Var> {
        let [n, c, h, wd] = self.value(x).dims4()?;
        let [o, wc, kh, kw] = self.value(w).dims4()?;
        if wc != c {
            return Err(Error::Dimension {
                axis: "input channels",
                expected: wc,
                actual: c,
            });
        }
        let bias_len = self.value(b).numel();
        if bias_len != o {
            return Err(Error::Dimension {
                axis: "bias length",
                expected: o,
                actual: bias_len,
            });
        }
        if h + pad.top + pad.bottom < kh {
            return Err(Error::Dimension {
                axis: "height",
                expected: kh,
                actual: h + pad.top + pad.bottom,
            });
        }
        if wd + pad.left + pad.right < kw {
            return Err(Error::Dimension {
                axis: "width",
                expected: kw,
                actual: wd + pad.left + pad.right,
            });
        }
        let geom = ConvGeometry {
            channels: c,
            height: h,
            width: wd,
            out_channels: o,
            kh,
            kw,
            pad,
            out_h: h + pad.top + pad.bottom - kh + 1,
            out_w: wd + pad.left + pad.right - kw + 1,
        };
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            n,
            &geom,
        );
        let value = Tensor::new(&[n, o, geom.out_h, geom.out_w], out)?;
        Ok(self.push_from(value, Op::Conv2d { x, w, b, geom }, &[x, w, b]))
    }

    /// Per-channel batch normalisation of `x: [N,C,H,W]`.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        mode: Mode,
    ) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        for (axis, len) in [
            ("gamma length", self.value(gamma).numel()),
            ("beta length", self.value(beta).numel()),
            ("running stats length", stats.mean.len()),
        ] {
            if len != c {
                return Err(Error::Dimension {
                    axis,
                    expected: c,
                    actual: len,
                });
            }
        }
        let plane = h * w;
        let count = n * plane;
        if mode == Mode::Train && count < 2 {
            return Err(Error::DegenerateVariance(count));
        }
        let xs = self.value(x).data();
        let (gs, bs) = (self.value(gamma).data(), self.value(beta).data());
        let mut inv_std = vec![0.0; c];
        let mut x_hat = vec![0.0; xs.len()];
        let mut out = vec![0.0; xs.len()];
        for ch in 0..c {
            let channel = || (0..n).flat_map(move |s| (s * c + ch) * plane..(s * c + ch + 1) * plane);
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = channel().map(|i| xs[i]).sum::<f64>() / count as f64;
                    let var = channel().map(|i| (xs[i] - mean).powi(2)).sum::<f64>() / count as f64;
                    stats.mean[ch] = (1.0 - BN_MOMENTUM) * stats.mean[ch] + BN_MOMENTUM * mean;
                    let unbiased = var * count as f64 / (count - 1) as f64;
                    stats.var[ch] = (1.0 - BN_MOMENTUM) * stats.var[ch] + BN_MOMENTUM * unbiased;
                    (mean, var)
                }
                Mode::Eval => (stats.mean[ch], stats.var[ch]),
            };
            let is = 1.0 / (var + BN_EPSILON).sqrt();
            inv_std[ch] = is;
            for i in channel() {
                let xh = (xs[i] - mean) * is;
                x_hat[i] = xh;
                out[i] = gs[ch] * xh + bs[ch];
            }
        }
        let value = Tensor::new(&[n, c, h, w], out)?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            x_hat,
            inv_std,
            train: mode == Mode::Train,
        };
        Ok(self.push_from(value, op, &[x, gamma, beta]))
    }

    /// 2×2 max pooling, stride 2; odd dimensions round up.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let (out, argmax) = kernels::maxpool2_forward(self.value(x).data(), n * c, h, w);
        let value = Tensor::new(&[n, c, h.div_ceil(2), w.div_ceil(2)], out)?;
        Ok(self.push_from(value, Op::MaxPool { x, argmax }, &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let out = src.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(src.shape(), out).expect("same shape");
        self.push_from(value, Op::Relu { x }, &[x])
    }

    /// `x: [N,D]`, `w: [K,D]`, `b: [K]` → `x·wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let [n, d] = self.value(x).dims2()?;
        let [k, wd] = self.value(w).dims2()?;
        if wd != d {
            return Err(Error::Dimension {
                axis: "inner",
                expected: wd,
                actual: d,
            });
        }
        if self.value(b).numel() != k {
            return Err(Error::Dimension {
                axis: "bias length",
                expected: k,
                actual: self.value(b).numel(),
            });
        }
        let bias = self.value(b).data();
        let mut out: Vec<f64> = (0..n).flat_map(|_| bias.iter().copied()).collect();
        gemm(
            n,
            d,
            k,
            1.0,
            MatRef::row_major(self.value(x).data(), d),
            MatRef::transposed(self.value(w).data(), d),
            1.0,
            MatMut::row_major(&mut out, k),
        );
        let value = Tensor::new(&[n, k], out)?;
        Ok(self.push_from(value, Op::Linear { x, w, b }, &[x, w, b]))
    }

    /// Row-wise softmax of `x / temperature` for `x: [N,C]`.
    pub fn softmax_t(&mut self, x: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::Parameter(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let [n, c] = self.value(x).dims2()?;
        let mut out = Vec::with_capacity(n * c);
        for i in 0..n {
            out.extend(softmax_row(self.value(x).row(i), temperature));
        }
        let value = Tensor::new(&[n, c], out)?;
        Ok(self.push_from(value, Op::Softmax { x, temperature }, &[x]))
    }

    /// Concatenates two `[N,·,H,W]` maps along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, ca, h, w] = self.value(a).dims4()?;
        let [nb, cb, hb, wb] = self.value(b).dims4()?;
        for (axis, expected, actual) in [("batch", n, nb), ("height", h, hb), ("width", w, wb)] {
            if expected != actual {
                return Err(Error::Dimension {
                    axis,
                    expected,
                    actual,
                });
            }
        }
        let (la, lb) = (ca * h * w, cb * h * w);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (la + lb));
        for s in 0..n {
            out.extend_from_slice(&da[s * la..(s + 1) * la]);
            out.extend_from_slice(&db[s * lb..(s + 1) * lb]);
        }
        let value = Tensor::new(&[n, ca + cb, h, w], out)?;
        Ok(self.push_from(value, Op::ConcatChannels { a, b }, &[a, b]))
    }

    /// Averages `[N,C,H,W]` over all spatial positions, giving `[N,C]`.
    pub fn mean_positions(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let p = h * w;
        let out = self
            .value(x)
            .data()
            .chunks(p)
            .map(|plane| plane.iter().sum::<f64>() / p as f64)
            .collect();
        let value = Tensor::new(&[n, c], out)?;
        Ok(self.push_from(value, Op::MeanPositions { x }, &[x]))
    }

    /// Fused multi-head self-attention over the spatial positions of
    /// `x: [N,C,H,W]`. Projections `wq`, `wk`, `wv` are `[C,C]` (out, in).
    pub fn fused_attention(
        &mut self,
        x: Var,
        wq: Var,
        wk: Var,
        wv: Var,
        heads: usize,
        fusion: HeadFusion,
    ) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if heads == 0 || c % heads != 0 {
            return Err(Error::Config(format!(
                "{heads} heads do not divide {c} channels"
            )));
        }
        if heads > u8::MAX as usize {
            return Err(Error::Config(format!("too many heads: {heads}")));
        }
        for (axis, v) in [("query projection", wq), ("key projection", wk), ("value projection", wv)] {
            let [r, cc] = self.value(v).dims2()?;
            if r != c || cc != c {
                return Err(Error::Dimension {
                    axis,
                    expected: c,
                    actual: if r != c { r } else { cc },
                });
            }
        }
        let geom = AttentionGeometry {
            channels: c,
            positions: h * w,
            heads,
            fusion,
        };
        let (out, saved) = attention::forward(
            self.value(x).data(),
            self.value(wq).data(),
            self.value(wk).data(),
            self.value(wv).data(),
            n,
            &geom,
        );
        let value = Tensor::new(&[n, c, h, w], out)?;
        let op = Op::FusedAttention {
            x,
            wq,
            wk,
            wv,
            geom,
            saved,
        };
        Ok(self.push_from(value, op, &[x, wq, wk, wv]))
    }

    /// Scalar mean of per-row losses over `x: [N,C]`.
    ///
    /// The caller supplies each row's loss value and its gradient with
    /// respect to that row; backward scales the gradients by `1/N`.
    pub fn mean_row_loss(&mut self, x: Var, values: &[f64], row_grads: Vec<f64>) -> Result<Var> {
        let [n, c] = self.value(x).dims2()?;
        if values.len() != n {
            return Err(Error::Dimension {
                axis: "row losses",
                expected: n,
                actual: values.len(),
            });
        }
        if row_grads.len() != n * c {
            return Err(Error::Dimension {
                axis: "row gradients",
                expected: n * c,
                actual: row_grads.len(),
            });
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        Ok(self.push_from(Tensor::scalar(mean), Op::MeanRowLoss { x, row_grads }, &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape(), out)?;
        Ok(self.push_from(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let src = self.value(x);
        let out = src.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(src.shape(), out).expect("same shape");
        self.push_from(value, Op::Scale { x, factor }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push_from(Tensor::scalar(total), Op::Sum { x }, &[x])
    }

    /// Scalar `Σ wᵢ·xᵢ` against constant weights of the same length.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        let src = self.value(x);
        if weights.len() != src.numel() {
            return Err(Error::Dimension {
                axis: "weights",
                expected: src.numel(),
                actual: weights.len(),
            });
        }
        let total = src.data().iter().zip(&weights).map(|(a, b)| a * b).sum();
        Ok(self.push_from(Tensor::scalar(total), Op::WeightedSum { x, weights }, &[x]))
    }

    /// Back-propagates from a scalar `loss`, adding into the gradients of
    /// every trainable leaf that precedes it. Gradients accumulate across
    /// calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                self.nodes[i].value.accumulate_grad(&dy);
                continue;
            }
            for (input, delta) in self.input_grads(i, &dy) {
                if self.nodes[input.0].requires_grad {
                    accumulate(&mut grads[input.0], delta);
                }
            }
        }
        for node in &mut self.nodes[..=loss.0] {
            if node.requires_grad && matches!(node.op, Op::Leaf) && node.value.grad().is_none() {
                let zeros = vec![0.0; node.value.numel()];
                node.value.accumulate_grad(&zeros);
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn input_grads(&self, i: usize, dy: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { x, w, b, geom } => {
                let n = self.value(*x).shape()[0];
                let g = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    dy,
                    n,
                    geom,
                    self.needs(*x),
                );
                let mut out = vec![(*w, g.dweight), (*b, g.dbias)];
                if let Some(dx) = g.dx {
                    out.push((*x, dx));
                }
                out
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                train,
            } => {
                let [n, c, h, w] = node.value.dims4().expect("rank 4");
                let plane = h * w;
                let count = (n * plane) as f64;
                let gs = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for s in 0..n {
                    for ch in 0..c {
                        let r = (s * c + ch) * plane..(s * c + ch + 1) * plane;
                        dbeta[ch] += dy[r.clone()].iter().sum::<f64>();
                        dgamma[ch] += dy[r.clone()].iter().zip(&x_hat[r]).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                let mut dx = vec![0.0; dy.len()];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * plane;
                        let k = gs[ch] * inv_std[ch];
                        for j in base..base + plane {
                            dx[j] = if *train {
                                k * (dy[j] - dbeta[ch] / count - x_hat[j] * dgamma[ch] / count)
                            } else {
                                k * dy[j]
                            };
                        }
                    }
                }
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (g, &idx) in dy.iter().zip(argmax) {
                    dx[idx] += g;
                }
                vec![(*x, dx)]
            }
            Op::Relu { x } => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                vec![(*x, dx)]
            }
            Op::Linear { x, w, b } => {
                let [n, d] = self.value(*x).dims2().expect("rank 2");
                let k = self.value(*b).numel();
                let mut dx = vec![0.0; n * d];
                gemm(
                    n,
                    k,
                    d,
                    1.0,
                    MatRef::row_major(dy, k),
                    MatRef::row_major(self.value(*w).data(), d),
                    0.0,
                    MatMut::row_major(&mut dx, d),
                );
                let mut dw = vec![0.0; k * d];
                gemm(
                    k,
                    n,
                    d,
                    1.0,
                    MatRef::transposed(dy, k),
                    MatRef::row_major(self.value(*x).data(), d),
                    0.0,
                    MatMut::row_major(&mut dw, d),
                );
                let mut db = vec![0.0; k];
                for row in dy.chunks(k) {
                    db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::Softmax { x, temperature } => {
                let c = node.value.shape()[1];
                let mut dx = Vec::with_capacity(dy.len());
                for (y, g) in node.value.data().chunks(c).zip(dy.chunks(c)) {
                    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                    dx.extend(y.iter().zip(g).map(|(yv, gv)| yv * (gv - dot) / temperature));
                }
                vec![(*x, dx)]
            }
            Op::ConcatChannels { a, b } => {
                let n = node.value.shape()[0];
                let la = self.value(*a).numel() / n;
                let lb = self.value(*b).numel() / n;
                let mut da = Vec::with_capacity(n * la);
                let mut db = Vec::with_capacity(n * lb);
                for chunk in dy.chunks(la + lb) {
                    da.extend_from_slice(&chunk[..la]);
                    db.extend_from_slice(&chunk[la..]);
                }
                vec![(*a, da), (*b, db)]
            }
            Op::MeanPositions { x } => {
                let [_, _, h, w] = self.value(*x).dims4().expect("rank 4");
                let p = h * w;
                let dx = dy
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g / p as f64, p))
                    .collect();
                vec![(*x, dx)]
            }
            Op::FusedAttention {
                x,
                wq,
                wk,
                wv,
                geom,
                saved,
            } => {
                let g = attention::backward(
                    self.value(*x).data(),
                    [
                        self.value(*wq).data(),
                        self.value(*wk).data(),
                        self.value(*wv).data(),
                    ],
                    dy,
                    saved,
                    geom,
                );
                vec![(*x, g.dx), (*wq, g.dwq), (*wk, g.dwk), (*wv, g.dwv)]
            }
            Op::MeanRowLoss { x, row_grads } => {
                let n = self.value(*x).shape()[0] as f64;
                let dx = row_grads.iter().map(|g| dy[0] * g / n).collect();
                vec![(*x, dx)]
            }
            Op::Add { a, b } => vec![(*a, dy.to_vec()), (*b, dy.to_vec())],
            Op::Scale { x, factor } => vec![(*x, dy.iter().map(|g| g * factor).collect())],
            Op::Sum { x } => vec![(*x, vec![dy[0]; self.value(*x).numel()])],
            Op::WeightedSum { x, weights } => vec![(*x, weights.iter().map(|w| w * dy[0]).collect())],
        }
    }
}

/// Numerically stable softmax of `row / temperature`.
pub fn softmax_row(row: &[f64], temperature: f64) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Numerically stable log-softmax of `row / temperature`.
pub fn log_softmax_row(row: &[f64], temperature: f64) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = row.iter().map(|&z| (z - max) / temperature).collect();
    let lse = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|s| s - lse).collect()
}
