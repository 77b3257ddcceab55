//! Reverse-mode differentiation over a fixed op set.
//!
//! A [`Graph`] is an append-only tape: every op evaluates its forward value
//! immediately and pushes a node, so node indices are already a topological
//! order and [`Graph::backward`] is a single reverse sweep. Nodes that do not
//! depend on any leaf are marked constant and skipped during the sweep.
//!
//! Non-differentiable ops with a hand-chosen backward rule are expressed as
//! [`Surrogate`] nodes; the rule is attached to the node, not to a global
//! mode, so one graph can mix exact and surrogate derivatives.

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rules for ops whose forward pass is exact but whose true
/// derivative is zero almost everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surrogate {
    /// Forward `clamp(x, lo, hi)`; backward uses the derivative of
    /// `sigmoid(2 (u - 0.5))` with `u = (x - lo) / (hi - lo)`, taken in
    /// normalized units so the factor is dimensionless.
    SigmoidClamp { lo: f64, hi: f64 },
    /// Forward round-half-away-from-zero; backward is
    /// `(1 - alpha) + 3 alpha (x - round(x))^2`.
    StraightThroughRound { alpha: f64 },
}

impl Surrogate {
    pub fn forward(&self, x: f64) -> f64 {
        match *self {
            Surrogate::SigmoidClamp { lo, hi } => x.clamp(lo, hi),
            Surrogate::StraightThroughRound { .. } => x.round(),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Surrogate::SigmoidClamp { lo, hi } => {
                let u = (x - lo) / (hi - lo);
                let s = sigmoid(2.0 * (u - 0.5));
                2.0 * s * (1.0 - s)
            }
            Surrogate::StraightThroughRound { alpha } => {
                let r = x - x.round();
                (1.0 - alpha) + 3.0 * alpha * r * r
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Conv2d { x: Var, w: Var },
    AvgPool { x: Var, fy: usize, fx: usize },
    Upsample { x: Var, fy: usize, fx: usize },
    LeakyRelu(Var, f64),
    ChannelNormalize { x: Var, norms: Vec<f64> },
    Mean(Var),
    Sum(Var),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    Recip(Var),
    Sigmoid(Var),
    ClampExact { x: Var, lo: f64, hi: f64 },
    Custom(Var, Surrogate),
    AddRow(Var, Var),
    MulPrefix(Var, Var),
    SumTrailing(Var),
    RepeatRows(Var),
    SelectRow(Var, usize),
    Reshape(Var),
    Channels { x: Var, start: usize },
    Concat(Vec<Var>),
    BlockDct { x: Var, inverse: bool },
    PadEdge(Var),
    Crop(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    grad: bool,
}

/// Per-node gradients from one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when no path reached it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_str(t: &Tensor) -> String {
    format!("{:?}", t.shape())
}

fn chw(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::shape(op, format!("expected [C, H, W], got {}", shape_str(t)))),
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    fn push(&mut self, value: Tensor, op: Op, grad: bool) -> Var {
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    fn push_derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let grad = inputs.iter().any(|&v| self.requires_grad(v));
        self.push(value, op, grad)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, node: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(va.shape(), data)?;
        Ok(self.push_derived(t, node, &[a, b]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, node: Op) -> Var {
        let t = self.value(a).map(f);
        self.push_derived(t, node, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = match (self.shape(a), self.shape(b)) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            (sa, sb) => return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}"))),
        };
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::new(&[m, n], out)?;
        Ok(self.push_derived(t, Op::MatMul(a, b), &[a, b]))
    }

    /// Zero-padded stride-1 convolution of `x: [Cin, H, W]` with
    /// `w: [Cout, Cin, K, K]`, `K` in {1, 3}.
    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (cin, h, wd) = chw("conv2d", self.value(x))?;
        let (cout, k) = match *self.shape(w) {
            [co, ci, k1, k2] if ci == cin && k1 == k2 && (k1 == 1 || k1 == 3) => (co, k1),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("input {:?} with filters {:?}", self.shape(x), self.shape(w)),
                ))
            }
        };
        let out = kernels::conv2d(self.value(x).data(), self.value(w).data(), cin, cout, k, h, wd);
        let t = Tensor::new(&[cout, h, wd], out)?;
        Ok(self.push_derived(t, Op::Conv2d { x, w }, &[x, w]))
    }

    /// Mean over non-overlapping `fy` x `fx` windows.
    pub fn avg_pool(&mut self, x: Var, fy: usize, fx: usize) -> Result<Var> {
        let (c, h, w) = chw("avg_pool", self.value(x))?;
        if fy == 0 || fx == 0 || h % fy != 0 || w % fx != 0 {
            return Err(Error::shape(
                "avg_pool",
                format!("window {fy}x{fx} does not tile {h}x{w}"),
            ));
        }
        let out = avg_pool_rect(self.value(x).data(), c, h, w, fy, fx);
        let t = Tensor::new(&[c, h / fy, w / fx], out)?;
        Ok(self.push_derived(t, Op::AvgPool { x, fy, fx }, &[x]))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        self.avg_pool(x, 2, 2)
    }

    pub fn upsample_nearest(&mut self, x: Var, fy: usize, fx: usize) -> Result<Var> {
        let (c, h, w) = chw("upsample_nearest", self.value(x))?;
        if fy == 0 || fx == 0 {
            return Err(Error::shape("upsample_nearest", "zero factor"));
        }
        let out = upsample_rect(self.value(x).data(), c, h, w, fy, fx);
        let t = Tensor::new(&[c, h * fy, w * fx], out)?;
        Ok(self.push_derived(t, Op::Upsample { x, fy, fx }, &[x]))
    }

    pub fn upsample2_nearest(&mut self, x: Var) -> Result<Var> {
        self.upsample_nearest(x, 2, 2)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, |v| if v >= 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    /// Unit-normalizes the channel vector at every spatial site of `[C, H, W]`.
    pub fn channel_l2_normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (c, h, w) = chw("channel_l2_normalize", self.value(x))?;
        let (out, norms) = kernels::channel_l2_normalize(self.value(x).data(), c, h * w, eps);
        let t = Tensor::new(&[c, h, w], out)?;
        Ok(self.push_derived(t, Op::ChannelNormalize { x, norms }, &[x]))
    }

    pub fn reduce_mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let t = Tensor::scalar(v.data().iter().sum::<f64>() / v.len() as f64);
        self.push_derived(t, Op::Mean(x), &[x])
    }

    pub fn reduce_sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).data().iter().sum());
        self.push_derived(t, Op::Sum(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn recip(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 / v, Op::Recip(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// Clamp with its true almost-everywhere derivative (1 inside, 0 outside).
    pub fn clamp_exact(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::ClampExact { x, lo, hi })
    }

    pub fn custom_surrogate(&mut self, x: Var, rule: Surrogate) -> Var {
        self.unary(x, |v| rule.forward(v), Op::Custom(x, rule))
    }

    /// `[m, n] + [n]`, bias broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = match (self.shape(x), self.shape(bias)) {
            (&[_, n], &[nb]) if n == nb => n,
            (a, b) => return Err(Error::shape("add_row", format!("{a:?} + {b:?}"))),
        };
        let b = self.value(bias).data().to_vec();
        let xv = self.value(x);
        let data = xv.data().iter().enumerate().map(|(i, v)| v + b[i % n]).collect();
        let t = Tensor::new(xv.shape(), data)?;
        Ok(self.push_derived(t, Op::AddRow(x, bias), &[x, bias]))
    }

    /// Multiplies `a` by `b`, broadcasting `b` over the trailing axes of `a`.
    /// `b`'s shape must be a prefix of `a`'s.
    pub fn mul_prefix(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[..sb.len()] != *sb {
            return Err(Error::shape("mul_prefix", format!("{sa:?} * {sb:?}")));
        }
        let inner = self.value(a).len() / self.value(b).len().max(1);
        let bv = self.value(b).data().to_vec();
        let av = self.value(a);
        let data = av.data().iter().enumerate().map(|(i, v)| v * bv[i / inner]).collect();
        let t = Tensor::new(av.shape(), data)?;
        Ok(self.push_derived(t, Op::MulPrefix(a, b), &[a, b]))
    }

    /// Sums over every axis after the first `keep` axes.
    pub fn sum_trailing(&mut self, x: Var, keep: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if keep > s.len() {
            return Err(Error::shape("sum_trailing", format!("keep {keep} of {s:?}")));
        }
        let outer: usize = s[..keep].iter().product();
        let inner = self.value(x).len() / outer.max(1);
        let data = self
            .value(x)
            .data()
            .chunks(inner.max(1))
            .map(|c| c.iter().sum())
            .collect();
        let t = Tensor::new(&s[..keep], data)?;
        Ok(self.push_derived(t, Op::SumTrailing(x), &[x]))
    }

    /// `[d] -> [n, d]` by exact replication.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let d = match *self.shape(x) {
            [d] => d,
            _ => return Err(Error::shape("repeat_rows", format!("{:?}", self.shape(x)))),
        };
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(src);
        }
        let t = Tensor::new(&[n, d], data)?;
        Ok(self.push_derived(t, Op::RepeatRows(x), &[x]))
    }

    /// Row `i` of an `[n, d]` matrix.
    pub fn select_row(&mut self, x: Var, i: usize) -> Result<Var> {
        let (n, d) = match *self.shape(x) {
            [n, d] => (n, d),
            _ => return Err(Error::shape("select_row", format!("{:?}", self.shape(x)))),
        };
        if i >= n {
            return Err(Error::shape("select_row", format!("row {i} of {n}")));
        }
        let t = Tensor::from_vec(self.value(x).data()[i * d..(i + 1) * d].to_vec());
        Ok(self.push_derived(t, Op::SelectRow(x, i), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push_derived(t, Op::Reshape(x), &[x]))
    }

    /// Channels `start..start + count` of a `[C, H, W]` map.
    pub fn channels(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let (c, h, w) = chw("channels", self.value(x))?;
        if start + count > c {
            return Err(Error::shape("channels", format!("{start}+{count} of {c}")));
        }
        let plane = h * w;
        let data = self.value(x).data()[start * plane..(start + count) * plane].to_vec();
        let t = Tensor::new(&[count, h, w], data)?;
        Ok(self.push_derived(t, Op::Channels { x, start }, &[x]))
    }

    /// Stacks `[Ci, H, W]` maps along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
        let (_, h, w) = chw("concat_channels", self.value(*first))?;
        let mut c = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (ci, hi, wi) = chw("concat_channels", self.value(p))?;
            if (hi, wi) != (h, w) {
                return Err(Error::shape("concat_channels", format!("{hi}x{wi} vs {h}x{w}")));
            }
            c += ci;
            data.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::new(&[c, h, w], data)?;
        Ok(self.push_derived(t, Op::Concat(parts.to_vec()), parts))
    }

    /// Orthonormal 8x8 type-II DCT (or its inverse) on every block of every
    /// channel. H and W must be multiples of 8.
    pub fn block_dct8(&mut self, x: Var, inverse: bool) -> Result<Var> {
        let (c, h, w) = chw("block_dct8", self.value(x))?;
        if h % 8 != 0 || w % 8 != 0 {
            return Err(Error::shape("block_dct8", format!("{h}x{w} not a multiple of 8")));
        }
        let out = crate::degrade::jpeg::block_dct(self.value(x).data(), c, h, w, inverse);
        let t = Tensor::new(&[c, h, w], out)?;
        Ok(self.push_derived(t, Op::BlockDct { x, inverse }, &[x]))
    }

    /// Pads bottom and right edges by replicating the last row / column.
    pub fn pad_edge(&mut self, x: Var, new_h: usize, new_w: usize) -> Result<Var> {
        let (c, h, w) = chw("pad_edge", self.value(x))?;
        if new_h < h || new_w < w || h == 0 || w == 0 {
            return Err(Error::shape("pad_edge", format!("{h}x{w} -> {new_h}x{new_w}")));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(c * new_h * new_w);
        for ch in 0..c {
            for y in 0..new_h {
                let sy = y.min(h - 1);
                for xx in 0..new_w {
                    data.push(src[(ch * h + sy) * w + xx.min(w - 1)]);
                }
            }
        }
        let t = Tensor::new(&[c, new_h, new_w], data)?;
        Ok(self.push_derived(t, Op::PadEdge(x), &[x]))
    }

    /// Keeps the top-left `h` x `w` window.
    pub fn crop(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (c, sh, sw) = chw("crop", self.value(x))?;
        if h > sh || w > sw {
            return Err(Error::shape("crop", format!("{sh}x{sw} -> {h}x{w}")));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                data.extend_from_slice(&src[(ch * sh + y) * sw..(ch * sh + y) * sw + w]);
            }
        }
        let t = Tensor::new(&[c, h, w], data)?;
        Ok(self.push_derived(t, Op::Crop(x), &[x]))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got {}", shape_str(self.value(root))),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.requires_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn like(&self, v: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.shape(v), data).expect("gradient shape follows forward shape")
    }

    fn elementwise(&self, v: Var, g: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self
            .value(v)
            .data()
            .iter()
            .zip(g.data())
            .map(|(&x, &gy)| f(x, gy))
            .collect();
        self.like(v, data)
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let ga = self.elementwise(*b, g, |y, gy| y * gy);
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = self.elementwise(*a, g, |x, gy| x * gy);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Div(a, b) => {
                if self.requires_grad(*a) {
                    let ga = self.elementwise(*b, g, |y, gy| gy / y);
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let data = out
                        .data()
                        .iter()
                        .zip(self.value(*b).data())
                        .zip(g.data())
                        .map(|((q, y), gy)| -gy * q / y)
                        .collect();
                    let gb = self.like(*b, data);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|v| v * s)),
            Op::AddScalar(a) | Op::Reshape(a) => {
                let gt = Tensor::new(self.shape(*a), g.data().to_vec())?;
                self.accumulate(grads, *a, gt);
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.requires_grad(*a) {
                    let bt = kernels::transpose(self.value(*b).data(), k, n);
                    let ga = kernels::matmul(g.data(), &bt, m, n, k);
                    self.accumulate(grads, *a, self.like(*a, ga));
                }
                if self.requires_grad(*b) {
                    let at = kernels::transpose(self.value(*a).data(), m, k);
                    let gb = kernels::matmul(&at, g.data(), k, m, n);
                    self.accumulate(grads, *b, self.like(*b, gb));
                }
            }
            Op::Conv2d { x, w } => {
                let (cin, h, wd) = chw("conv2d", self.value(*x))?;
                let (cout, k) = (self.shape(*w)[0], self.shape(*w)[2]);
                if self.requires_grad(*x) {
                    let gx = kernels::conv2d_grad_input(g.data(), self.value(*w).data(), cin, cout, k, h, wd);
                    self.accumulate(grads, *x, self.like(*x, gx));
                }
                if self.requires_grad(*w) {
                    let gw = kernels::conv2d_grad_weight(g.data(), self.value(*x).data(), cin, cout, k, h, wd);
                    self.accumulate(grads, *w, self.like(*w, gw));
                }
            }
            Op::AvgPool { x, fy, fx } => {
                let (c, h, w) = chw("avg_pool", self.value(*x))?;
                let gx = avg_pool_rect_grad(g.data(), c, h, w, *fy, *fx);
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::Upsample { x, fy, fx } => {
                let (c, h, w) = chw("upsample_nearest", self.value(*x))?;
                let gx = upsample_rect_grad(g.data(), c, h, w, *fy, *fx);
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::LeakyRelu(x, slope) => {
                let gx = self.elementwise(*x, g, |v, gy| if v >= 0.0 { gy } else { slope * gy });
                self.accumulate(grads, *x, gx);
            }
            Op::ChannelNormalize { x, norms } => {
                let (c, h, w) = chw("channel_l2_normalize", self.value(*x))?;
                let gx = kernels::channel_l2_normalize_grad(g.data(), out.data(), norms, c, h * w);
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                let gx = Tensor::full(self.shape(*x), g.item() / n);
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let gx = Tensor::full(self.shape(*x), g.item());
                self.accumulate(grads, *x, gx);
            }
            Op::Abs(x) => {
                let gx = self.elementwise(*x, g, |v, gy| {
                    if v > 0.0 {
                        gy
                    } else if v < 0.0 {
                        -gy
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *x, gx);
            }
            Op::Square(x) => {
                let gx = self.elementwise(*x, g, |v, gy| 2.0 * v * gy);
                self.accumulate(grads, *x, gx);
            }
            Op::Sqrt(x) => {
                let data = out.data().iter().zip(g.data()).map(|(r, gy)| 0.5 * gy / r).collect();
                self.accumulate(grads, *x, self.like(*x, data));
            }
            Op::Recip(x) => {
                let data = out.data().iter().zip(g.data()).map(|(r, gy)| -gy * r * r).collect();
                self.accumulate(grads, *x, self.like(*x, data));
            }
            Op::Sigmoid(x) => {
                let data = out
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(s, gy)| gy * s * (1.0 - s))
                    .collect();
                self.accumulate(grads, *x, self.like(*x, data));
            }
            Op::ClampExact { x, lo, hi } => {
                let gx = self.elementwise(*x, g, |v, gy| if v >= *lo && v <= *hi { gy } else { 0.0 });
                self.accumulate(grads, *x, gx);
            }
            Op::Custom(x, rule) => {
                let gx = self.elementwise(*x, g, |v, gy| gy * rule.derivative(v));
                self.accumulate(grads, *x, gx);
            }
            Op::AddRow(x, b) => {
                let n = self.shape(*b)[0];
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; n];
                    for (i, v) in g.data().iter().enumerate() {
                        gb[i % n] += v;
                    }
                    self.accumulate(grads, *b, self.like(*b, gb));
                }
                self.accumulate(grads, *x, g.clone());
            }
            Op::MulPrefix(a, b) => {
                let inner = self.value(*a).len() / self.value(*b).len().max(1);
                let bv = self.value(*b).data();
                if self.requires_grad(*a) {
                    let data = g.data().iter().enumerate().map(|(i, gy)| gy * bv[i / inner]).collect();
                    self.accumulate(grads, *a, self.like(*a, data));
                }
                if self.requires_grad(*b) {
                    let data = g
                        .data()
                        .chunks(inner)
                        .zip(self.value(*a).data().chunks(inner))
                        .map(|(gc, ac)| kernels::dot(gc, ac))
                        .collect();
                    self.accumulate(grads, *b, self.like(*b, data));
                }
            }
            Op::SumTrailing(x) => {
                let inner = self.value(*x).len() / g.len().max(1);
                let data = (0..self.value(*x).len()).map(|i| g.data()[i / inner]).collect();
                self.accumulate(grads, *x, self.like(*x, data));
            }
            Op::RepeatRows(x) => {
                let d = self.shape(*x)[0];
                let mut gx = vec![0.0; d];
                for row in g.data().chunks(d) {
                    for (a, b) in gx.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::SelectRow(x, i) => {
                let d = self.shape(*x)[1];
                let mut gx = vec![0.0; self.value(*x).len()];
                gx[i * d..(i + 1) * d].copy_from_slice(g.data());
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::Channels { x, start } => {
                let (_, h, w) = chw("channels", self.value(*x))?;
                let plane = h * w;
                let mut gx = vec![0.0; self.value(*x).len()];
                gx[start * plane..start * plane + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let gp = self.like(p, g.data()[offset..offset + n].to_vec());
                    self.accumulate(grads, p, gp);
                    offset += n;
                }
            }
            Op::BlockDct { x, inverse } => {
                let (c, h, w) = chw("block_dct8", self.value(*x))?;
                // orthonormal: the adjoint is the opposite transform
                let gx = crate::degrade::jpeg::block_dct(g.data(), c, h, w, !inverse);
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::PadEdge(x) => {
                let (c, h, w) = chw("pad_edge", self.value(*x))?;
                let (nh, nw) = (out.shape()[1], out.shape()[2]);
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..nh {
                        for xx in 0..nw {
                            gx[(ch * h + y.min(h - 1)) * w + xx.min(w - 1)] += g.data()[(ch * nh + y) * nw + xx];
                        }
                    }
                }
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::Crop(x) => {
                let (c, sh, sw) = chw("crop", self.value(*x))?;
                let (h, w) = (out.shape()[1], out.shape()[2]);
                let mut gx = vec![0.0; c * sh * sw];
                for ch in 0..c {
                    for y in 0..h {
                        let src = &g.data()[(ch * h + y) * w..(ch * h + y + 1) * w];
                        gx[(ch * sh + y) * sw..(ch * sh + y) * sw + w].copy_from_slice(src);
                    }
                }
                self.accumulate(grads, *x, self.like(*x, gx));
            }
        }
        Ok(())
    }
}

fn avg_pool_rect(x: &[f64], c: usize, h: usize, w: usize, fy: usize, fx: usize) -> Vec<f64> {
    if fy == fx {
        return kernels::avg_pool(x, c, h, w, fy);
    }
    let (oh, ow) = (h / fy, w / fx);
    let norm = 1.0 / (fy * fx) as f64;
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..fy {
                    for dx in 0..fx {
                        acc += x[(ch * h + oy * fy + dy) * w + ox * fx + dx];
                    }
                }
                out[(ch * oh + oy) * ow + ox] = acc * norm;
            }
        }
    }
    out
}

fn avg_pool_rect_grad(g: &[f64], c: usize, h: usize, w: usize, fy: usize, fx: usize) -> Vec<f64> {
    if fy == fx {
        return kernels::avg_pool_grad(g, c, h, w, fy);
    }
    let (oh, ow) = (h / fy, w / fx);
    let norm = 1.0 / (fy * fx) as f64;
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                gx[(ch * h + y) * w + x] = g[(ch * oh + y / fy) * ow + x / fx] * norm;
            }
        }
    }
    gx
}

fn upsample_rect(x: &[f64], c: usize, h: usize, w: usize, fy: usize, fx: usize) -> Vec<f64> {
    if fy == fx {
        return kernels::upsample_nearest(x, c, h, w, fy);
    }
    let (oh, ow) = (h * fy, w * fx);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                out[(ch * oh + y) * ow + xo] = x[(ch * h + y / fy) * w + xo / fx];
            }
        }
    }
    out
}

fn upsample_rect_grad(g: &[f64], c: usize, h: usize, w: usize, fy: usize, fx: usize) -> Vec<f64> {
    if fy == fx {
        return kernels::upsample_nearest_grad(g, c, h, w, fy);
    }
    let (oh, ow) = (h * fy, w * fx);
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                gx[(ch * h + y / fy) * w + xo / fx] += g[(ch * oh + y) * ow + xo];
            }
        }
    }
    gx
}
