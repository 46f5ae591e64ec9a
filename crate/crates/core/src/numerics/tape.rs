//! Reverse-mode gradient tape over a fixed operation set.
//!
//! Every operation appends one node holding its output value. `backward`
//! walks the nodes once, last to first, pushing each node's accumulated
//! gradient into its inputs.

use super::scalar::matmul;
use super::tensor::{check_axes, check_same};
use super::{Real, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Silu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    Down2Avg,
    Up2Nearest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Act {
        input: Var,
        kind: Activation,
    },
    Resample {
        input: Var,
        mode: Resample,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Affine {
        input: Var,
        gamma: Var,
        beta: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddScalar {
        input: Var,
    },
    Sqrt {
        input: Var,
    },
    Mse {
        pred: Var,
        target: Var,
    },
    WeightedSum {
        input: Var,
        weights: Tensor<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Linear { .. } => "linear",
            Op::Act { .. } => "activation",
            Op::Resample { .. } => "resample",
            Op::Concat { .. } => "concat_channels",
            Op::Affine { .. } => "apply_affine",
            Op::Add { .. } => "add",
            Op::AddScalar { .. } => "add_scalar",
            Op::Sqrt { .. } => "sqrt",
            Op::Mse { .. } => "mse_loss",
            Op::WeightedSum { .. } => "weighted_sum",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.in_c * self.k * self.k
    }
    fn cols(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
    visited: Vec<usize>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Indices of the non-leaf nodes whose backward rule ran, in run order.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that only evaluates: nothing needs a gradient and no
    /// backward buffers are kept.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Op names in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let needs_grad = needs_grad && self.grad_enabled;
        let op = if needs_grad || matches!(op, Op::Leaf) {
            op
        } else {
            Op::Leaf
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// 2-D convolution. `weight` is `[out_c, in_c, k, k]` with `k` odd, `bias`
    /// has `out_c` entries.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        const OP: &str = "conv2d";
        let xs = self.shape(input);
        let ws = self.shape(weight);
        let [n, in_c, in_h, in_w] = xs.0;
        let [out_c, w_in, k, k2] = ws.0;
        if w_in != in_c {
            return Err(Error::dim(OP, "channel (input vs weight in_c)", in_c, w_in));
        }
        if k != k2 {
            return Err(Error::dim(OP, "kernel height vs width", k, k2));
        }
        if k % 2 == 0 {
            return Err(Error::InvalidShape {
                op: OP,
                detail: format!("kernel size {k} must be odd"),
            });
        }
        if !(stride == 1 || stride == 2) {
            return Err(Error::InvalidArgument(format!("conv2d stride {stride} not in {{1, 2}}")));
        }
        if self.shape(bias).numel() != out_c {
            return Err(Error::dim(OP, "bias length vs out_c", self.shape(bias).numel(), out_c));
        }
        let pad = match padding {
            Padding::Same => k / 2,
            Padding::Valid => 0,
        };
        if in_h + 2 * pad < k || in_w + 2 * pad < k {
            return Err(Error::InvalidShape {
                op: OP,
                detail: format!("input {in_h}x{in_w} smaller than kernel {k}"),
            });
        }
        let geom = ConvGeom {
            batch: n,
            in_c,
            in_h,
            in_w,
            out_c,
            out_h: (in_h + 2 * pad - k) / stride + 1,
            out_w: (in_w + 2 * pad - k) / stride + 1,
            k,
            stride,
            pad,
        };
        let cols = im2col(self.value(input).data(), &geom);
        let mut out_mat = vec![T::zero(); out_c * geom.cols()];
        matmul(
            self.value(weight).data(),
            false,
            &cols,
            false,
            &mut out_mat,
            out_c,
            geom.rows(),
            geom.cols(),
            false,
        );
        let plane = geom.out_h * geom.out_w;
        let bias_v = self.value(bias).data();
        let mut out = vec![T::zero(); n * out_c * plane];
        for b in 0..n {
            for co in 0..out_c {
                let src = &out_mat[co * geom.cols() + b * plane..][..plane];
                let dst = &mut out[(b * out_c + co) * plane..][..plane];
                let bv = bias_v[co];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + bv;
                }
            }
        }
        let value = Tensor::new(Shape::new(n, out_c, geom.out_h, geom.out_w), out)?;
        let needs = self.needs(&[input, weight, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols: if needs && self.grad_enabled { cols } else { Vec::new() },
            },
            needs,
        ))
    }

    /// Affine map `input · weightᵀ + bias` with `input` flattened to
    /// `(batch, C·H·W)` and `weight` shaped `(out, in)`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "linear";
        let xs = self.shape(input);
        let ws = self.shape(weight);
        let n = xs.batch();
        let fan_in = xs.numel() / n.max(1);
        let (out_f, w_in) = (ws.0[0], ws.0[1] * ws.0[2] * ws.0[3]);
        if fan_in != w_in {
            return Err(Error::dim(OP, "inner (input features vs weight in)", fan_in, w_in));
        }
        if self.shape(bias).numel() != out_f {
            return Err(Error::dim(OP, "bias length vs out", self.shape(bias).numel(), out_f));
        }
        let mut out = vec![T::zero(); n * out_f];
        let bias_v = self.value(bias).data();
        for row in out.chunks_mut(out_f.max(1)) {
            row.copy_from_slice(bias_v);
        }
        matmul(
            self.value(input).data(),
            false,
            self.value(weight).data(),
            true,
            &mut out,
            n,
            fan_in,
            out_f,
            true,
        );
        let value = Tensor::new(Shape::matrix(n, out_f), out)?;
        let needs = self.needs(&[input, weight, bias]);
        Ok(self.push(value, Op::Linear { input, weight, bias }, needs))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let value = self.value(input).map(|x| match kind {
            Activation::Relu => x.max(T::zero()),
            Activation::Silu => x * sigmoid(x),
        });
        let needs = self.needs(&[input]);
        self.push(value, Op::Act { input, kind }, needs)
    }

    pub fn resample(&mut self, input: Var, mode: Resample) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.shape().0;
        let value = match mode {
            Resample::Down2Avg => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::InvalidShape {
                        op: "resample",
                        detail: format!("down2-avg needs even extents, got {h}x{w}"),
                    });
                }
                let (oh, ow) = (h / 2, w / 2);
                let quarter = T::from_f64(0.25);
                let src = x.data();
                let mut out = Vec::with_capacity(n * c * oh * ow);
                for plane in src.chunks(h * w) {
                    for y in 0..oh {
                        let r0 = &plane[2 * y * w..][..w];
                        let r1 = &plane[(2 * y + 1) * w..][..w];
                        for xo in 0..ow {
                            let s = r0[2 * xo] + r0[2 * xo + 1] + r1[2 * xo] + r1[2 * xo + 1];
                            out.push(s * quarter);
                        }
                    }
                }
                Tensor::new(Shape::new(n, c, oh, ow), out)?
            }
            Resample::Up2Nearest => {
                let (oh, ow) = (h * 2, w * 2);
                let mut out = Vec::with_capacity(n * c * oh * ow);
                for plane in x.data().chunks(h * w) {
                    for y in 0..oh {
                        let row = &plane[(y / 2) * w..][..w];
                        for xo in 0..ow {
                            out.push(row[xo / 2]);
                        }
                    }
                }
                Tensor::new(Shape::new(n, c, oh, ow), out)?
            }
        };
        let needs = self.needs(&[input]);
        Ok(self.push(value, Op::Resample { input, mode }, needs))
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| Error::InvalidShape {
            op: "concat_channels",
            detail: "no inputs".into(),
        })?;
        let base = self.shape(first);
        let mut total_c = 0;
        for &v in inputs {
            check_axes("concat_channels", base, self.shape(v), &[0, 2, 3])?;
            total_c += self.shape(v).channels();
        }
        let [n, _, h, w] = base.0;
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total_c * plane);
        for b in 0..n {
            for &v in inputs {
                let t = self.value(v);
                let per = t.shape().channels() * plane;
                out.extend_from_slice(&t.data()[b * per..(b + 1) * per]);
            }
        }
        let value = Tensor::new(Shape::new(n, total_c, h, w), out)?;
        let needs = self.needs(inputs);
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            needs,
        ))
    }

    /// Channel-wise `gamma * input + beta`. `gamma` and `beta` hold one row
    /// of `C` values per batch item, or a single row shared by all items.
    pub fn apply_affine(&mut self, input: Var, gamma: Var, beta: Var) -> Result<Var> {
        const OP: &str = "apply_affine";
        let xs = self.shape(input);
        let gs = self.shape(gamma);
        let bs = self.shape(beta);
        check_same(OP, gs, bs)?;
        let [n, c, h, w] = xs.0;
        let per_item = gs.numel() / gs.batch().max(1);
        if per_item != c {
            return Err(Error::dim(OP, "channel (gamma length vs input)", per_item, c));
        }
        if gs.batch() != 1 && gs.batch() != n {
            return Err(Error::dim(OP, "batch (gamma vs input)", gs.batch(), n));
        }
        let shared = gs.batch() == 1;
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let x = self.value(input).data();
        let plane = h * w;
        let mut out = Vec::with_capacity(x.len());
        for b in 0..n {
            let row = if shared { 0 } else { b * c };
            for ch in 0..c {
                let (gv, bv) = (g[row + ch], bt[row + ch]);
                let src = &x[(b * c + ch) * plane..][..plane];
                out.extend(src.iter().map(|&v| gv * v + bv));
            }
        }
        let value = Tensor::new(xs, out)?;
        let needs = self.needs(&[input, gamma, beta]);
        Ok(self.push(value, Op::Affine { input, gamma, beta }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    pub fn add_scalar(&mut self, input: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let value = self.value(input).map(|v| v + c);
        let needs = self.needs(&[input]);
        self.push(value, Op::AddScalar { input }, needs)
    }

    /// Elementwise square root; inputs must be non-negative.
    pub fn sqrt(&mut self, input: Var) -> Result<Var> {
        if self.value(input).data().iter().any(|v| *v < T::zero()) {
            return Err(Error::InvalidArgument("sqrt of a negative value".into()));
        }
        let value = self.value(input).map(|v| v.sqrt());
        let needs = self.needs(&[input]);
        Ok(self.push(value, Op::Sqrt { input }, needs))
    }

    /// Mean of squared differences, as a one-element tensor.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let p = self.value(pred);
        let t = self.value(target);
        check_same("mse_loss", p.shape(), t.shape())?;
        let n = p.numel();
        let total: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
            .sum();
        let mean = if n == 0 { 0.0 } else { total / n as f64 };
        let value = Tensor::full(Shape::new(1, 1, 1, 1), T::from_f64(mean));
        let needs = self.needs(&[pred, target]);
        Ok(self.push(value, Op::Mse { pred, target }, needs))
    }

    /// `Σ weights ⊙ input` as a one-element tensor.
    pub fn weighted_sum(&mut self, input: Var, weights: Tensor<T>) -> Result<Var> {
        check_same("weighted_sum", self.shape(input), weights.shape())?;
        let total: f64 = self
            .value(input)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &w)| a.as_f64() * w.as_f64())
            .sum();
        let value = Tensor::full(Shape::new(1, 1, 1, 1), T::from_f64(total));
        let needs = self.needs(&[input]);
        Ok(self.push(value, Op::WeightedSum { input, weights }, needs))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(Error::InvalidShape {
                op: "backward",
                detail: format!("loss must hold one element, got {ls:?}"),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut visited = Vec::new();
        grads[loss.0] = Some(Tensor::full(ls, T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            visited.push(idx);
            self.backward_node(node, &upstream, &mut grads)?;
            grads[idx] = Some(upstream);
        }
        Ok(Grads { grads, visited })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e = *e + *d;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(&self, node: &Node<T>, up: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            } => {
                let g = geom;
                let plane = g.out_h * g.out_w;
                let ncols = g.cols();
                // Upstream gradient as an (out_c, batch·plane) matrix.
                let mut dmat = vec![T::zero(); g.out_c * ncols];
                for b in 0..g.batch {
                    for co in 0..g.out_c {
                        let src = &up.data()[(b * g.out_c + co) * plane..][..plane];
                        dmat[co * ncols + b * plane..][..plane].copy_from_slice(src);
                    }
                }
                if self.wants(*bias) {
                    let db: Vec<T> = dmat
                        .chunks(ncols.max(1))
                        .take(g.out_c)
                        .map(|row| T::from_f64(row.iter().map(|v| v.as_f64()).sum()))
                        .collect();
                    let shape = self.shape(*bias);
                    self.accumulate(grads, *bias, Tensor::new(shape, db)?);
                }
                if self.wants(*weight) {
                    let mut dw = vec![T::zero(); g.out_c * g.rows()];
                    matmul(&dmat, false, cols, true, &mut dw, g.out_c, ncols, g.rows(), false);
                    let shape = self.shape(*weight);
                    self.accumulate(grads, *weight, Tensor::new(shape, dw)?);
                }
                if self.wants(*input) {
                    let mut dcols = vec![T::zero(); g.rows() * ncols];
                    matmul(
                        self.value(*weight).data(),
                        true,
                        &dmat,
                        false,
                        &mut dcols,
                        g.rows(),
                        g.out_c,
                        ncols,
                        false,
                    );
                    let dx = col2im(&dcols, g);
                    let shape = self.shape(*input);
                    self.accumulate(grads, *input, Tensor::new(shape, dx)?);
                }
            }
            Op::Linear { input, weight, bias } => {
                let xs = self.shape(*input);
                let n = xs.batch();
                let fan_in = xs.numel() / n.max(1);
                let out_f = up.numel() / n.max(1);
                if self.wants(*bias) {
                    let mut db = vec![0.0f64; out_f];
                    for row in up.data().chunks(out_f.max(1)) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v.as_f64();
                        }
                    }
                    let db = db.into_iter().map(T::from_f64).collect();
                    let shape = self.shape(*bias);
                    self.accumulate(grads, *bias, Tensor::new(shape, db)?);
                }
                if self.wants(*weight) {
                    let mut dw = vec![T::zero(); out_f * fan_in];
                    matmul(up.data(), true, self.value(*input).data(), false, &mut dw, out_f, n, fan_in, false);
                    let shape = self.shape(*weight);
                    self.accumulate(grads, *weight, Tensor::new(shape, dw)?);
                }
                if self.wants(*input) {
                    let mut dx = vec![T::zero(); n * fan_in];
                    matmul(up.data(), false, self.value(*weight).data(), false, &mut dx, n, out_f, fan_in, false);
                    self.accumulate(grads, *input, Tensor::new(xs, dx)?);
                }
            }
            Op::Act { input, kind } => {
                let x = self.value(*input);
                let dx = x.zip_map(up, |x, u| match kind {
                    Activation::Relu => {
                        if x > T::zero() {
                            u
                        } else {
                            T::zero()
                        }
                    }
                    Activation::Silu => {
                        let s = sigmoid(x);
                        u * s * (T::one() + x * (T::one() - s))
                    }
                })?;
                self.accumulate(grads, *input, dx);
            }
            Op::Resample { input, mode } => {
                let xs = self.shape(*input);
                let [_, _, h, w] = xs.0;
                let mut dx = vec![T::zero(); xs.numel()];
                match mode {
                    Resample::Down2Avg => {
                        let (oh, ow) = (h / 2, w / 2);
                        let quarter = T::from_f64(0.25);
                        for (dplane, uplane) in dx.chunks_mut(h * w).zip(up.data().chunks(oh * ow)) {
                            for y in 0..h {
                                for x in 0..w {
                                    dplane[y * w + x] = uplane[(y / 2) * ow + x / 2] * quarter;
                                }
                            }
                        }
                    }
                    Resample::Up2Nearest => {
                        let ow = w * 2;
                        for (dplane, uplane) in dx.chunks_mut(h * w).zip(up.data().chunks(4 * h * w)) {
                            for y in 0..h {
                                for x in 0..w {
                                    let a = uplane[(2 * y) * ow + 2 * x];
                                    let b = uplane[(2 * y) * ow + 2 * x + 1];
                                    let c = uplane[(2 * y + 1) * ow + 2 * x];
                                    let d = uplane[(2 * y + 1) * ow + 2 * x + 1];
                                    dplane[y * w + x] = (a + b) + (c + d);
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::new(xs, dx)?);
            }
            Op::Concat { inputs } => {
                let [n, total_c, h, w] = up.shape().0;
                let plane = h * w;
                let mut offset = 0;
                for &v in inputs {
                    let s = self.shape(v);
                    let c = s.channels();
                    if self.wants(v) {
                        let mut d = Vec::with_capacity(s.numel());
                        for b in 0..n {
                            let start = (b * total_c + offset) * plane;
                            d.extend_from_slice(&up.data()[start..start + c * plane]);
                        }
                        self.accumulate(grads, v, Tensor::new(s, d)?);
                    }
                    offset += c;
                }
            }
            Op::Affine { input, gamma, beta } => {
                let xs = self.shape(*input);
                let gs = self.shape(*gamma);
                let [n, c, h, w] = xs.0;
                let plane = h * w;
                let shared = gs.batch() == 1;
                let g = self.value(*gamma).data();
                let x = self.value(*input).data();
                let mut dgamma = vec![0.0f64; gs.numel()];
                let mut dbeta = vec![0.0f64; gs.numel()];
                let mut dx = vec![T::zero(); xs.numel()];
                for b in 0..n {
                    let row = if shared { 0 } else { b * c };
                    for ch in 0..c {
                        let base = (b * c + ch) * plane;
                        let u = &up.data()[base..base + plane];
                        let xv = &x[base..base + plane];
                        let gv = g[row + ch];
                        let (mut sg, mut sb) = (0.0f64, 0.0f64);
                        for i in 0..plane {
                            sg += u[i].as_f64() * xv[i].as_f64();
                            sb += u[i].as_f64();
                            dx[base + i] = u[i] * gv;
                        }
                        dgamma[row + ch] += sg;
                        dbeta[row + ch] += sb;
                    }
                }
                if self.wants(*gamma) {
                    let t = Tensor::new(gs, dgamma.into_iter().map(T::from_f64).collect())?;
                    self.accumulate(grads, *gamma, t);
                }
                if self.wants(*beta) {
                    let t = Tensor::new(gs, dbeta.into_iter().map(T::from_f64).collect())?;
                    self.accumulate(grads, *beta, t);
                }
                self.accumulate(grads, *input, Tensor::new(xs, dx)?);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, up.clone());
                self.accumulate(grads, *b, up.clone());
            }
            Op::AddScalar { input } => self.accumulate(grads, *input, up.clone()),
            Op::Sqrt { input } => {
                let tiny = T::from_f64(1e-12);
                let half = T::from_f64(0.5);
                let d = node.value.zip_map(up, |y, u| u * half / y.max(tiny))?;
                self.accumulate(grads, *input, d);
            }
            Op::Mse { pred, target } => {
                let u = up.data()[0].as_f64();
                let p = self.value(*pred);
                let n = p.numel().max(1) as f64;
                let d = p.zip_map(self.value(*target), |a, b| {
                    T::from_f64(2.0 * (a.as_f64() - b.as_f64()) / n * u)
                })?;
                if self.wants(*target) {
                    self.accumulate(grads, *target, d.scale(-T::one()));
                }
                self.accumulate(grads, *pred, d);
            }
            Op::WeightedSum { input, weights } => {
                let u = up.data()[0];
                self.accumulate(grads, *input, weights.scale(u));
            }
        }
        Ok(())
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let ncols = g.cols();
    let plane = g.out_h * g.out_w;
    let mut cols = vec![T::zero(); g.rows() * ncols];
    for ci in 0..g.in_c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.batch {
                    let src = &x[(b * g.in_c + ci) * g.in_h * g.in_w..][..g.in_h * g.in_w];
                    let dst = &mut dst_row[b * plane..(b + 1) * plane];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.in_h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.in_w..][..g.in_w];
                        let dst_r = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        for (ox, d) in dst_r.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.in_w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let ncols = g.cols();
    let plane = g.out_h * g.out_w;
    let mut x = vec![T::zero(); g.batch * g.in_c * g.in_h * g.in_w];
    for ci in 0..g.in_c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.batch {
                    let dst = &mut x[(b * g.in_c + ci) * g.in_h * g.in_w..][..g.in_h * g.in_w];
                    let src = &src_row[b * plane..(b + 1) * plane];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.in_h as isize {
                            continue;
                        }
                        let dst_r = &mut dst[iy as usize * g.in_w..][..g.in_w];
                        let src_r = &src[oy * g.out_w..(oy + 1) * g.out_w];
                        for (ox, &s) in src_r.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.in_w as isize {
                                dst_r[ix as usize] = dst_r[ix as usize] + s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}
