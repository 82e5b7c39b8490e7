//! Recorded computation graph with reverse (VJP) and forward (JVP) sweeps.
//!
//! Every primitive evaluates eagerly when it is added, caches its value and
//! whatever it needs for differentiation, and knows both its
//! vector-Jacobian and Jacobian-vector rules.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking the log in [`Graph::pixel_ce`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    MaxPool2 { x: Var, arg: Vec<usize> },
    Upsample2 { x: Var, planes: usize, h: usize, w: usize },
    Concat { a: Var, b: Var, outer: usize, a_len: usize, b_len: usize },
    Relu { x: Var },
    Softmax { x: Var, batch: usize, c: usize, hw: usize },
    PixelCe { prob: Var, picked: Vec<usize> },
    WeightedSum { x: Var, weights: Tensor },
    Sum { x: Var },
    Mean { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    Offset { x: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2 { .. } => "maxpool2",
            Op::Upsample2 { .. } => "upsample2",
            Op::Concat { .. } => "concat",
            Op::Relu { .. } => "relu",
            Op::Softmax { .. } => "softmax",
            Op::PixelCe { .. } => "pixel_ce",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Offset { .. } => "offset",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } => vec![x, w, b],
            Op::Concat { a, b, .. } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => vec![a, b],
            Op::MaxPool2 { x, .. }
            | Op::Upsample2 { x, .. }
            | Op::Relu { x }
            | Op::Softmax { x, .. }
            | Op::WeightedSum { x, .. }
            | Op::Sum { x }
            | Op::Mean { x }
            | Op::Scale { x, .. }
            | Op::Offset { x } => vec![x],
            Op::PixelCe { prob, .. } => vec![prob],
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// A topologically ordered record of primitive evaluations.
///
/// Nodes are appended in evaluation order, so node order is a valid
/// topological order for both sweeps.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of a reverse sweep: one optional adjoint per node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: usize,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Adjoint of `v`, or zeros of `like`'s shape when `v` was unreachable.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    /// Number of nodes the sweep propagated through.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

/// Result of a forward tangent sweep: one optional tangent per node
/// (`None` means identically zero).
#[derive(Debug)]
pub struct Tangents {
    tangents: Vec<Option<Tensor>>,
}

impl Tangents {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.tangents[v.0].as_ref()
    }
}

fn checked(op: &'static str, shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op });
    }
    Ok(Tensor::from_raw(shape, data))
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

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { op, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Differentiable leaf: reverse sweeps produce its adjoint.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value: t, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf treated as data; reverse sweeps do not propagate into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value: t, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Same-padded stride-1 convolution.
    ///
    /// `x: [B, Cin, H, W]`, `w: [Cout, Cin, k, k]` with `k` odd, `b: [Cout]`;
    /// output `[B, Cout, H, W]`. Zero padding of `(k - 1) / 2` on every side.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let bs = self.shape(b);
        if xs.len() != 4 || ws.len() != 4 || bs.len() != 1 {
            return Err(Error::shape("conv2d", format!("ranks x={xs:?} w={ws:?} b={bs:?}")));
        }
        if ws[1] != xs[1] || ws[2] != ws[3] || ws[2].is_multiple_of(2) || bs[0] != ws[0] {
            return Err(Error::shape("conv2d", format!("incompatible x={xs:?} w={ws:?} b={bs:?}")));
        }
        let geom = ConvGeom { batch: xs[0], cin: xs[1], cout: ws[0], h: xs[2], w: xs[3], k: ws[2] };
        let out = kernels::conv2d_forward(&geom, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let value = checked("conv2d", vec![geom.batch, geom.cout, geom.h, geom.w], out)?;
        Ok(self.push(Op::Conv2d { x, w, b, geom }, value))
    }

    /// 2x2 max pooling with stride 2 over the last two axes of a rank-4 input
    /// with even spatial extents. Ties go to the first element in scan order.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) {
            return Err(Error::shape("maxpool2", format!("need [B, C, even, even], got {s:?}")));
        }
        let (out, arg) = kernels::maxpool2_forward(s[0] * s[1], s[2], s[3], self.value(x).data());
        let value = checked("maxpool2", vec![s[0], s[1], s[2] / 2, s[3] / 2], out)?;
        Ok(self.push(Op::MaxPool2 { x, arg }, value))
    }

    /// Nearest-neighbour x2 upsampling of a rank-4 input.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("upsample2", format!("need rank 4, got {s:?}")));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let out = kernels::upsample2_forward(planes, h, w, self.value(x).data());
        let value = checked("upsample2", vec![s[0], s[1], 2 * h, 2 * w], out)?;
        Ok(self.push(Op::Upsample2 { x, planes, h, w }, value))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let compatible = sa.len() == sb.len()
            && axis < sa.len()
            && sa.iter().zip(&sb).enumerate().all(|(i, (p, q))| i == axis || p == q);
        if !compatible {
            return Err(Error::shape("concat", format!("{sa:?} vs {sb:?} on axis {axis}")));
        }
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let (a_len, b_len) = (sa[axis] * inner, sb[axis] * inner);
        let out = kernels::concat_forward(outer, a_len, b_len, self.value(a).data(), self.value(b).data());
        let mut shape = sa.clone();
        shape[axis] += sb[axis];
        let value = checked("concat", shape, out)?;
        Ok(self.push(Op::Concat { a, b, outer, a_len, b_len }, value))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        Ok(self.push(Op::Relu { x }, t))
    }

    /// Softmax over axis 1 of a `[B, C, ...]` input.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::shape("softmax", format!("need rank >= 2, got {s:?}")));
        }
        let (batch, c) = (s[0], s[1]);
        let hw: usize = s[2..].iter().product();
        let out = kernels::softmax_forward(batch, c, hw, self.value(x).data());
        let value = checked("softmax", s, out)?;
        Ok(self.push(Op::Softmax { x, batch, c, hw }, value))
    }

    /// Per-pixel cross-entropy `-ln(max(prob[label], PROB_FLOOR))`.
    ///
    /// `prob: [B, C, H, W]`, `labels: [B, H, W]` flattened with values in
    /// `0..C`; output `[B, H, W]`.
    pub fn pixel_ce(&mut self, prob: Var, labels: &[u8]) -> Result<Var> {
        let s = self.shape(prob).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("pixel_ce", format!("prob must be [B, C, H, W], got {s:?}")));
        }
        let (batch, c, hw) = (s[0], s[1], s[2] * s[3]);
        if labels.len() != batch * hw {
            return Err(Error::shape("pixel_ce", format!("{} labels for prob {s:?}", labels.len())));
        }
        let p = self.value(prob).data();
        let mut picked = Vec::with_capacity(labels.len());
        let mut out = Vec::with_capacity(labels.len());
        for (i, &lab) in labels.iter().enumerate() {
            let lab = lab as usize;
            if lab >= c {
                return Err(Error::contract(format!("label {lab} out of range for {c} classes")));
            }
            let (b, px) = (i / hw, i % hw);
            let idx = (b * c + lab) * hw + px;
            picked.push(idx);
            let pv = if p[idx] < PROB_FLOOR { PROB_FLOOR } else { p[idx] };
            out.push(-libm::log(pv));
        }
        let value = checked("pixel_ce", vec![batch, s[2], s[3]], out)?;
        Ok(self.push(Op::PixelCe { prob, picked }, value))
    }

    /// `sum_i weights_i * x_i` with constant weights of the same shape as `x`.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor) -> Result<Var> {
        self.value(x).check_same_shape(&weights, "weighted_sum")?;
        let v = self.value(x).dot(&weights)?;
        let value = checked("weighted_sum", vec![1], vec![v])?;
        Ok(self.push(Op::WeightedSum { x, weights }, value))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = checked("sum", vec![1], vec![self.value(x).sum()])?;
        Ok(self.push(Op::Sum { x }, value))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let value = checked("mean", vec![1], vec![t.sum() / t.len() as f64])?;
        Ok(self.push(Op::Mean { x }, value))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.check_same_shape(tb, op.name())?;
        let data = ta.data().iter().zip(tb.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = checked(op.name(), ta.shape().to_vec(), data)?;
        Ok(self.push(op, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add { a, b }, |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub { a, b }, |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul { a, b }, |p, q| p * q)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.value(x).scale(c);
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "scale" });
        }
        Ok(self.push(Op::Scale { x, c }, value))
    }

    /// `x + c` elementwise.
    pub fn offset(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v + c);
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "offset" });
        }
        Ok(self.push(Op::Offset { x }, value))
    }

    /// Reverse sweep from `output` seeded with `seed` (same shape as the output).
    ///
    /// Only nodes that depend on a [`Graph::param`] leaf receive adjoints.
    pub fn backward(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        self.value(output).check_same_shape(seed, "backward")?;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut visited = 0;
        if self.nodes[output.0].requires_grad {
            grads[output.0] = Some(seed.clone());
        }
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            visited += 1;
            let node = &self.nodes[idx];
            if !g.is_finite() {
                return Err(Error::NonFinite { op: node.op.name() });
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }

    /// Reverse sweep of a one-element output with unit seed.
    pub fn backward_scalar(&self, output: Var) -> Result<Gradients> {
        let shape = self.value(output).shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::shape("backward_scalar", format!("output is not scalar: {shape:?}")));
        }
        self.backward(output, &Tensor::full(&shape, 1.0))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let want = [self.wants(*x), self.wants(*w), self.wants(*b)];
                let r = kernels::conv2d_backward(geom, self.value(*x).data(), self.value(*w).data(), g.data(), want);
                if let Some(dx) = r.dx {
                    self.accumulate(grads, *x, Tensor::from_raw(self.shape(*x).to_vec(), dx));
                }
                if let Some(dw) = r.dweight {
                    self.accumulate(grads, *w, Tensor::from_raw(self.shape(*w).to_vec(), dw));
                }
                if let Some(db) = r.dbias {
                    self.accumulate(grads, *b, Tensor::from_raw(self.shape(*b).to_vec(), db));
                }
            }
            Op::MaxPool2 { x, arg } => {
                let mut dx = Tensor::zeros(self.shape(*x));
                let d = dx.data_mut();
                for (&i, &gv) in arg.iter().zip(g.data()) {
                    d[i] += gv;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Upsample2 { x, planes, h, w } => {
                let dx = kernels::upsample2_backward(*planes, *h, *w, g.data());
                self.accumulate(grads, *x, Tensor::from_raw(self.shape(*x).to_vec(), dx));
            }
            Op::Concat { a, b, outer, a_len, b_len } => {
                let (ga, gb) = kernels::concat_split(*outer, *a_len, *b_len, g.data());
                self.accumulate(grads, *a, Tensor::from_raw(self.shape(*a).to_vec(), ga));
                self.accumulate(grads, *b, Tensor::from_raw(self.shape(*b).to_vec(), gb));
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                let d = g.data().iter().zip(xv).map(|(&gv, &v)| if v > 0.0 { gv } else { 0.0 }).collect();
                self.accumulate(grads, *x, Tensor::from_raw(self.shape(*x).to_vec(), d));
            }
            Op::Softmax { x, batch, c, hw } => {
                let d = kernels::softmax_jacobian_apply(*batch, *c, *hw, node.value.data(), g.data());
                self.accumulate(grads, *x, Tensor::from_raw(self.shape(*x).to_vec(), d));
            }
            Op::PixelCe { prob, picked } => {
                let p = self.value(*prob).data();
                let mut d = Tensor::zeros(self.shape(*prob));
                let dd = d.data_mut();
                for (&i, &gv) in picked.iter().zip(g.data()) {
                    if p[i] >= PROB_FLOOR {
                        dd[i] -= gv / p[i];
                    }
                }
                self.accumulate(grads, *prob, d);
            }
            Op::WeightedSum { x, weights } => {
                self.accumulate(grads, *x, weights.scale(g.data()[0]));
            }
            Op::Sum { x } => {
                self.accumulate(grads, *x, Tensor::full(self.shape(*x), g.data()[0]));
            }
            Op::Mean { x } => {
                let n = self.value(*x).len() as f64;
                self.accumulate(grads, *x, Tensor::full(self.shape(*x), g.data()[0] / n));
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = g.data().iter().zip(vb.data()).map(|(p, q)| p * q).collect();
                let gb = g.data().iter().zip(va.data()).map(|(p, q)| p * q).collect();
                self.accumulate(grads, *a, Tensor::from_raw(va.shape().to_vec(), ga));
                self.accumulate(grads, *b, Tensor::from_raw(vb.shape().to_vec(), gb));
            }
            Op::Scale { x, c } => {
                self.accumulate(grads, *x, g.scale(*c));
            }
            Op::Offset { x } => {
                self.accumulate(grads, *x, g.clone());
            }
        }
        Ok(())
    }

    /// Forward tangent sweep. `seeds` assigns tangents to leaves; every other
    /// leaf has a zero tangent.
    pub fn tangents(&self, seeds: &[(Var, &Tensor)]) -> Result<Tangents> {
        let mut tangents: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, t) in seeds {
            if !matches!(self.nodes[v.0].op, Op::Leaf) {
                return Err(Error::contract("tangent seeds must be leaves"));
            }
            self.value(*v).check_same_shape(t, "tangents")?;
            tangents[v.0] = Some((*t).clone());
        }
        for idx in 0..self.nodes.len() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            if node.op.inputs().iter().all(|v| tangents[v.0].is_none()) {
                continue;
            }
            let t = self.tangent_rule(node, &tangents)?;
            if !t.is_finite() {
                return Err(Error::NonFinite { op: node.op.name() });
            }
            tangents[idx] = Some(t);
        }
        Ok(Tangents { tangents })
    }

    /// Tangent of `output` only, zeros when it does not depend on the seeds.
    pub fn jvp(&self, output: Var, seeds: &[(Var, &Tensor)]) -> Result<Tensor> {
        let t = self.tangents(seeds)?;
        Ok(t.get(output).cloned().unwrap_or_else(|| Tensor::zeros(self.shape(output))))
    }

    fn tangent_rule(&self, node: &Node, tan: &[Option<Tensor>]) -> Result<Tensor> {
        let get = |v: &Var| tan[v.0].as_ref();
        let zeros_or = |v: &Var| get(v).cloned().unwrap_or_else(|| Tensor::zeros(self.shape(*v)));
        let shape = node.value.shape().to_vec();
        let t = match &node.op {
            Op::Leaf => unreachable!("leaves are seeded directly"),
            Op::Conv2d { x, w, b, geom } => {
                let d = kernels::conv2d_tangent(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    get(x).map(Tensor::data),
                    get(w).map(Tensor::data),
                    get(b).map(Tensor::data),
                );
                Tensor::from_raw(shape, d)
            }
            Op::MaxPool2 { x, arg } => {
                let tx = zeros_or(x);
                Tensor::from_raw(shape, arg.iter().map(|&i| tx.data()[i]).collect())
            }
            Op::Upsample2 { x, planes, h, w } => {
                Tensor::from_raw(shape, kernels::upsample2_forward(*planes, *h, *w, zeros_or(x).data()))
            }
            Op::Concat { a, b, outer, a_len, b_len } => Tensor::from_raw(
                shape,
                kernels::concat_forward(*outer, *a_len, *b_len, zeros_or(a).data(), zeros_or(b).data()),
            ),
            Op::Relu { x } => {
                let tx = zeros_or(x);
                let d = tx
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&t, &v)| if v > 0.0 { t } else { 0.0 })
                    .collect();
                Tensor::from_raw(shape, d)
            }
            Op::Softmax { x, batch, c, hw } => Tensor::from_raw(
                shape,
                kernels::softmax_jacobian_apply(*batch, *c, *hw, node.value.data(), zeros_or(x).data()),
            ),
            Op::PixelCe { prob, picked } => {
                let tp = zeros_or(prob);
                let p = self.value(*prob).data();
                let d = picked
                    .iter()
                    .map(|&i| if p[i] >= PROB_FLOOR { -tp.data()[i] / p[i] } else { 0.0 })
                    .collect();
                Tensor::from_raw(shape, d)
            }
            Op::WeightedSum { x, weights } => Tensor::from_raw(shape, vec![zeros_or(x).dot(weights)?]),
            Op::Sum { x } => Tensor::from_raw(shape, vec![zeros_or(x).sum()]),
            Op::Mean { x } => {
                let tx = zeros_or(x);
                Tensor::from_raw(shape, vec![tx.sum() / tx.len() as f64])
            }
            Op::Add { a, b } => zeros_or(a).axpy(1.0, &zeros_or(b))?,
            Op::Sub { a, b } => zeros_or(a).axpy(-1.0, &zeros_or(b))?,
            Op::Mul { a, b } => {
                let (ta, tb) = (zeros_or(a), zeros_or(b));
                let (va, vb) = (self.value(*a), self.value(*b));
                let d = (0..va.len())
                    .map(|i| ta.data()[i] * vb.data()[i] + va.data()[i] * tb.data()[i])
                    .collect();
                Tensor::from_raw(shape, d)
            }
            Op::Scale { x, c } => zeros_or(x).scale(*c),
            Op::Offset { x } => zeros_or(x),
        };
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_values() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn maxpool_value() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.maxpool2(x).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
    }

    #[test]
    fn shape_rules_are_enforced() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 3, 3]));
        let w = g.param(Tensor::zeros(&[4, 3, 3, 3]));
        let b = g.param(Tensor::zeros(&[4]));
        assert!(matches!(g.conv2d(x, w, b), Err(Error::Shape { op: "conv2d", .. })));
        assert!(g.maxpool2(x).is_err());
        let y = g.constant(Tensor::zeros(&[1, 2, 3, 4]));
        assert!(g.concat(x, y, 1).is_err());
        assert!(g.add(x, y).is_err());
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward_scalar(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
        assert_eq!(grads.visited(), 2);
    }

    #[test]
    fn unreachable_nodes_are_not_visited() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(1.5));
        let side = g.scale(x, 4.0).unwrap();
        let _ = g.relu(side).unwrap();
        let y = g.offset(x, 1.0).unwrap();
        let grads = g.backward_scalar(y).unwrap();
        assert_eq!(grads.visited(), 2);
        assert!(grads.get(side).is_none());
    }

    #[test]
    fn softmax_of_equal_logits_is_half() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 2, 2]));
        let p = g.softmax(x).unwrap();
        assert!(g.value(p).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn pixel_ce_clamps_zero_probability() {
        let mut g = Graph::new();
        let p = g.param(t(&[1, 2, 1, 1], &[1.0, 0.0]));
        let l = g.pixel_ce(p, &[1]).unwrap();
        let v = g.value(l).data()[0];
        assert!((v - (-libm::log(PROB_FLOOR))).abs() < 1e-12);
        let grads = g.backward(l, &Tensor::full(&[1, 1, 1], 1.0)).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn nonfinite_is_reported_with_primitive_name() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(1e300));
        let err = g.mul(x, x).unwrap_err();
        assert_eq!(err, Error::NonFinite { op: "mul" });
    }
}
