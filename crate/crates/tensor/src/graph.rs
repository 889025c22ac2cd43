//! Tape-style computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order: every input of a node has a smaller index.

use crate::conv::{self, ConvGeometry};
use crate::element::Element;
use crate::error::{shape_err, Result, TensorError};
use crate::stats::{self, mask_at, mask_total, ChannelStats};
use crate::tensor::{check_same_shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: NodeId, w: NodeId, b: Option<NodeId>, geo: ConvGeometry, cols: Vec<T> },
    Upsample2x(NodeId),
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Relu(NodeId),
    LeakyRelu(NodeId, T),
    Tanh(NodeId),
    Abs(NodeId),
    Softplus(NodeId),
    Scale(NodeId, T),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Mean(NodeId),
    Sum(NodeId),
    ChannelMean { x: NodeId, mask: Option<Tensor<T>>, total: T },
    ChannelStd { x: NodeId, mask: Option<Tensor<T>>, total: T, stats: ChannelStats<T> },
    Normalize { x: NodeId, mask: Option<Tensor<T>>, total: T, std: Vec<T> },
    ChannelAffine { x: NodeId, gamma: NodeId, beta: NodeId },
    Concat(Vec<NodeId>),
    Slice { x: NodeId, start: usize },
    MaskedL1 { a: NodeId, b: NodeId, mask: Option<Tensor<T>>, denom: T },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of one backward pass, indexed by leaf node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of `id`, or `None` when the node is not on a path to the loss.
    pub fn get(&self, id: NodeId) -> Option<Tensor<T>> {
        let g = self.grads.get(id.0)?.as_ref()?;
        Some(Tensor::from_parts(self.shapes[id.0].clone(), g.clone()))
    }

    /// Gradient of `id`; zeros when untouched.
    pub fn wrt(&self, id: NodeId) -> Tensor<T> {
        self.get(id).unwrap_or_else(|| Tensor::zeros(self.shapes[id.0].clone()))
    }
}

#[derive(Debug, Default)]
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked through it.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, true)
    }

    /// Stop-gradient copy of a node's current value.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.nodes[id.0].value.clone();
        self.constant(v)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> Result<NodeId> {
        if value.data().iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn unary(&mut self, name: &'static str, x: NodeId, f: impl Fn(T) -> T, op: Op<T>) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let out = Tensor::from_parts(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect());
        self.push(name, out, op, &[x])
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        check_same_shape(av, bv, name)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(name, out, op, &[a, b])
    }

    /// 2-D convolution of a `Ci×H×W` input with `Co×Ci×k×k` weights and zero padding.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let geo = ConvGeometry::new(xv.shape(), wv.shape(), stride, pad)?;
        let bias = match b {
            Some(b) => {
                let bv = &self.nodes[b.0].value;
                if bv.shape() != [geo.c_out] {
                    return shape_err(format!("conv bias {:?} for {} outputs", bv.shape(), geo.c_out));
                }
                Some(bv.data())
            }
            None => None,
        };
        let (out, cols) = conv::forward(&geo, xv.data(), wv.data(), bias);
        let value = Tensor::from_parts(vec![geo.c_out, geo.h_out, geo.w_out], out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("conv2d", value, Op::Conv2d { x, w, b, geo, cols }, &inputs)
    }

    /// Nearest-neighbour 2× upsampling of a `C×H×W` tensor.
    pub fn upsample2x(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let (c, h, w) = xv.chw()?;
        let src = xv.data();
        let mut out = Vec::with_capacity(c * h * w * 4);
        for ch in 0..c {
            for y in 0..2 * h {
                let row = &src[ch * h * w + (y / 2) * w..][..w];
                for &v in row {
                    out.push(v);
                    out.push(v);
                }
            }
        }
        let value = Tensor::from_parts(vec![c, 2 * h, 2 * w], out);
        self.push("upsample2x", value, Op::Upsample2x(x), &[x])
    }

    /// `w · x + b` for a vector `x` and `out×in` weights.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let (n_out, n_in) = match wv.shape()[..] {
            [o, i] => (o, i),
            _ => return shape_err(format!("linear weight must be 2-D, got {:?}", wv.shape())),
        };
        if xv.rank() != 1 || xv.numel() != n_in {
            return shape_err(format!("linear input {:?} for weight {:?}", xv.shape(), wv.shape()));
        }
        let mut out = match b {
            Some(b) => {
                let bv = &self.nodes[b.0].value;
                if bv.shape() != [n_out] {
                    return shape_err(format!("linear bias {:?} for {n_out} outputs", bv.shape()));
                }
                bv.data().to_vec()
            }
            None => vec![T::zero(); n_out],
        };
        T::gemm(n_out, n_in, 1, T::one(), wv.data(), n_in as isize, 1, xv.data(), 1, 1, T::one(), &mut out, 1, 1);
        let value = Tensor::from_parts(vec![n_out], out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("linear", value, Op::Linear { x, w, b }, &inputs)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("relu", x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: T) -> Result<NodeId> {
        self.unary("leaky_relu", x, move |v| if v > T::zero() { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("tanh", x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("abs", x, |v| v.abs(), Op::Abs(x))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("softplus", x, softplus, Op::Softplus(x))
    }

    pub fn scale(&mut self, x: NodeId, k: T) -> Result<NodeId> {
        self.unary("scale", x, move |v| v * k, Op::Scale(x, k))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Mean over all elements, as a one-element tensor.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let n = T::lit(xv.numel() as f64);
        let s = xv.data().iter().fold(T::zero(), |a, &v| a + v);
        self.push("mean", Tensor::scalar(s / n), Op::Mean(x), &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.nodes[x.0].value.data().iter().fold(T::zero(), |a, &v| a + v);
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Weighted sum `Σ k_i · x_i` of one-element nodes; zero-weight terms are
    /// left out of the graph entirely.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, T)]) -> Result<NodeId> {
        let mut acc: Option<NodeId> = None;
        for &(id, k) in terms {
            if k == T::zero() {
                continue;
            }
            let scaled = self.scale(id, k)?;
            acc = Some(match acc {
                Some(a) => self.add(a, scaled)?,
                None => scaled,
            });
        }
        match acc {
            Some(a) => Ok(a),
            None => Ok(self.constant(Tensor::scalar(T::zero()))),
        }
    }

    /// Per-channel (masked) mean of a `C×H×W` tensor; also the global average pool.
    pub fn channel_mean(&mut self, x: NodeId, mask: Option<&Tensor<T>>) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let (c, h, w) = xv.chw()?;
        let total = mask_total(mask, h, w)?;
        let m = mask.map(|m| m.data());
        let out: Vec<T> = xv
            .data()
            .chunks_exact(h * w)
            .map(|ch| ch.iter().enumerate().fold(T::zero(), |a, (i, &v)| a + mask_at(m, i) * v) / total)
            .collect();
        debug_assert_eq!(out.len(), c);
        let op = Op::ChannelMean { x, mask: mask.cloned(), total };
        self.push("channel_mean", Tensor::from_parts(vec![c], out), op, &[x])
    }

    pub fn global_avg_pool(&mut self, x: NodeId, mask: Option<&Tensor<T>>) -> Result<NodeId> {
        self.channel_mean(x, mask)
    }

    /// Per-channel (masked) standard deviation `sqrt(var + eps)`.
    pub fn channel_std(&mut self, x: NodeId, mask: Option<&Tensor<T>>, eps: T) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let (c, h, w) = xv.chw()?;
        let total = mask_total(mask, h, w)?;
        let s = stats::stats_kernel(xv, mask, eps)?;
        let value = Tensor::from_parts(vec![c], s.std.clone());
        let op = Op::ChannelStd { x, mask: mask.cloned(), total, stats: s };
        self.push("channel_std", value, op, &[x])
    }

    /// `(x - mu) / sigma` per channel, statistics from the masked positions,
    /// applied at every position.
    pub fn normalize(&mut self, x: NodeId, mask: Option<&Tensor<T>>, eps: T) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let (_, h, w) = xv.chw()?;
        let total = mask_total(mask, h, w)?;
        let s = stats::stats_kernel(xv, mask, eps)?;
        let out = stats::normalize_with(xv, &s);
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        let op = Op::Normalize { x, mask: mask.cloned(), total, std: s.std };
        self.push("normalize", value, op, &[x])
    }

    /// `gamma_c * x + beta_c` with per-channel vectors.
    pub fn channel_affine(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let (c, h, w) = xv.chw()?;
        let (gv, bv) = (&self.nodes[gamma.0].value, &self.nodes[beta.0].value);
        if gv.shape() != [c] || bv.shape() != [c] {
            return shape_err(format!("affine params {:?}/{:?} for {c} channels", gv.shape(), bv.shape()));
        }
        let mut out = Vec::with_capacity(xv.numel());
        for (ch, vals) in xv.data().chunks_exact(h * w).enumerate() {
            let (g, b) = (gv.data()[ch], bv.data()[ch]);
            out.extend(vals.iter().map(|&v| g * v + b));
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push("channel_affine", value, Op::ChannelAffine { x, gamma, beta }, &[x, gamma, beta])
    }

    /// Adaptive instance normalization.
    pub fn adain(
        &mut self,
        z: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mask: Option<&Tensor<T>>,
        eps: T,
    ) -> Result<NodeId> {
        let n = self.normalize(z, mask, eps)?;
        self.channel_affine(n, gamma, beta)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut out = Vec::new();
        for &p in parts {
            let v = &self.nodes[p.0].value;
            if v.rank() != 1 {
                return shape_err(format!("concat expects vectors, got {:?}", v.shape()));
            }
            out.extend_from_slice(v.data());
        }
        if out.is_empty() {
            return Err(TensorError::Contract("concat of nothing".into()));
        }
        let value = Tensor::from_parts(vec![out.len()], out);
        self.push("concat", value, Op::Concat(parts.to_vec()), parts)
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = &self.nodes[x.0].value;
        if v.rank() != 1 || len == 0 || start + len > v.numel() {
            return shape_err(format!("slice {start}..{} of {:?}", start + len, v.shape()));
        }
        let value = Tensor::from_parts(vec![len], v.data()[start..start + len].to_vec());
        self.push("slice", value, Op::Slice { x, start }, &[x])
    }

    /// Mean absolute difference. With a `H×W` mask on `C×H×W` inputs the mean
    /// is weighted: `Σ m·|a−b| / (C·Σm)`.
    pub fn l1(&mut self, a: NodeId, b: NodeId, mask: Option<&Tensor<T>>) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        check_same_shape(av, bv, "l1")?;
        let (value, denom) = match mask {
            None => {
                let s = av.data().iter().zip(bv.data()).fold(T::zero(), |acc, (&x, &y)| acc + (x - y).abs());
                let n = T::lit(av.numel() as f64);
                (s / n, n)
            }
            Some(m) => {
                let (c, h, w) = av.chw()?;
                let total = mask_total(Some(m), h, w)?;
                let md = m.data();
                let hw = h * w;
                let mut s = T::zero();
                for (i, (&x, &y)) in av.data().iter().zip(bv.data()).enumerate() {
                    s = s + md[i % hw] * (x - y).abs();
                }
                let denom = T::lit(c as f64) * total;
                (s / denom, denom)
            }
        };
        let op = Op::MaskedL1 { a, b, mask: mask.cloned(), denom };
        self.push("l1", Tensor::scalar(value), op, &[a, b])
    }

    /// Signs at every non-differentiable point of the graph (ReLU / abs / L1
    /// inputs). Two evaluations with equal signatures lie in the same smooth piece.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) | Op::LeakyRelu(x, _) | Op::Abs(x) => {
                    sig.extend(self.nodes[x.0].value.data().iter().map(|&v| v > T::zero()));
                }
                Op::MaskedL1 { a, b, .. } => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    sig.extend(av.data().iter().zip(bv.data()).map(|(x, y)| x > y));
                }
                _ => {}
            }
        }
        sig
    }

    /// Reverse-mode pass from a one-element `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(TensorError::Contract(format!("backward from non-scalar node of shape {:?}", lv.shape())));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..n).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize_with(self.nodes.len(), || None);
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let val = |id: NodeId| self.nodes[id.0].value.data();
        // Accumulates into an input's gradient if that input needs one.
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            let slot = grads[id.0].get_or_insert_with(|| vec![T::zero(); self.nodes[id.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geo, cols } => {
                acc(*w, &mut |dw| conv::backward_weight(geo, g, cols, dw));
                if let Some(b) = b {
                    acc(*b, &mut |db| conv::backward_bias(geo, g, db));
                }
                acc(*x, &mut |dx| conv::backward_input(geo, g, val(*w), dx));
            }
            Op::Upsample2x(x) => {
                let (c, h, w) = self.nodes[x.0].value.chw().expect("rank checked in forward");
                acc(*x, &mut |dx| {
                    let w2 = 2 * w;
                    for ch in 0..c {
                        for y in 0..2 * h {
                            for xx in 0..w2 {
                                dx[ch * h * w + (y / 2) * w + xx / 2] =
                                    dx[ch * h * w + (y / 2) * w + xx / 2] + g[(ch * 2 * h + y) * w2 + xx];
                            }
                        }
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let xs = val(*x);
                let n_in = xs.len();
                let n_out = g.len();
                acc(*w, &mut |dw| {
                    for (o, &go) in g.iter().enumerate() {
                        for (d, &xv) in dw[o * n_in..(o + 1) * n_in].iter_mut().zip(xs) {
                            *d = *d + go * xv;
                        }
                    }
                });
                if let Some(b) = b {
                    acc(*b, &mut |db| add_into(db, g));
                }
                let ws = val(*w);
                acc(*x, &mut |dx| {
                    T::gemm(n_in, n_out, 1, T::one(), ws, 1, n_in as isize, g, 1, 1, T::one(), dx, 1, 1);
                });
            }
            Op::Relu(x) => {
                let xs = val(*x);
                acc(*x, &mut |dx| {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xs) {
                        if v > T::zero() {
                            *d = *d + gv;
                        }
                    }
                });
            }
            Op::LeakyRelu(x, slope) => {
                let xs = val(*x);
                acc(*x, &mut |dx| {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xs) {
                        *d = *d + if v > T::zero() { gv } else { *slope * gv };
                    }
                });
            }
            Op::Tanh(x) => {
                let ys = node.value.data();
                acc(*x, &mut |dx| {
                    for ((d, &gv), &y) in dx.iter_mut().zip(g).zip(ys) {
                        *d = *d + gv * (T::one() - y * y);
                    }
                });
            }
            Op::Abs(x) => {
                let xs = val(*x);
                acc(*x, &mut |dx| {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xs) {
                        *d = *d + gv * sign(v);
                    }
                });
            }
            Op::Softplus(x) => {
                let xs = val(*x);
                acc(*x, &mut |dx| {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xs) {
                        *d = *d + gv * sigmoid(v);
                    }
                });
            }
            Op::Scale(x, k) => acc(*x, &mut |dx| {
                for (d, &gv) in dx.iter_mut().zip(g) {
                    *d = *d + *k * gv;
                }
            }),
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| {
                    for (d, &gv) in d.iter_mut().zip(g) {
                        *d = *d - gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for ((d, &gv), &y) in d.iter_mut().zip(g).zip(bv) {
                        *d = *d + gv * y;
                    }
                });
                acc(*b, &mut |d| {
                    for ((d, &gv), &x) in d.iter_mut().zip(g).zip(av) {
                        *d = *d + gv * x;
                    }
                });
            }
            Op::Mean(x) => {
                let n = T::lit(self.nodes[x.0].value.numel() as f64);
                let gv = g[0] / n;
                acc(*x, &mut |d| d.iter_mut().for_each(|d| *d = *d + gv));
            }
            Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|d| *d = *d + g[0])),
            Op::ChannelMean { x, mask, total } => {
                let hw = spatial(&self.nodes[x.0].value);
                let m = mask.as_ref().map(|m| m.data());
                acc(*x, &mut |d| {
                    for (ch, dch) in d.chunks_exact_mut(hw).enumerate() {
                        let gc = g[ch] / *total;
                        for (j, dj) in dch.iter_mut().enumerate() {
                            *dj = *dj + gc * mask_at(m, j);
                        }
                    }
                });
            }
            Op::ChannelStd { x, mask, total, stats } => {
                let hw = spatial(&self.nodes[x.0].value);
                let m = mask.as_ref().map(|m| m.data());
                let xs = val(*x);
                acc(*x, &mut |d| {
                    for (ch, (dch, xch)) in d.chunks_exact_mut(hw).zip(xs.chunks_exact(hw)).enumerate() {
                        let k = g[ch] / (*total * stats.std[ch]);
                        let mu = stats.mean[ch];
                        for (j, (dj, &v)) in dch.iter_mut().zip(xch).enumerate() {
                            *dj = *dj + k * mask_at(m, j) * (v - mu);
                        }
                    }
                });
            }
            Op::Normalize { x, mask, total, std } => {
                let hw = spatial(&self.nodes[x.0].value);
                let m = mask.as_ref().map(|m| m.data());
                let ns = node.value.data();
                acc(*x, &mut |d| {
                    for (ch, ((dch, gch), nch)) in
                        d.chunks_exact_mut(hw).zip(g.chunks_exact(hw)).zip(ns.chunks_exact(hw)).enumerate()
                    {
                        let g1 = gch.iter().fold(T::zero(), |a, &v| a + v);
                        let g2 = gch.iter().zip(nch).fold(T::zero(), |a, (&gv, &nv)| a + gv * nv);
                        let inv = T::one() / std[ch];
                        for (j, ((dj, &gv), &nv)) in dch.iter_mut().zip(gch).zip(nch).enumerate() {
                            let wj = mask_at(m, j) / *total;
                            *dj = *dj + (gv - wj * (g1 + g2 * nv)) * inv;
                        }
                    }
                });
            }
            Op::ChannelAffine { x, gamma, beta } => {
                let hw = spatial(&self.nodes[x.0].value);
                let xs = val(*x);
                let gs = val(*gamma);
                acc(*x, &mut |d| {
                    for (ch, (dch, gch)) in d.chunks_exact_mut(hw).zip(g.chunks_exact(hw)).enumerate() {
                        for (dj, &gv) in dch.iter_mut().zip(gch) {
                            *dj = *dj + gs[ch] * gv;
                        }
                    }
                });
                acc(*gamma, &mut |d| {
                    for (ch, (gch, xch)) in g.chunks_exact(hw).zip(xs.chunks_exact(hw)).enumerate() {
                        d[ch] = d[ch] + gch.iter().zip(xch).fold(T::zero(), |a, (&gv, &v)| a + gv * v);
                    }
                });
                acc(*beta, &mut |d| {
                    for (ch, gch) in g.chunks_exact(hw).enumerate() {
                        d[ch] = d[ch] + gch.iter().fold(T::zero(), |a, &v| a + v);
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.numel();
                    acc(p, &mut |d| add_into(d, &g[off..off + len]));
                    off += len;
                }
            }
            Op::Slice { x, start } => acc(*x, &mut |d| add_into(&mut d[*start..*start + g.len()], g)),
            Op::MaskedL1 { a, b, mask, denom } => {
                let (av, bv) = (val(*a), val(*b));
                let hw = match mask {
                    Some(m) => m.numel(),
                    None => av.len(),
                };
                let md = mask.as_ref().map(|m| m.data());
                let k = g[0] / *denom;
                acc(*a, &mut |d| {
                    for (i, (dj, (&x, &y))) in d.iter_mut().zip(av.iter().zip(bv)).enumerate() {
                        *dj = *dj + k * mask_at(md, i % hw) * sign(x - y);
                    }
                });
                acc(*b, &mut |d| {
                    for (i, (dj, (&x, &y))) in d.iter_mut().zip(av.iter().zip(bv)).enumerate() {
                        *dj = *dj - k * mask_at(md, i % hw) * sign(x - y);
                    }
                });
            }
        }
    }
}

fn spatial<T: Element>(t: &Tensor<T>) -> usize {
    t.shape()[1..].iter().product()
}

fn add_into<T: Element>(d: &mut [T], g: &[T]) {
    for (d, &v) in d.iter_mut().zip(g) {
        *d = *d + v;
    }
}

fn sign<T: Element>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub(crate) fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Element>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}
