use crate::array::{axis_split, Array};
use crate::error::{Error, Result};

use super::kernels::{mish, mish_grad, mm, mm_a_bt, mm_at_b, sigmoid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Mish,
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Mish => mish(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative given the input `x` and the already computed output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Mish => mish_grad(x),
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    AddBroadcast,
    MulBroadcast,
    ScalarAffine { mul: f64 },
    Abs,
    Activation(Activation),
    MatMul(MatMulPlan),
    TransposeLast2,
    Reshape,
    Softmax { tau: f64, axis: usize },
    Conv1d { dilation: usize },
    ChannelAffine,
    BatchNorm { xhat: Array, inv_std: Vec<f64>, train: bool },
    MeanAxis { axis: usize },
    Slice { axis: usize, start: usize },
    Concat { axis: usize },
    SumAll,
    MeanAll,
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::AddBroadcast => "add_broadcast",
            Op::MulBroadcast => "mul_broadcast",
            Op::ScalarAffine { .. } => "scalar_affine",
            Op::Abs => "abs",
            Op::Activation(_) => "activation",
            Op::MatMul(_) => "matmul",
            Op::TransposeLast2 => "transpose",
            Op::Reshape => "reshape",
            Op::Softmax { .. } => "softmax",
            Op::Conv1d { .. } => "conv1d",
            Op::ChannelAffine => "channel_affine",
            Op::BatchNorm { .. } => "batch_norm",
            Op::MeanAxis { .. } => "mean_axis",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::SumAll => "sum",
            Op::MeanAll => "mean",
        }
    }
}

/// Offsets of each output batch slice into the two operands.
#[derive(Debug)]
pub(crate) struct MatMulPlan {
    a_index: Vec<usize>,
    b_index: Vec<usize>,
    m: usize,
    p: usize,
    n: usize,
}

#[derive(Debug)]
pub struct Node {
    pub id: NodeId,
    pub(crate) op: Op,
    pub inputs: Vec<NodeId>,
    pub value: Array,
    pub grad: Option<Array>,
    pub requires_grad: bool,
}

impl Node {
    pub fn op_name(&self) -> &'static str {
        self.op.name()
    }
}

/// Batch statistics produced by a train-mode batch norm, used to update the
/// running state outside the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance.
    pub var: Vec<f64>,
}

/// Define-by-run tape. Nodes are appended in creation order, which is a
/// topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Gradient after `backward`; `None` for nodes that do not require one.
    pub fn grad(&self, id: NodeId) -> Option<&Array> {
        self.nodes[id.0].grad.as_ref()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Array) -> NodeId {
        let id = NodeId(self.nodes.len());
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            id,
            op,
            inputs,
            value,
            grad: None,
            requires_grad,
        });
        id
    }

    fn push_leaf(&mut self, value: Array, requires_grad: bool) -> NodeId {
        let id = self.push(Op::Leaf, Vec::new(), value);
        self.nodes[id.0].requires_grad = requires_grad;
        id
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array) -> NodeId {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push_leaf(value, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(Op::Add, vec![a, b], v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(Op::Sub, vec![a, b], v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul, vec![a, b], v))
    }

    fn check_suffix(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<usize> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(self.value(b).len().max(1))
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s and is tiled over the
    /// leading axes.
    pub fn add_broadcast(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let tile = self.check_suffix("add_broadcast", a, b)?;
        let bv = self.value(b).data();
        let mut v = self.value(a).clone();
        for chunk in v.data_mut().chunks_mut(tile) {
            for (x, &y) in chunk.iter_mut().zip(bv) {
                *x += y;
            }
        }
        Ok(self.push(Op::AddBroadcast, vec![a, b], v))
    }

    /// `a ⊙ b` with `b` tiled as in [`Graph::add_broadcast`].
    pub fn mul_broadcast(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let tile = self.check_suffix("mul_broadcast", a, b)?;
        let bv = self.value(b).data();
        let mut v = self.value(a).clone();
        for chunk in v.data_mut().chunks_mut(tile) {
            for (x, &y) in chunk.iter_mut().zip(bv) {
                *x *= y;
            }
        }
        Ok(self.push(Op::MulBroadcast, vec![a, b], v))
    }

    /// `mul · a + add`, elementwise.
    pub fn scalar_affine(&mut self, a: NodeId, mul: f64, add: f64) -> NodeId {
        let v = self.value(a).map(|x| mul * x + add);
        self.push(Op::ScalarAffine { mul }, vec![a], v)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.scalar_affine(a, factor, 0.0)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::abs);
        self.push(Op::Abs, vec![a], v)
    }

    pub fn activation(&mut self, a: NodeId, kind: Activation) -> NodeId {
        let v = self.value(a).map(|x| kind.apply(x));
        self.push(Op::Activation(kind), vec![a], v)
    }

    /// Batched matrix product over the two trailing axes. Leading extents
    /// must match or be 1 (or be absent) in one operand.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (m, p) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let n = sb[sb.len() - 1];
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let rank = ba.len().max(bb.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(ba), pad(bb));
        let mut out_batch = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            if x != y && x != 1 && y != 1 {
                return Err(Error::shape("matmul", &sa, &sb));
            }
            out_batch.push(x.max(y));
        }
        let total: usize = out_batch.iter().product();
        let mut a_index = Vec::with_capacity(total);
        let mut b_index = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        for _ in 0..total {
            let (mut ai, mut bi) = (0, 0);
            for d in 0..rank {
                ai = ai * pa[d] + if pa[d] == 1 { 0 } else { idx[d] };
                bi = bi * pb[d] + if pb[d] == 1 { 0 } else { idx[d] };
            }
            a_index.push(ai);
            b_index.push(bi);
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out_batch[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let mut out_shape = out_batch;
        out_shape.extend_from_slice(&[m, n]);
        let mut data = vec![0.0; total * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for (c, (&ai, &bi)) in a_index.iter().zip(&b_index).enumerate() {
                mm(
                    &av[ai * m * p..(ai + 1) * m * p],
                    &bv[bi * p * n..(bi + 1) * p * n],
                    &mut data[c * m * n..(c + 1) * m * n],
                    m,
                    p,
                    n,
                );
            }
        }
        let v = Array::new(&out_shape, data)?;
        let plan = MatMulPlan {
            a_index,
            b_index,
            m,
            p,
            n,
        };
        Ok(self.push(Op::MatMul(plan), vec![a, b], v))
    }

    pub fn transpose_last2(&mut self, a: NodeId) -> Result<NodeId> {
        if self.shape(a).len() < 2 {
            return Err(Error::shape("transpose", self.shape(a), &[]));
        }
        let v = self.value(a).transpose_last2();
        Ok(self.push(Op::TransposeLast2, vec![a], v))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self
            .value(a)
            .reshape(shape)
            .map_err(|_| Error::shape("reshape", self.shape(a), shape))?;
        Ok(self.push(Op::Reshape, vec![a], v))
    }

    /// Softmax of `x / tau` along `axis`, stabilized by max subtraction.
    pub fn softmax(&mut self, a: NodeId, tau: f64, axis: usize) -> Result<NodeId> {
        if !(tau > 0.0) {
            return Err(Error::Param(format!("softmax temperature must be positive, got {tau}")));
        }
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Param(format!("axis {axis} invalid for shape {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * len * inner + k * inner + i;
                let mut max = f64::NEG_INFINITY;
                for k in 0..len {
                    max = max.max(x[at(k)] / tau);
                }
                let mut sum = 0.0;
                for k in 0..len {
                    let e = (x[at(k)] / tau - max).exp();
                    out[at(k)] = e;
                    sum += e;
                }
                for k in 0..len {
                    out[at(k)] /= sum;
                }
            }
        }
        let v = Array::new(&shape, out)?;
        Ok(self.push(Op::Softmax { tau, axis }, vec![a], v))
    }

    /// Valid dilated convolution along the last axis of `x [B,Cin,N,L]` with
    /// `w [Cout,Cin,1,k]` and optional `bias [Cout]`.
    pub fn conv1d_dilated(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        dilation: usize,
    ) -> Result<NodeId> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != 1 || sw[3] == 0 {
            return Err(Error::shape("conv1d_dilated", &sx, &sw));
        }
        if dilation == 0 {
            return Err(Error::Param("dilation must be positive".into()));
        }
        let (b, cin, n, l) = (sx[0], sx[1], sx[2], sx[3]);
        let (cout, k) = (sw[0], sw[3]);
        let required = dilation * (k - 1) + 1;
        if l < required {
            return Err(Error::ReceptiveField { got: l, required });
        }
        if let Some(bi) = bias {
            if self.shape(bi) != [cout] {
                return Err(Error::shape("conv1d_dilated bias", self.shape(bi), &[cout]));
            }
        }
        let lo = l - dilation * (k - 1);
        let mut out = vec![0.0; b * cout * n * lo];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = bias.map(|bi| self.value(bi).data());
            for bb in 0..b {
                for o in 0..cout {
                    let dst = &mut out[(bb * cout + o) * n * lo..(bb * cout + o + 1) * n * lo];
                    if let Some(bv) = bv {
                        dst.fill(bv[o]);
                    }
                    for c in 0..cin {
                        let src = &xv[(bb * cin + c) * n * l..(bb * cin + c + 1) * n * l];
                        for j in 0..k {
                            let wj = wv[(o * cin + c) * k + j];
                            if wj == 0.0 {
                                continue;
                            }
                            let shift = j * dilation;
                            for s in 0..n {
                                let row = &src[s * l + shift..s * l + shift + lo];
                                for (d, &xv) in dst[s * lo..(s + 1) * lo].iter_mut().zip(row) {
                                    *d += wj * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
        let v = Array::new(&[b, cout, n, lo], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(Op::Conv1d { dilation }, inputs, v))
    }

    /// Channelwise affine map (a 1×1 convolution): `x [B,Cin,...]`,
    /// `w [Cout,Cin]`, optional `bias [Cout]` → `[B,Cout,...]`.
    pub fn channel_affine(&mut self, x: NodeId, w: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() < 2 || sw.len() != 2 || sw[1] != sx[1] {
            return Err(Error::shape("channel_affine", &sx, &sw));
        }
        let (b, cin) = (sx[0], sx[1]);
        let cout = sw[0];
        let s: usize = sx[2..].iter().product();
        if let Some(bi) = bias {
            if self.shape(bi) != [cout] {
                return Err(Error::shape("channel_affine bias", self.shape(bi), &[cout]));
            }
        }
        let mut out = vec![0.0; b * cout * s];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for bb in 0..b {
                let dst = &mut out[bb * cout * s..(bb + 1) * cout * s];
                if let Some(bi) = bias {
                    let bv = self.nodes[bi.0].value.data();
                    for o in 0..cout {
                        dst[o * s..(o + 1) * s].fill(bv[o]);
                    }
                }
                mm(wv, &xv[bb * cin * s..(bb + 1) * cin * s], dst, cout, cin, s);
            }
        }
        let mut shape = sx.clone();
        shape[1] = cout;
        let v = Array::new(&shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(Op::ChannelAffine, inputs, v))
    }

    /// Batch normalization over every axis except the channel axis 1.
    ///
    /// Train mode normalizes by batch statistics and returns them; eval mode
    /// uses the supplied running mean and variance.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: NormMode,
        running: (&[f64], &[f64]),
        eps: f64,
    ) -> Result<(NodeId, Option<BatchStats>)> {
        if !(eps > 0.0) {
            return Err(Error::Param(format!("batch norm eps must be positive, got {eps}")));
        }
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 {
            return Err(Error::shape("batch_norm", &sx, &[]));
        }
        let c = sx[1];
        for id in [gamma, beta] {
            if self.shape(id) != [c] {
                return Err(Error::shape("batch_norm affine", self.shape(id), &[c]));
            }
        }
        if running.0.len() != c || running.1.len() != c {
            return Err(Error::shape("batch_norm running", &[running.0.len()], &[c]));
        }
        let b = sx[0];
        let s: usize = sx[2..].iter().product();
        let m = (b * s) as f64;
        let xv = self.value(x).data();
        let (mean, var_biased): (Vec<f64>, Vec<f64>) = match mode {
            NormMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut sum = 0.0;
                    for bb in 0..b {
                        sum += xv[(bb * c + ch) * s..(bb * c + ch + 1) * s].iter().sum::<f64>();
                    }
                    mean[ch] = sum / m;
                    let mut sq = 0.0;
                    for bb in 0..b {
                        for &v in &xv[(bb * c + ch) * s..(bb * c + ch + 1) * s] {
                            sq += (v - mean[ch]) * (v - mean[ch]);
                        }
                    }
                    var[ch] = sq / m;
                }
                (mean, var)
            }
            NormMode::Eval => (running.0.to_vec(), running.1.to_vec()),
        };
        let inv_std: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for bb in 0..b {
            for ch in 0..c {
                let range = (bb * c + ch) * s..(bb * c + ch + 1) * s;
                for i in range {
                    let h = (xv[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gv[ch] * h + bv[ch];
                }
            }
        }
        let stats = (mode == NormMode::Train).then(|| {
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            BatchStats {
                mean: mean.clone(),
                var: var_biased.iter().map(|v| v * unbias).collect(),
            }
        });
        let v = Array::new(&sx, out)?;
        let op = Op::BatchNorm {
            xhat: Array::new(&sx, xhat)?,
            inv_std,
            train: mode == NormMode::Train,
        };
        Ok((self.push(op, vec![x, gamma, beta], v), stats))
    }

    /// Mean along `axis`, removing it.
    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Param(format!("axis {axis} invalid for shape {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let src = &x[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        for v in &mut out {
            *v /= len as f64;
        }
        let mut new_shape = shape.clone();
        new_shape.remove(axis);
        let v = Array::new(&new_shape, out)?;
        Ok(self.push(Op::MeanAxis { axis }, vec![a], v))
    }

    /// Contiguous range `[start, start+len)` along `axis`.
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Param(format!(
                "slice {start}..{} on axis {axis} out of range for {shape:?}",
                start + len
            )));
        }
        let (outer, extent, inner) = axis_split(&shape, axis);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x[(o * extent + start) * inner..(o * extent + start + len) * inner]);
        }
        let mut new_shape = shape.clone();
        new_shape[axis] = len;
        let v = Array::new(&new_shape, out)?;
        Ok(self.push(Op::Slice { axis, start }, vec![a], v))
    }

    /// Keeps the trailing `len` entries of the last axis.
    pub fn take_last(&mut self, a: NodeId, len: usize) -> Result<NodeId> {
        let shape = self.shape(a);
        let axis = shape.len() - 1;
        let extent = shape[axis];
        if len > extent {
            return Err(Error::Param(format!("cannot keep {len} of {extent} entries")));
        }
        if len == extent {
            return Ok(a);
        }
        self.slice(a, axis, extent - len, len)
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Param("concat of zero inputs".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Param(format!("axis {axis} invalid for shape {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let ext = self.shape(p)[axis];
                out.extend_from_slice(&self.value(p).data()[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let v = Array::new(&shape, out)?;
        Ok(self.push(Op::Concat { axis }, parts.to_vec(), v))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Array::scalar(self.value(a).sum());
        self.push(Op::SumAll, vec![a], v)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = Array::scalar(self.value(a).mean());
        self.push(Op::MeanAll, vec![a], v)
    }

    /// Reverse sweep from a scalar `loss`. Every node that requires a gradient
    /// gets a zero-initialized accumulator; contributions are added, so a
    /// node consumed twice receives the sum of both path gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.grad = node
                .requires_grad
                .then(|| Array::zeros(node.value.shape()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Array::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let g = self.nodes[i].grad.take().expect("grad allocated");
            let contributions = self.local_backward(i, &g)?;
            self.nodes[i].grad = Some(g);
            for (input, delta) in contributions {
                if let Some(acc) = self.nodes[input.0].grad.as_mut() {
                    acc.add_assign(&delta);
                }
            }
        }
        Ok(())
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn local_backward(&self, i: usize, g: &Array) -> Result<Vec<(NodeId, Array)>> {
        let node = &self.nodes[i];
        let ins = &node.inputs;
        let val = |k: usize| &self.nodes[ins[k].0].value;
        let mut out = Vec::with_capacity(ins.len());
        match &node.op {
            Op::Leaf => {}
            Op::Add => {
                for &id in ins {
                    out.push((id, g.clone()));
                }
            }
            Op::Sub => {
                out.push((ins[0], g.clone()));
                out.push((ins[1], g.map(|v| -v)));
            }
            Op::Mul => {
                if self.wants(ins[0]) {
                    out.push((ins[0], g.zip_map(val(1), |a, b| a * b)?));
                }
                if self.wants(ins[1]) {
                    out.push((ins[1], g.zip_map(val(0), |a, b| a * b)?));
                }
            }
            Op::AddBroadcast => {
                out.push((ins[0], g.clone()));
                if self.wants(ins[1]) {
                    let mut db = Array::zeros(val(1).shape());
                    let tile = db.len().max(1);
                    for chunk in g.data().chunks(tile) {
                        for (d, &v) in db.data_mut().iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                    out.push((ins[1], db));
                }
            }
            Op::MulBroadcast => {
                let (a, b) = (val(0), val(1));
                let tile = b.len().max(1);
                if self.wants(ins[0]) {
                    let mut da = g.clone();
                    for chunk in da.data_mut().chunks_mut(tile) {
                        for (d, &bv) in chunk.iter_mut().zip(b.data()) {
                            *d *= bv;
                        }
                    }
                    out.push((ins[0], da));
                }
                if self.wants(ins[1]) {
                    let mut db = Array::zeros(b.shape());
                    for (gc, ac) in g.data().chunks(tile).zip(a.data().chunks(tile)) {
                        for ((d, &gv), &av) in db.data_mut().iter_mut().zip(gc).zip(ac) {
                            *d += gv * av;
                        }
                    }
                    out.push((ins[1], db));
                }
            }
            Op::ScalarAffine { mul } => out.push((ins[0], g.map(|v| v * mul))),
            Op::Abs => {
                let d = g.zip_map(val(0), |gv, x| {
                    if x > 0.0 {
                        gv
                    } else if x < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                })?;
                out.push((ins[0], d));
            }
            Op::Activation(kind) => {
                let x = val(0).data();
                let y = node.value.data();
                let data = g
                    .data()
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&gv, (&xv, &yv))| gv * kind.derivative(xv, yv))
                    .collect();
                out.push((ins[0], Array::new(g.shape(), data)?));
            }
            Op::MatMul(plan) => {
                let (a, b) = (val(0), val(1));
                let (m, p, n) = (plan.m, plan.p, plan.n);
                let gd = g.data();
                if self.wants(ins[0]) {
                    let mut da = Array::zeros(a.shape());
                    for (c, (&ai, &bi)) in plan.a_index.iter().zip(&plan.b_index).enumerate() {
                        mm_a_bt(
                            &gd[c * m * n..(c + 1) * m * n],
                            &b.data()[bi * p * n..(bi + 1) * p * n],
                            &mut da.data_mut()[ai * m * p..(ai + 1) * m * p],
                            m,
                            p,
                            n,
                        );
                    }
                    out.push((ins[0], da));
                }
                if self.wants(ins[1]) {
                    let mut db = Array::zeros(b.shape());
                    for (c, (&ai, &bi)) in plan.a_index.iter().zip(&plan.b_index).enumerate() {
                        mm_at_b(
                            &a.data()[ai * m * p..(ai + 1) * m * p],
                            &gd[c * m * n..(c + 1) * m * n],
                            &mut db.data_mut()[bi * p * n..(bi + 1) * p * n],
                            m,
                            p,
                            n,
                        );
                    }
                    out.push((ins[1], db));
                }
            }
            Op::TransposeLast2 => out.push((ins[0], g.transpose_last2())),
            Op::Reshape => out.push((ins[0], g.reshape(val(0).shape())?)),
            Op::Softmax { tau, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                let gd = g.data();
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * len * inner + k * inner + i;
                        let dot: f64 = (0..len).map(|k| gd[at(k)] * y[at(k)]).sum();
                        for k in 0..len {
                            dx[at(k)] = y[at(k)] * (gd[at(k)] - dot) / tau;
                        }
                    }
                }
                out.push((ins[0], Array::new(g.shape(), dx)?));
            }
            Op::Conv1d { dilation } => {
                let (x, w) = (val(0), val(1));
                let (sx, sw) = (x.shape(), w.shape());
                let (b, cin, n, l) = (sx[0], sx[1], sx[2], sx[3]);
                let (cout, k) = (sw[0], sw[3]);
                let lo = g.shape()[3];
                let gd = g.data();
                let (want_x, want_w) = (self.wants(ins[0]), self.wants(ins[1]));
                let mut dx = Array::zeros(sx);
                let mut dw = Array::zeros(sw);
                for bb in 0..b {
                    for o in 0..cout {
                        let gs = &gd[(bb * cout + o) * n * lo..(bb * cout + o + 1) * n * lo];
                        for c in 0..cin {
                            let xoff = (bb * cin + c) * n * l;
                            for j in 0..k {
                                let shift = j * dilation;
                                let widx = (o * cin + c) * k + j;
                                let wj = w.data()[widx];
                                let mut acc = 0.0;
                                for s in 0..n {
                                    let grow = &gs[s * lo..(s + 1) * lo];
                                    let base = xoff + s * l + shift;
                                    if want_w {
                                        let xrow = &x.data()[base..base + lo];
                                        acc += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                                    }
                                    if want_x && wj != 0.0 {
                                        let dxrow = &mut dx.data_mut()[base..base + lo];
                                        for (d, &gv) in dxrow.iter_mut().zip(grow) {
                                            *d += wj * gv;
                                        }
                                    }
                                }
                                dw.data_mut()[widx] += acc;
                            }
                        }
                    }
                }
                if want_x {
                    out.push((ins[0], dx));
                }
                if want_w {
                    out.push((ins[1], dw));
                }
                if ins.len() == 3 && self.wants(ins[2]) {
                    out.push((ins[2], channel_sums(g)));
                }
            }
            Op::ChannelAffine => {
                let (x, w) = (val(0), val(1));
                let (b, cin) = (x.shape()[0], x.shape()[1]);
                let cout = w.shape()[0];
                let s: usize = x.shape()[2..].iter().product();
                let gd = g.data();
                if self.wants(ins[0]) {
                    let mut dx = Array::zeros(x.shape());
                    for bb in 0..b {
                        mm_at_b(
                            w.data(),
                            &gd[bb * cout * s..(bb + 1) * cout * s],
                            &mut dx.data_mut()[bb * cin * s..(bb + 1) * cin * s],
                            cout,
                            cin,
                            s,
                        );
                    }
                    out.push((ins[0], dx));
                }
                if self.wants(ins[1]) {
                    let mut dw = Array::zeros(w.shape());
                    for bb in 0..b {
                        mm_a_bt(
                            &gd[bb * cout * s..(bb + 1) * cout * s],
                            &x.data()[bb * cin * s..(bb + 1) * cin * s],
                            dw.data_mut(),
                            cout,
                            cin,
                            s,
                        );
                    }
                    out.push((ins[1], dw));
                }
                if ins.len() == 3 && self.wants(ins[2]) {
                    out.push((ins[2], channel_sums(g)));
                }
            }
            Op::BatchNorm {
                xhat,
                inv_std,
                train,
            } => {
                let gamma = val(1).data();
                let shape = g.shape();
                let (b, c) = (shape[0], shape[1]);
                let s: usize = shape[2..].iter().product();
                let m = (b * s) as f64;
                let (gd, hd) = (g.data(), xhat.data());
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for bb in 0..b {
                    for ch in 0..c {
                        for i in (bb * c + ch) * s..(bb * c + ch + 1) * s {
                            dgamma[ch] += gd[i] * hd[i];
                            dbeta[ch] += gd[i];
                        }
                    }
                }
                if self.wants(ins[0]) {
                    let mut dx = vec![0.0; gd.len()];
                    for bb in 0..b {
                        for ch in 0..c {
                            let scale = gamma[ch] * inv_std[ch];
                            for i in (bb * c + ch) * s..(bb * c + ch + 1) * s {
                                dx[i] = if *train {
                                    scale / m * (m * gd[i] - dbeta[ch] - hd[i] * dgamma[ch])
                                } else {
                                    scale * gd[i]
                                };
                            }
                        }
                    }
                    out.push((ins[0], Array::new(shape, dx)?));
                }
                out.push((ins[1], Array::new(&[c], dgamma)?));
                out.push((ins[2], Array::new(&[c], dbeta)?));
            }
            Op::MeanAxis { axis } => {
                let xs = val(0).shape();
                let (outer, len, inner) = axis_split(xs, *axis);
                let mut dx = Vec::with_capacity(outer * len * inner);
                let gd = g.data();
                for o in 0..outer {
                    let src = &gd[o * inner..(o + 1) * inner];
                    for _ in 0..len {
                        dx.extend(src.iter().map(|v| v / len as f64));
                    }
                }
                out.push((ins[0], Array::new(xs, dx)?));
            }
            Op::Slice { axis, start } => {
                let xs = val(0).shape();
                let (outer, extent, inner) = axis_split(xs, *axis);
                let len = g.shape()[*axis];
                let mut dx = Array::zeros(xs);
                let gd = g.data();
                for o in 0..outer {
                    let dst = (o * extent + start) * inner;
                    dx.data_mut()[dst..dst + len * inner]
                        .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                out.push((ins[0], dx));
            }
            Op::Concat { axis } => {
                let (outer, total, inner) = axis_split(g.shape(), *axis);
                let gd = g.data();
                let mut offset = 0;
                for &p in ins {
                    let ps = self.nodes[p.0].value.shape();
                    let ext = ps[*axis];
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(outer * ext * inner);
                        for o in 0..outer {
                            let from = (o * total + offset) * inner;
                            dp.extend_from_slice(&gd[from..from + ext * inner]);
                        }
                        out.push((p, Array::new(ps, dp)?));
                    }
                    offset += ext;
                }
            }
            Op::SumAll => out.push((ins[0], Array::full(val(0).shape(), g.item()))),
            Op::MeanAll => {
                let x = val(0);
                out.push((ins[0], Array::full(x.shape(), g.item() / x.len() as f64)));
            }
        }
        Ok(out)
    }
}

/// Sum over every axis except axis 1.
fn channel_sums(g: &Array) -> Array {
    let shape = g.shape();
    let (b, c) = (shape[0], shape[1]);
    let s: usize = shape[2..].iter().product();
    let mut out = vec![0.0; c];
    for bb in 0..b {
        for (ch, o) in out.iter_mut().enumerate() {
            *o += g.data()[(bb * c + ch) * s..(bb * c + ch + 1) * s].iter().sum::<f64>();
        }
    }
    Array::new(&[c], out).expect("channel sums")
}
