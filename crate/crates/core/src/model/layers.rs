//! Building blocks of the network, each recorded onto a [`Graph`].

use crate::autodiff::{Activation, Graph, NodeId};
use crate::error::{Error, Result};

/// Weight `[Cout, Cin]` and bias `[Cout]` leaves of a channelwise affine map.
#[derive(Clone, Copy, Debug)]
pub struct Affine {
    pub w: NodeId,
    pub b: NodeId,
}

impl Affine {
    pub fn apply(self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        g.channel_affine(x, self.w, Some(self.b))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EmbedLeaves {
    pub metric: Affine,
    pub tod: Affine,
}

/// Filter and gate kernels `[D, D, 1, k]` with biases `[D]`.
#[derive(Clone, Copy, Debug)]
pub struct TemporalLeaves {
    pub filter: Affine,
    pub gate: Affine,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadLeaves {
    pub q: Affine,
    pub k: Affine,
}

/// Attention projections of one layer. `proj` maps pooled features to the
/// embedding width and is shared by the heads.
#[derive(Clone, Debug)]
pub struct AttentionLeaves {
    pub proj: Affine,
    pub heads: Vec<HeadLeaves>,
}

/// Sums the metric and time-of-day projections, each `[B,1,N,L] → [B,D,N,L]`.
pub fn initial_embed(g: &mut Graph, x_metric: NodeId, x_tod: NodeId, p: &EmbedLeaves) -> Result<NodeId> {
    if g.shape(x_metric) != g.shape(x_tod) {
        return Err(Error::shape("initial_embed", g.shape(x_metric), g.shape(x_tod)));
    }
    let m = p.metric.apply(g, x_metric)?;
    let t = p.tod.apply(g, x_tod)?;
    g.add(m, t)
}

/// `tanh(conv_f(h)) ⊙ sigmoid(conv_g(h))`, shortening the time axis by
/// `dilation·(k−1)`.
pub fn wavenet_block(g: &mut Graph, h: NodeId, p: &TemporalLeaves, dilation: usize) -> Result<NodeId> {
    let f = g.conv1d_dilated(h, p.filter.w, Some(p.filter.b), dilation)?;
    let f = g.activation(f, Activation::Tanh);
    let s = g.conv1d_dilated(h, p.gate.w, Some(p.gate.b), dilation)?;
    let s = g.activation(s, Activation::Sigmoid);
    g.mul(f, s)
}

/// Row softmax of `ReLU(e1·e2ᵀ)`.
pub fn adaptive_adjacency(g: &mut Graph, e1: NodeId, e2: NodeId) -> Result<NodeId> {
    let e2t = g.transpose_last2(e2)?;
    let s = g.matmul(e1, e2t)?;
    let s = g.activation(s, Activation::Relu);
    g.softmax(s, 1.0, 1)
}

/// Attention over a base matrix `a [N,N]`, one `[B,N,N]` map per head.
///
/// Keys come from `proj(x̄) + e_src` and queries from `proj(x̄) + e_tgt`,
/// where `x̄` is `x [B,D,N,L]` averaged over time. Scores `a ⊙ (Q·Kᵀ)` go
/// through a sigmoid, then a temperature softmax along each row. `mask`, when
/// given, is added after the sigmoid (0 on kept entries, −∞ elsewhere).
#[allow(clippy::too_many_arguments)]
pub fn sgt_attention(
    g: &mut Graph,
    a: NodeId,
    x: NodeId,
    e_src: Option<NodeId>,
    e_tgt: Option<NodeId>,
    p: &AttentionLeaves,
    tau: f64,
    mask: Option<NodeId>,
) -> Result<Vec<NodeId>> {
    let n = g.shape(x)[2];
    if g.shape(a) != [n, n] {
        return Err(Error::shape("sgt_attention", g.shape(a), &[n, n]));
    }
    let pooled = g.mean_axis(x, 3)?;
    let u = p.proj.apply(g, pooled)?;
    let with = |g: &mut Graph, e: Option<NodeId>| -> Result<NodeId> {
        match e {
            Some(e) => {
                let et = g.transpose_last2(e)?;
                g.add_broadcast(u, et)
            }
            None => Ok(u),
        }
    };
    let src = with(g, e_src)?;
    let tgt = with(g, e_tgt)?;
    let mut alphas = Vec::with_capacity(p.heads.len());
    for head in &p.heads {
        let k = head.k.apply(g, src)?;
        let q = head.q.apply(g, tgt)?;
        let qt = g.transpose_last2(q)?;
        let scores = g.matmul(qt, k)?;
        let scores = g.mul_broadcast(scores, a)?;
        let mut s = g.activation(scores, Activation::Sigmoid);
        if let Some(m) = mask {
            s = g.add_broadcast(s, m)?;
        }
        alphas.push(g.softmax(s, tau, 2)?);
    }
    Ok(alphas)
}

/// One propagation step `x·α` along the sensor axis of `x [B,C,N,L]`:
/// node `j` receives `Σ_i x_i α_ij`. `alpha` is `[N,N]` or `[B,N,N]`.
pub fn propagate(g: &mut Graph, alpha: NodeId, x: NodeId) -> Result<NodeId> {
    let sa = g.shape(alpha).to_vec();
    let a4 = match sa.len() {
        2 => g.reshape(alpha, &[1, 1, sa[0], sa[1]])?,
        3 => g.reshape(alpha, &[sa[0], 1, sa[1], sa[2]])?,
        _ => return Err(Error::shape("propagate", &sa, g.shape(x))),
    };
    let at = g.transpose_last2(a4)?;
    g.matmul(at, x)
}

/// Concatenates `x` with `k` successive propagations through every alpha,
/// then mixes channels back with `agg2(mish(agg1(·)))`.
pub fn mix_hops(
    g: &mut Graph,
    x: NodeId,
    alphas: &[NodeId],
    k_hops: usize,
    agg1: Affine,
    agg2: Affine,
) -> Result<NodeId> {
    let mut parts = vec![x];
    for &alpha in alphas {
        let mut cur = x;
        for _ in 0..k_hops {
            cur = propagate(g, alpha, cur)?;
            parts.push(cur);
        }
    }
    let cat = if parts.len() == 1 { x } else { g.concat(&parts, 1)? };
    let y = agg1.apply(g, cat)?;
    let y = g.activation(y, Activation::Mish);
    agg2.apply(g, y)
}

/// Graph inputs shared by every spatial block of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct SpatialContext {
    pub a_r: NodeId,
    /// Row-normalized `a_r`, used when attention is off.
    pub a_p: NodeId,
    /// Absent without node embeddings.
    pub a_adp: Option<NodeId>,
    pub e1: Option<NodeId>,
    pub e2: Option<NodeId>,
    pub mask: Option<NodeId>,
}

#[derive(Clone, Debug)]
pub struct SpatialLeaves {
    /// `None` runs the static transition matrices instead of attention.
    pub attention: Option<AttentionLeaves>,
    pub agg1: Affine,
    pub agg2: Affine,
}

pub struct SgtOutput {
    pub out: NodeId,
    /// Per-head maps over the physical graph, then over the adaptive graph.
    pub alphas_r: Vec<NodeId>,
    pub alphas_adp: Vec<NodeId>,
}

/// Spatial block over `x [B,D,N,L]`, returning `[B,D,N,L]`.
pub fn sgt_block(
    g: &mut Graph,
    x: NodeId,
    ctx: &SpatialContext,
    p: &SpatialLeaves,
    k_hops: usize,
    tau: f64,
) -> Result<SgtOutput> {
    let (alphas_r, alphas_adp) = match &p.attention {
        Some(att) => (
            sgt_attention(g, ctx.a_r, x, ctx.e1, ctx.e2, att, tau, ctx.mask)?,
            match ctx.a_adp {
                Some(a) => sgt_attention(g, a, x, ctx.e1, ctx.e2, att, tau, None)?,
                None => Vec::new(),
            },
        ),
        None => (vec![ctx.a_p], ctx.a_adp.into_iter().collect()),
    };
    let all: Vec<NodeId> = alphas_r.iter().chain(&alphas_adp).copied().collect();
    let out = mix_hops(g, x, &all, k_hops, p.agg1, p.agg2)?;
    Ok(SgtOutput {
        out,
        alphas_r,
        alphas_adp,
    })
}
