use super::layers::{adaptive_adjacency, initial_embed, sgt_block, wavenet_block, SpatialContext};
use super::params::{Bound, ModelParams};
use crate::array::Array;
use crate::autodiff::{Activation, BatchStats, Graph, NodeId, NormMode};
use crate::data::row_normalize;
use crate::error::{Error, Result};

/// Fixed graph matrices fed to every forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphInputs {
    pub a_r: Array,
    pub a_p: Array,
    /// 0 on edges of `a_r`, −∞ elsewhere.
    pub mask: Array,
}

impl GraphInputs {
    pub fn new(a_r: &Array) -> Self {
        let mask = a_r.map(|v| if v != 0.0 { 0.0 } else { f64::NEG_INFINITY });
        Self {
            a_r: a_r.clone(),
            a_p: row_normalize(a_r),
            mask,
        }
    }

    pub fn n(&self) -> usize {
        self.a_r.shape()[0]
    }
}

/// Attention maps of one layer.
#[derive(Clone, Debug)]
pub struct LayerAlphas {
    pub physical: Vec<NodeId>,
    pub adaptive: Vec<NodeId>,
}

pub struct ForwardOutput {
    /// `[B, F, N]` in scaled units.
    pub output: NodeId,
    /// Per-layer batch statistics in train mode, empty in eval mode.
    pub bn_stats: Vec<BatchStats>,
    pub a_adp: Option<NodeId>,
    pub alphas: Vec<LayerAlphas>,
}

/// Runs the network on `x [B, 2, N, L]` (scaled metric, scaled time of day).
pub fn forward(
    g: &mut Graph,
    params: &ModelParams,
    bound: &Bound,
    graph: &GraphInputs,
    x: NodeId,
    mode: NormMode,
) -> Result<ForwardOutput> {
    let cfg = &params.config;
    let n = params.n_sensors;
    let sx = g.shape(x).to_vec();
    if sx.len() != 4 || sx[1] != 2 || sx[2] != n || sx[3] != cfg.input_len {
        return Err(Error::shape("forward", &sx, &[0, 2, n, cfg.input_len]));
    }
    if graph.n() != n {
        return Err(Error::shape("forward adjacency", graph.a_r.shape(), &[n, n]));
    }
    let b = sx[0];
    let pad = cfg.padded_len() - cfg.input_len;
    let x = if pad > 0 {
        let zeros = g.constant(Array::zeros(&[b, 2, n, pad]));
        g.concat(&[zeros, x], 3)?
    } else {
        x
    };
    let metric = g.slice(x, 1, 0, 1)?;
    let tod = g.slice(x, 1, 1, 1)?;
    let mut h = initial_embed(g, metric, tod, &bound.embed()?)?;

    let (e1, e2, a_adp) = if cfg.use_node_embeddings {
        let e1 = bound.id("node.e1")?;
        let e2 = bound.id("node.e2")?;
        (Some(e1), Some(e2), Some(adaptive_adjacency(g, e1, e2)?))
    } else {
        (None, None, None)
    };
    let ctx = SpatialContext {
        a_r: g.constant(graph.a_r.clone()),
        a_p: g.constant(graph.a_p.clone()),
        a_adp,
        e1,
        e2,
        mask: cfg.mask_nonedges.then(|| g.constant(graph.mask.clone())),
    };

    let out_len = cfg.output_len();
    let mut skip: Option<NodeId> = None;
    let mut bn_stats = Vec::new();
    let mut alphas = Vec::with_capacity(cfg.n_layers);
    for (l, &dilation) in cfg.dilations.iter().enumerate() {
        let residual = h;
        let t = wavenet_block(g, h, &bound.temporal(l)?, dilation)?;
        let s = sgt_block(g, t, &ctx, &bound.spatial(l, cfg)?, cfg.k_hops, cfg.tau)?;
        alphas.push(LayerAlphas {
            physical: s.alphas_r,
            adaptive: s.alphas_adp,
        });
        let state = &params.batch_norm[l];
        let (normed, stats) = g.batch_norm(
            s.out,
            bound.id(&format!("layer{l}.bn.gamma"))?,
            bound.id(&format!("layer{l}.bn.beta"))?,
            mode,
            (&state.running_mean, &state.running_var),
            state.eps,
        )?;
        bn_stats.extend(stats);
        let len = g.shape(normed)[3];
        let trimmed = g.take_last(residual, len)?;
        h = g.add(normed, trimmed)?;

        let both = g.concat(&[t, normed], 1)?;
        let tail = g.take_last(both, out_len)?;
        let proj = bound.affine(&format!("layer{l}.skip"))?.apply(g, tail)?;
        skip = Some(match skip {
            Some(acc) => g.add(acc, proj)?,
            None => proj,
        });
    }

    let z = skip.ok_or_else(|| Error::Config("model has no layers".into()))?;
    let z = g.take_last(z, 1)?;
    let z = g.activation(z, Activation::Mish);
    let z = bound.affine("decoder1")?.apply(g, z)?;
    let z = g.activation(z, Activation::Mish);
    let z = bound.affine("decoder2")?.apply(g, z)?;
    let output = g.reshape(z, &[b, cfg.horizon, n])?;
    Ok(ForwardOutput {
        output,
        bn_stats,
        a_adp,
        alphas,
    })
}

/// Eval-mode prediction for a batch `[B, 2, N, L]`, returning `[B, F, N]` in
/// scaled units.
pub fn predict(params: &ModelParams, graph: &GraphInputs, x: &Array) -> Result<Array> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let xi = g.constant(x.clone());
    let out = forward(&mut g, params, &bound, graph, xi, NormMode::Eval)?;
    Ok(g.value(out.output).clone())
}
