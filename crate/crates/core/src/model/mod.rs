//! The forecasting network: initial embedding, stacked gated temporal
//! convolutions each followed by an attention-weighted graph block, summed
//! skip projections and a per-node decoder.

mod config;
mod forward;
mod layers;
mod params;

pub use config::{Ablation, ModelConfig};
pub use forward::{forward, predict, ForwardOutput, GraphInputs, LayerAlphas};
pub use layers::{
    adaptive_adjacency, initial_embed, mix_hops, propagate, sgt_attention, sgt_block, wavenet_block, Affine,
    AttentionLeaves, EmbedLeaves, HeadLeaves, SgtOutput, SpatialContext, SpatialLeaves, TemporalLeaves,
};
pub use params::{hop_channels, init_model, param_count, param_shapes, Bound, ModelParams, ParamStore};
