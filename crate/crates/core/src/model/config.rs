use serde::{Deserialize, Serialize};

use crate::data::{HORIZON, INPUT_LEN};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden channels D.
    pub d_hidden: usize,
    /// Skip and decoder width.
    pub d_skip: usize,
    pub n_layers: usize,
    pub dilations: Vec<usize>,
    pub kernel_size: usize,
    pub k_hops: usize,
    pub n_heads: usize,
    /// Softmax temperature of the attention.
    pub tau: f64,
    pub d_embed: usize,
    pub use_node_embeddings: bool,
    /// Off replaces the attention with the static transition matrices.
    pub use_sgt: bool,
    /// Sends non-edges of the physical graph to −∞ before the softmax.
    pub mask_nonedges: bool,
    pub input_len: usize,
    pub horizon: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_hidden: 40,
            d_skip: 80,
            n_layers: 8,
            dilations: vec![1, 2, 1, 2, 1, 2, 1, 2],
            kernel_size: 2,
            k_hops: 2,
            n_heads: 4,
            tau: 1.0,
            d_embed: 10,
            use_node_embeddings: true,
            use_sgt: true,
            mask_nonedges: false,
            input_len: INPUT_LEN,
            horizon: HORIZON,
        }
    }
}

/// Named ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    NoNodeEmbeddings,
    SingleHead,
    GcnWithoutSgt,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "none" => Ok(Ablation::Full),
            "no-node-embeddings" => Ok(Ablation::NoNodeEmbeddings),
            "single-head" => Ok(Ablation::SingleHead),
            "gcn-without-sgt" | "gcn" => Ok(Ablation::GcnWithoutSgt),
            other => Err(Error::Config(format!(
                "unknown ablation {other:?}; expected full, no-node-embeddings, single-head or gcn-without-sgt"
            ))),
        }
    }
}

impl ModelConfig {
    /// `1 + Σ dilation·(kernel − 1)`
    pub fn receptive_field(&self) -> usize {
        1 + self.dilations.iter().map(|d| d * (self.kernel_size - 1)).sum::<usize>()
    }

    /// Length the input is left-padded to before the first layer.
    pub fn padded_len(&self) -> usize {
        self.input_len.max(self.receptive_field())
    }

    /// Temporal length after the last layer.
    pub fn output_len(&self) -> usize {
        self.padded_len() + 1 - self.receptive_field()
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        match ablation {
            Ablation::Full => {}
            Ablation::NoNodeEmbeddings => self.use_node_embeddings = false,
            Ablation::SingleHead => self.n_heads = 1,
            Ablation::GcnWithoutSgt => self.use_sgt = false,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_hidden", self.d_hidden),
            ("d_skip", self.d_skip),
            ("n_layers", self.n_layers),
            ("kernel_size", self.kernel_size),
            ("n_heads", self.n_heads),
            ("d_embed", self.d_embed),
            ("input_len", self.input_len),
            ("horizon", self.horizon),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.dilations.len() != self.n_layers {
            return Err(Error::Config(format!(
                "model.dilations lists {} entries for {} layers",
                self.dilations.len(),
                self.n_layers
            )));
        }
        if self.dilations.contains(&0) {
            return Err(Error::Config("model.dilations must be positive".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("model.tau must be positive, got {}", self.tau)));
        }
        let rf = self.receptive_field();
        if rf < self.input_len {
            let short = self.input_len - rf;
            return Err(Error::Config(format!(
                "receptive field {rf} is shorter than the input length {}: the dilations must sum to at least {} \
                 with kernel size {} (add {short} more)",
                self.input_len,
                (self.input_len - 1).div_ceil(self.kernel_size - 1).max(1),
                self.kernel_size,
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_the_window() {
        let c = ModelConfig::default();
        assert_eq!(c.receptive_field(), 13);
        assert_eq!(c.padded_len(), 13);
        assert_eq!(c.output_len(), 1);
        c.validate().unwrap();
    }

    #[test]
    fn short_receptive_field_is_a_config_error() {
        let c = ModelConfig {
            n_layers: 2,
            dilations: vec![1, 2],
            ..Default::default()
        };
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("receptive field 4"), "{err}");
    }

    #[test]
    fn ablations() {
        let c = ModelConfig::default();
        assert!(!c.clone().with_ablation(Ablation::NoNodeEmbeddings).use_node_embeddings);
        assert_eq!(c.clone().with_ablation(Ablation::SingleHead).n_heads, 1);
        assert!(!c.with_ablation(Ablation::GcnWithoutSgt).use_sgt);
        assert_eq!("no-node-embeddings".parse::<Ablation>().unwrap(), Ablation::NoNodeEmbeddings);
    }
}
