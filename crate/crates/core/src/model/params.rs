use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::layers::{Affine, AttentionLeaves, EmbedLeaves, HeadLeaves, SpatialLeaves, TemporalLeaves};
use crate::array::Array;
use crate::autodiff::{BatchNormState, Graph, NodeId};
use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Named trainable arrays in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Array>,
}

impl ParamStore {
    pub fn insert(&mut self, name: impl Into<String>, value: Array) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Param(format!("parameter {name} registered twice")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Param(format!("no parameter named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.params.values().map(Array::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub n_sensors: usize,
    pub store: ParamStore,
    /// One per layer.
    pub batch_norm: Vec<BatchNormState>,
}

/// Graph leaves for every parameter, by name.
#[derive(Clone, Debug)]
pub struct Bound {
    pub ids: IndexMap<String, NodeId>,
}

impl Bound {
    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::Param(format!("no parameter named {name}")))
    }

    pub fn affine(&self, prefix: &str) -> Result<Affine> {
        Ok(Affine {
            w: self.id(&format!("{prefix}.w"))?,
            b: self.id(&format!("{prefix}.b"))?,
        })
    }

    pub fn embed(&self) -> Result<EmbedLeaves> {
        Ok(EmbedLeaves {
            metric: self.affine("embed.metric")?,
            tod: self.affine("embed.tod")?,
        })
    }

    pub fn temporal(&self, layer: usize) -> Result<TemporalLeaves> {
        Ok(TemporalLeaves {
            filter: self.affine(&format!("layer{layer}.filter"))?,
            gate: self.affine(&format!("layer{layer}.gate"))?,
        })
    }

    pub fn spatial(&self, layer: usize, cfg: &ModelConfig) -> Result<SpatialLeaves> {
        let attention = if cfg.use_sgt {
            let heads = (0..cfg.n_heads)
                .map(|h| {
                    Ok(HeadLeaves {
                        q: self.affine(&format!("layer{layer}.head{h}.q"))?,
                        k: self.affine(&format!("layer{layer}.head{h}.k"))?,
                    })
                })
                .collect::<Result<_>>()?;
            Some(AttentionLeaves {
                proj: self.affine(&format!("layer{layer}.proj"))?,
                heads,
            })
        } else {
            None
        };
        Ok(SpatialLeaves {
            attention,
            agg1: self.affine(&format!("layer{layer}.agg1"))?,
            agg2: self.affine(&format!("layer{layer}.agg2"))?,
        })
    }
}

/// Channels entering the hop mixer: the input plus `K_hops` propagations per
/// branch and head.
pub fn hop_channels(cfg: &ModelConfig) -> usize {
    let branches = if cfg.use_node_embeddings { 2 } else { 1 };
    let maps = if cfg.use_sgt { branches * cfg.n_heads } else { branches };
    cfg.d_hidden * (1 + maps * cfg.k_hops)
}

/// Every parameter name with its shape, in registration order.
pub fn param_shapes(cfg: &ModelConfig, n: usize) -> Vec<(String, Vec<usize>)> {
    let (d, ds, de, k) = (cfg.d_hidden, cfg.d_skip, cfg.d_embed, cfg.kernel_size);
    let mut out = Vec::new();
    let affine = |out: &mut Vec<(String, Vec<usize>)>, name: String, o: usize, i: usize| {
        out.push((format!("{name}.w"), vec![o, i]));
        out.push((format!("{name}.b"), vec![o]));
    };
    affine(&mut out, "embed.metric".into(), d, 1);
    affine(&mut out, "embed.tod".into(), d, 1);
    let cat = hop_channels(cfg);
    for l in 0..cfg.n_layers {
        for part in ["filter", "gate"] {
            out.push((format!("layer{l}.{part}.w"), vec![d, d, 1, k]));
            out.push((format!("layer{l}.{part}.b"), vec![d]));
        }
        if cfg.use_sgt {
            affine(&mut out, format!("layer{l}.proj"), de, d);
            for h in 0..cfg.n_heads {
                affine(&mut out, format!("layer{l}.head{h}.q"), de, de);
                affine(&mut out, format!("layer{l}.head{h}.k"), de, de);
            }
        }
        affine(&mut out, format!("layer{l}.agg1"), d, cat);
        affine(&mut out, format!("layer{l}.agg2"), d, d);
        out.push((format!("layer{l}.bn.gamma"), vec![d]));
        out.push((format!("layer{l}.bn.beta"), vec![d]));
        affine(&mut out, format!("layer{l}.skip"), ds, 2 * d);
    }
    affine(&mut out, "decoder1".into(), ds, ds);
    affine(&mut out, "decoder2".into(), cfg.horizon, ds);
    if cfg.use_node_embeddings {
        out.push(("node.e1".into(), vec![n, de]));
        out.push(("node.e2".into(), vec![n, de]));
    }
    out
}

/// Trainable scalar count for `(cfg, n)`.
pub fn param_count(cfg: &ModelConfig, n: usize) -> usize {
    param_shapes(cfg, n).iter().map(|(_, s)| s.iter().product::<usize>()).sum()
}

fn glorot<R: Rng>(shape: &[usize], rng: &mut R) -> Array {
    let (fan_in, fan_out) = match shape {
        [o, i] => (*i, *o),
        [o, i, h, k] => (i * h * k, o * h * k),
        _ => (shape.iter().product(), shape.iter().product()),
    };
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..shape.iter().product()).map(|_| rng.random_range(-a..a)).collect();
    Array::new(shape, data).expect("shape and length agree")
}

/// Glorot-uniform weights, zero biases, unit batch-norm scale and
/// `N(0,1)·0.1` node embeddings, all drawn from one stream keyed by `seed`.
pub fn init_model(cfg: &ModelConfig, n_sensors: usize, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    if n_sensors == 0 {
        return Err(Error::Config("the model needs at least one sensor".into()));
    }
    let mut rng = rng_for(seed, "init", &[]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut store = ParamStore::default();
    for (name, shape) in param_shapes(cfg, n_sensors) {
        let value = if name.starts_with("node.") {
            let data = (0..shape.iter().product()).map(|_| normal.sample(&mut rng) * 0.1).collect();
            Array::new(&shape, data)?
        } else if name.ends_with(".gamma") {
            Array::ones(&shape)
        } else if name.ends_with(".b") || name.ends_with(".beta") {
            Array::zeros(&shape)
        } else {
            glorot(&shape, &mut rng)
        };
        store.insert(name, value)?;
    }
    Ok(ModelParams {
        config: cfg.clone(),
        n_sensors,
        store,
        batch_norm: (0..cfg.n_layers).map(|_| BatchNormState::new(cfg.d_hidden)).collect(),
    })
}

impl ModelParams {
    /// Registers every parameter as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let ids = self.store.iter().map(|(k, v)| (k.to_string(), g.param(v.clone()))).collect();
        Bound { ids }
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    pub fn is_finite(&self) -> bool {
        self.store.iter().all(|(_, v)| v.is_finite())
    }

    pub fn save(&self, path: &Path, scaler: Option<&Scaler>) -> Result<()> {
        let ck = Checkpoint::from_params(self, scaler);
        let text = serde_json::to_string(&ck)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(ModelParams, Option<Scaler>)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        ck.into_params()
    }
}

const CHECKPOINT_FORMAT: &str = "gswan-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredParam {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StoredNorm {
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    momentum: f64,
    eps: f64,
}

/// JSON manifest of a trained model.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    n_sensors: usize,
    config: ModelConfig,
    params: Vec<StoredParam>,
    batch_norm: Vec<StoredNorm>,
    scaler: Option<Scaler>,
}

impl Checkpoint {
    fn from_params(p: &ModelParams, scaler: Option<&Scaler>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            n_sensors: p.n_sensors,
            config: p.config.clone(),
            params: p
                .store
                .iter()
                .map(|(name, v)| StoredParam {
                    name: name.into(),
                    shape: v.shape().to_vec(),
                    values: v.data().to_vec(),
                })
                .collect(),
            batch_norm: p
                .batch_norm
                .iter()
                .map(|b| StoredNorm {
                    running_mean: b.running_mean.clone(),
                    running_var: b.running_var.clone(),
                    momentum: b.momentum,
                    eps: b.eps,
                })
                .collect(),
            scaler: scaler.cloned(),
        }
    }

    fn into_params(self) -> Result<(ModelParams, Option<Scaler>)> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Param(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        self.config.validate()?;
        let expected = param_shapes(&self.config, self.n_sensors);
        if expected.len() != self.params.len() {
            return Err(Error::Param(format!(
                "checkpoint holds {} parameters, the config needs {}",
                self.params.len(),
                expected.len()
            )));
        }
        let mut store = ParamStore::default();
        for ((name, shape), sp) in expected.into_iter().zip(self.params) {
            if name != sp.name || shape != sp.shape {
                return Err(Error::Param(format!(
                    "checkpoint parameter {} {:?} does not match expected {name} {shape:?}",
                    sp.name, sp.shape
                )));
            }
            store.insert(name, Array::new(&shape, sp.values)?)?;
        }
        if self.batch_norm.len() != self.config.n_layers {
            return Err(Error::Param("checkpoint batch-norm count does not match the layers".into()));
        }
        let batch_norm = self
            .batch_norm
            .into_iter()
            .map(|b| BatchNormState {
                running_mean: b.running_mean,
                running_var: b.running_var,
                momentum: b.momentum,
                eps: b.eps,
            })
            .collect();
        Ok((
            ModelParams {
                config: self.config,
                n_sensors: self.n_sensors,
                store,
                batch_norm,
            },
            self.scaler,
        ))
    }
}
