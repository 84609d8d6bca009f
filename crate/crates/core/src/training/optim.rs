use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::error::{Error, Result};
use crate::model::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_decay: 0.97,
            clip_norm: 3.0,
            batch_size: 64,
            epochs: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr0 > 0.0) {
            return bad(format!("train.lr0 must be positive, got {}", self.lr0));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("train.lr_decay must be in (0,1], got {}", self.lr_decay));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("train.clip_norm must be positive, got {}", self.clip_norm));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("train.weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("train.beta1 and train.beta2 must be in [0,1)".into());
        }
        if !(self.eps > 0.0) {
            return bad("train.eps must be positive".into());
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("train.batch_size and train.epochs must be positive".into());
        }
        Ok(())
    }
}

/// `lr0 · lr_decay^epoch`
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.lr_decay.powi(epoch as i32)
}

/// Gradients keyed like the parameters.
pub type Grads = IndexMap<String, Array>;

pub fn global_norm(grads: &Grads) -> f64 {
    grads.values().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescales every gradient by `max_norm/‖g‖` when the global norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut Grads, max_norm: f64) -> Result<f64> {
    for (name, g) in grads.iter() {
        if !g.is_finite() {
            let bad = g.data().iter().filter(|v| !v.is_finite()).count();
            return Err(Error::Numeric(format!("gradient of {name} has {bad} non-finite entries")));
        }
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.scale_in_place(s);
        }
    }
    Ok(norm)
}

/// First and second moment estimates plus the step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: IndexMap<String, Array>,
    pub v: IndexMap<String, Array>,
    pub t: u64,
}

/// Decoupled weight decay `p ← p(1 − lr·wd)` followed by a bias-corrected
/// Adam update. Parameters without a gradient entry are left alone.
pub fn adamw_step(params: &mut ParamStore, grads: &Grads, state: &mut AdamState, cfg: &TrainConfig, lr: f64) -> Result<()> {
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decay = 1.0 - lr * cfg.weight_decay;
    for (name, p) in params.iter_mut() {
        let Some(g) = grads.get(name) else { continue };
        if g.shape() != p.shape() {
            return Err(Error::shape("adamw_step", g.shape(), p.shape()));
        }
        let m = state.m.entry(name.to_string()).or_insert_with(|| Array::zeros(p.shape()));
        let v = state.v.entry(name.to_string()).or_insert_with(|| Array::zeros(p.shape()));
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *pi *= decay;
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
