//! Training-time augmentations applied independently to each datapoint:
//! soft spatial occlusion, temporal permutation of the sensor axis, and
//! uniform noise on the metric channel. Inputs are `[2, N, L]` windows in
//! scaled space.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::data::METRIC;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub p_occlude: f64,
    pub occlude_scale: f64,
    pub p_permute: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_occlude: 0.05,
            occlude_scale: 0.05,
            p_permute: 0.05,
            noise_scale: 0.05,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// All three augmentations switched off.
    pub fn disabled() -> Self {
        Self {
            p_occlude: 0.0,
            p_permute: 0.0,
            noise_scale: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_occlude", self.p_occlude), ("p_permute", self.p_permute)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("augment.{name} must be in [0,1], got {p}")));
            }
        }
        for (name, s) in [("occlude_scale", self.occlude_scale), ("noise_scale", self.noise_scale)] {
            if !(s >= 0.0) {
                return Err(Error::Config(format!("augment.{name} must be nonnegative, got {s}")));
            }
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.p_occlude == 0.0 && self.p_permute == 0.0 && self.noise_scale == 0.0
    }
}

fn dims(x: &Array) -> (usize, usize, usize) {
    let s = x.shape();
    (s[0], s[1], s[2])
}

/// Each sensor is independently selected with `p_occlude`; its metric values
/// are multiplied by `occlude_scale` over the whole window.
pub fn spatial_occlusion<R: Rng>(x: &Array, cfg: &AugmentConfig, rng: &mut R) -> Array {
    let mut out = x.clone();
    let (_, n, l) = dims(x);
    for s in 0..n {
        if rng.random_bool(cfg.p_occlude) {
            let row = &mut out.data_mut()[(METRIC * n + s) * l..(METRIC * n + s + 1) * l];
            for v in row {
                *v *= cfg.occlude_scale;
            }
        }
    }
    out
}

/// Each timestep is independently selected with `p_permute`; at a selected
/// timestep the sensor axis is shuffled, all channels moving together.
pub fn temporal_permutation<R: Rng>(x: &Array, cfg: &AugmentConfig, rng: &mut R) -> Array {
    let mut out = x.clone();
    let (c, n, l) = dims(x);
    let mut perm: Vec<usize> = (0..n).collect();
    for t in 0..l {
        if !rng.random_bool(cfg.p_permute) {
            continue;
        }
        perm.shuffle(rng);
        for ch in 0..c {
            for (dst, &src) in perm.iter().enumerate() {
                out.data_mut()[(ch * n + dst) * l + t] = x.data()[(ch * n + src) * l + t];
            }
        }
    }
    out
}

/// Adds i.i.d. uniform noise on `[−s, s]`, `s = noise_scale · train_std`, to
/// every metric entry.
pub fn uniform_noise<R: Rng>(x: &Array, cfg: &AugmentConfig, train_std: f64, rng: &mut R) -> Array {
    let mut out = x.clone();
    let s = cfg.noise_scale * train_std;
    if s == 0.0 {
        return out;
    }
    let (_, n, l) = dims(x);
    for v in &mut out.data_mut()[METRIC * n * l..(METRIC + 1) * n * l] {
        *v += rng.random_range(-s..=s);
    }
    out
}

/// Occlusion → permutation → noise. Noise is relative to the scaled
/// training std, which is 1.
pub fn augment<R: Rng>(x: &Array, cfg: &AugmentConfig, rng: &mut R) -> Array {
    let x = spatial_occlusion(x, cfg, rng);
    let x = temporal_permutation(&x, cfg, rng);
    uniform_noise(&x, cfg, 1.0, rng)
}
