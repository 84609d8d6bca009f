//! Minimal reverse-mode differentiation over dense [`Array`]s.
//!
//! A [`Graph`] records every operation as it is applied. Calling
//! [`Graph::backward`] on a scalar node sweeps the tape in reverse and leaves
//! `∂loss/∂node` in every node that requires a gradient.

mod gradcheck;
mod graph;
pub(crate) mod kernels;

pub use gradcheck::{central_difference_gradient, compare_gradients, finite_difference_check, GradCheck};
pub use graph::{Activation, BatchStats, Graph, Node, NodeId, NormMode};

#[cfg(doc)]
use crate::array::Array;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Running statistics for one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    /// `running ← (1 − momentum)·running + momentum·batch`
    pub fn update(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (r, b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}
