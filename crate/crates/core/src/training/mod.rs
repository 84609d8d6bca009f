//! MAE training with AdamW, per-epoch learning-rate decay, global gradient
//! clipping and best-validation model selection.

mod optim;

use std::fmt::Write as _;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;

pub use optim::{adamw_step, clip_gradients, global_norm, lr_at, AdamState, Grads, TrainConfig};

use crate::array::Array;
use crate::augment::{augment, AugmentConfig};
use crate::autodiff::{Graph, NodeId, NormMode};
use crate::data::{PreparedData, Scaler, Window};
use crate::error::{Error, Result};
use crate::evaluation::{compute_metrics, stack_targets, Metrics};
use crate::model::{forward, predict, GraphInputs, ModelParams};
use crate::seed::rng_for;

/// Mean absolute difference of two equally shaped arrays.
pub fn mae_loss(h: &Array, y: &Array) -> Result<f64> {
    if h.shape() != y.shape() {
        return Err(Error::shape("mae_loss", h.shape(), y.shape()));
    }
    Ok(h.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / h.len() as f64)
}

/// Records the loss on the graph: `h` is inverse-scaled into dataset units
/// before comparing with `y`.
pub fn mae_loss_node(g: &mut Graph, h_scaled: NodeId, y: NodeId, scaler: &Scaler) -> Result<NodeId> {
    let h = g.scalar_affine(h_scaled, scaler.std, scaler.mean);
    let d = g.sub(h, y)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

/// Stacks window inputs into `[B, 2, N, L]`.
pub fn stack_inputs(windows: &[&Window]) -> Result<Array> {
    let items: Vec<Array> = windows.iter().map(|w| w.input.clone()).collect();
    Array::stack(&items)
}

/// Eval-mode predictions in dataset units, `[B, F, N]`, batched and spread
/// over up to `threads` workers. Batch order and results do not depend on
/// the thread count.
pub fn predict_windows(
    params: &ModelParams,
    graph: &GraphInputs,
    windows: &[Window],
    scaler: &Scaler,
    batch_size: usize,
    threads: usize,
) -> Result<Array> {
    let (f, n) = (params.config.horizon, params.n_sensors);
    let batches: Vec<&[Window]> = windows.chunks(batch_size.max(1)).collect();
    let run = |chunk: &[Window]| -> Result<Vec<f64>> {
        let refs: Vec<&Window> = chunk.iter().collect();
        let out = predict(params, graph, &stack_inputs(&refs)?)?;
        Ok(out.data().iter().map(|&v| scaler.inverse_metric(v)).collect())
    };
    let threads = threads.clamp(1, batches.len().max(1));
    let parts: Vec<Result<Vec<f64>>> = if threads == 1 {
        batches.iter().map(|b| run(b)).collect()
    } else {
        let per = batches.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = batches
                .chunks(per)
                .map(|group| s.spawn(move || group.iter().map(|b| run(b)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("prediction worker panicked"))
                .collect()
        })
    };
    let mut data = Vec::with_capacity(windows.len() * f * n);
    for p in parts {
        data.extend(p?);
    }
    Array::new(&[windows.len(), f, n], data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Metrics,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Deterministic columns only; wall time goes to [`Self::timing_csv`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_mae,val_mape,val_rmse,lr\n");
        for r in &self.records {
            let mape = r.val.mape.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{},{}", r.epoch, r.train_loss, r.val.mae, mape, r.val.rmse, r.lr);
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,seconds\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{:.3}", r.epoch, r.seconds);
        }
        out
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().min_by(|a, b| a.val.mae.total_cmp(&b.val.mae))
    }
}

/// What the loop is doing, reported to an observer.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainEvent {
    Batch {
        epoch: usize,
        batch: usize,
        mode: NormMode,
        augmented: bool,
    },
    Validation {
        epoch: usize,
        mode: NormMode,
        augmented: bool,
    },
    Epoch(EpochRecord),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters after the epoch with the lowest validation MAE.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub last: ModelParams,
    pub history: TrainHistory,
}

/// State at the point a non-finite loss or gradient stopped training.
#[derive(Clone, Debug)]
pub struct Divergence {
    pub epoch: usize,
    pub batch: usize,
    pub detail: String,
    /// Parameters before the failing step.
    pub last_good: ModelParams,
    pub history: TrainHistory,
}

pub fn train(
    init: ModelParams,
    data: &PreparedData,
    tcfg: &TrainConfig,
    acfg: &AugmentConfig,
) -> Result<TrainOutcome> {
    train_with_observer(init, data, tcfg, acfg, 1, &mut |_| {})
}

/// Shuffle → batch → augment → forward → MAE → backward → clip → AdamW, then
/// a validation pass in eval mode without augmentation, once per epoch.
pub fn train_with_observer(
    init: ModelParams,
    data: &PreparedData,
    tcfg: &TrainConfig,
    acfg: &AugmentConfig,
    threads: usize,
    observer: &mut dyn FnMut(&TrainEvent),
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    acfg.validate()?;
    init.config.validate()?;
    let train_windows = &data.train.windows;
    if train_windows.is_empty() || data.val.windows.is_empty() {
        return Err(Error::Config("training needs nonempty train and validation splits".into()));
    }
    if init.n_sensors != data.adjacency.a_r.shape()[0] {
        return Err(Error::Config(format!(
            "model expects {} sensors, dataset has {}",
            init.n_sensors,
            data.adjacency.a_r.shape()[0]
        )));
    }
    let graph = GraphInputs::new(&data.adjacency.a_r);
    let val_targets = stack_targets(&data.val.windows)?;
    let mut params = init;
    let mut adam = AdamState::default();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let augmented = !acfg.is_identity();

    for epoch in 0..tcfg.epochs {
        let started = Instant::now();
        let lr = lr_at(epoch, tcfg);
        let mut order: Vec<usize> = (0..train_windows.len()).collect();
        order.shuffle(&mut rng_for(tcfg.seed, "shuffle", &[epoch as u64]));
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (batch, idx) in order.chunks(tcfg.batch_size).enumerate() {
            observer(&TrainEvent::Batch {
                epoch,
                batch,
                mode: NormMode::Train,
                augmented,
            });
            let inputs: Vec<Array> = idx
                .iter()
                .map(|&i| {
                    let x = &train_windows[i].input;
                    if augmented {
                        augment(x, acfg, &mut rng_for(tcfg.seed, "augment", &[acfg.seed, epoch as u64, i as u64]))
                    } else {
                        x.clone()
                    }
                })
                .collect();
            let targets: Vec<Array> = idx.iter().map(|&i| train_windows[i].target.transpose_last2()).collect();

            let mut g = Graph::new();
            let bound = params.bind(&mut g);
            let x = g.constant(Array::stack(&inputs)?);
            let y = g.constant(Array::stack(&targets)?);
            let out = forward(&mut g, &params, &bound, &graph, x, NormMode::Train)?;
            let loss = mae_loss_node(&mut g, out.output, y, &data.scaler)?;
            let loss_value = g.value(loss).item();
            let diverged = |detail: String, params: &ModelParams, history: &TrainHistory| {
                Error::Diverged(Box::new(Divergence {
                    epoch,
                    batch,
                    detail,
                    last_good: params.clone(),
                    history: history.clone(),
                }))
            };
            if !loss_value.is_finite() {
                return Err(diverged(format!("loss is {loss_value}"), &params, &history));
            }
            g.backward(loss)?;
            let mut grads: Grads = bound
                .ids
                .iter()
                .map(|(name, &id)| (name.clone(), g.grad(id).expect("parameter gradient").clone()))
                .collect();
            if let Err(e) = clip_gradients(&mut grads, tcfg.clip_norm) {
                return Err(diverged(e.to_string(), &params, &history));
            }
            adamw_step(&mut params.store, &grads, &mut adam, tcfg, lr)?;
            for (state, stats) in params.batch_norm.iter_mut().zip(&out.bn_stats) {
                state.update(stats);
            }
            loss_sum += loss_value * idx.len() as f64;
            seen += idx.len();
        }

        observer(&TrainEvent::Validation {
            epoch,
            mode: NormMode::Eval,
            augmented: false,
        });
        let pred = predict_windows(&params, &graph, &data.val.windows, &data.scaler, tcfg.batch_size, threads)?;
        let val = compute_metrics(&val_targets, &pred)?;
        if !val.mae.is_finite() {
            return Err(Error::Diverged(Box::new(Divergence {
                epoch,
                batch: 0,
                detail: format!("validation MAE is {}", val.mae),
                last_good: best.as_ref().map_or_else(|| params.clone(), |b| b.2.clone()),
                history,
            })));
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: train MAE {:.4}, val MAE {:.4}, lr {:.3e}",
            record.train_loss, record.val.mae, lr
        );
        observer(&TrainEvent::Epoch(record.clone()));
        if best.as_ref().is_none_or(|b| val.mae < b.0) {
            best = Some((val.mae, epoch, params.clone()));
        }
        history.records.push(record);
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: params,
        history,
    })
}

#[cfg(test)]
mod tests;
