//! Dataset ingestion, adjacency construction, scaling, imputation, temporal
//! splitting and windowing.

mod adjacency;
mod dataset;
mod scaler;
mod split;
mod window;

pub use adjacency::{build_adjacency, rbf, row_normalize, AdjacencyPair};
pub use dataset::{
    day_slot, is_weekend, load_dataset, summarize, time_of_day, write_dataset, Edge, MetricKind, Summary,
    TrafficDataset, METRIC, SECONDS_PER_DAY, STEPS_PER_DAY, STEP_SECONDS, TIME_OF_DAY,
};
pub use scaler::{apply_scaler, fit_scaler, Direction, Scaler};
pub use split::{split_temporal, SplitRatio, Splits};
pub use window::{impute_missing, make_windows, Window, HORIZON, INPUT_LEN};

use crate::error::Result;

/// One split ready for the model.
#[derive(Clone, Debug)]
pub struct PreparedSplit {
    /// Window inputs are imputed and scaled; targets are imputed and in
    /// dataset units.
    pub windows: Vec<Window>,
    /// The split as cut from the raw timeline, missing markers intact.
    pub raw: TrafficDataset,
    /// `raw` with missing readings replaced by the training mean.
    pub filled: TrafficDataset,
}

#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: PreparedSplit,
    pub val: PreparedSplit,
    pub test: PreparedSplit,
    pub scaler: Scaler,
    pub adjacency: AdjacencyPair,
    pub imputed: usize,
}

/// Split → fit the scaler on train → impute every split with the training
/// mean → scale → window each split independently.
pub fn prepare(d: &TrafficDataset, ratio: SplitRatio, input_len: usize, horizon: usize) -> Result<PreparedData> {
    let splits = split_temporal(d, ratio, input_len + horizon)?;
    let scaler = fit_scaler(&splits.train)?;
    let adjacency = build_adjacency(&d.edge_indices()?, d.n_sensors())?;
    let mut imputed = 0;
    let mut prep = |raw: TrafficDataset| -> Result<PreparedSplit> {
        let (filled, count) = impute_missing(&raw, scaler.mean);
        imputed += count;
        let scaled = scaler.apply(&filled, Direction::Forward);
        let mut windows = make_windows(&scaled, input_len, horizon)?;
        for (w, t) in windows.iter_mut().zip(make_windows(&filled, input_len, horizon)?) {
            w.target = t.target;
        }
        Ok(PreparedSplit { windows, raw, filled })
    };
    let train = prep(splits.train)?;
    let val = prep(splits.val)?;
    let test = prep(splits.test)?;
    Ok(PreparedData {
        train,
        val,
        test,
        scaler,
        adjacency,
        imputed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(k: usize, n: usize) -> TrafficDataset {
        let series: Vec<Vec<f64>> = (0..n)
            .map(|s| (0..k).map(|t| 50.0 + ((t + 7 * s) as f64 * 0.2).sin() * 10.0).collect())
            .collect();
        let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let edges = (0..n)
            .map(|i| Edge {
                src: ids[i].clone(),
                dst: ids[(i + 1) % n].clone(),
                distance: 100.0 + 50.0 * i as f64,
            })
            .collect();
        TrafficDataset::from_metric(&series, ids, 1_700_000_000, MetricKind::Speed, edges).unwrap()
    }

    #[test]
    fn scaler_is_fit_on_train_only() {
        let d = ring(400, 3);
        let a = prepare(&d, SplitRatio::SPEED, 12, 12).unwrap();
        // permute the test range; the fitted scaler must not move
        let mut shuffled = d.clone();
        let (_, b2) = SplitRatio::SPEED.boundaries(400);
        for s in 0..3 {
            let row = &mut shuffled.values.data_mut()[s * 400..(s + 1) * 400];
            row[b2..].reverse();
        }
        let b = prepare(&shuffled, SplitRatio::SPEED, 12, 12).unwrap();
        assert_eq!(a.scaler, b.scaler);
    }

    #[test]
    fn targets_stay_in_dataset_units() {
        let mut d = ring(200, 2);
        d.set(METRIC, 0, 5, f64::NAN);
        let p = prepare(&d, SplitRatio::FLOW, 12, 12).unwrap();
        assert_eq!(p.imputed, 1);
        let w = &p.val.windows[0];
        let t0 = w.origin + 12;
        assert_eq!(w.target.get(&[1, 0]), d.get(METRIC, 1, t0));
        let scaled = p.scaler.forward_metric(d.get(METRIC, 1, w.origin));
        assert!((w.input.get(&[0, 1, 0]) - scaled).abs() < 1e-12);
        // the imputed cell is in the training inputs as the train mean, scaled
        assert!(p.train.windows[0].input.get(&[0, 0, 5]).abs() < 1e-12);
    }
}
