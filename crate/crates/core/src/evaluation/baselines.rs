use log::warn;

use crate::array::Array;
use crate::data::{day_slot, TrafficDataset, Window, METRIC, STEPS_PER_DAY};
use crate::error::{Error, Result};

/// Per-sensor mean of the training readings in each 5-minute slot of the day.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoricalAverage {
    /// `[N][STEPS_PER_DAY]`, `None` where the slot never occurs in training.
    pub slot_means: Vec<Vec<Option<f64>>>,
    pub fallback: f64,
}

impl HistoricalAverage {
    /// Missing readings are skipped. `fallback` (the training mean) stands in
    /// for slots with no readings.
    pub fn fit(train: &TrafficDataset, fallback: f64) -> Self {
        let n = train.n_sensors();
        let mut slot_means = vec![vec![None; STEPS_PER_DAY]; n];
        let mut counts = vec![vec![0usize; STEPS_PER_DAY]; n];
        for (t, &ts) in train.timestamps.iter().enumerate() {
            let slot = day_slot(ts, train.utc_offset_seconds);
            for s in 0..n {
                let v = train.get(METRIC, s, t);
                if v.is_nan() {
                    continue;
                }
                counts[s][slot] += 1;
                let m = slot_means[s][slot].get_or_insert(v);
                // identical readings leave the running mean exactly unchanged
                *m += (v - *m) / counts[s][slot] as f64;
            }
        }
        let uncovered = slot_means.iter().flatten().filter(|m| m.is_none()).count();
        if uncovered > 0 {
            warn!("{uncovered} sensor slots have no training readings; using the training mean there");
        }
        Self { slot_means, fallback }
    }

    /// Prediction for sensor `s` at `timestamp`. It depends only on the slot,
    /// never on how far ahead the target lies.
    pub fn at(&self, s: usize, timestamp: i64, utc_offset_seconds: i64) -> f64 {
        self.slot_means[s][day_slot(timestamp, utc_offset_seconds)].unwrap_or(self.fallback)
    }

    /// `[B, F, N]` predictions for windows cut from `d`.
    pub fn predict(&self, d: &TrafficDataset, windows: &[Window], input_len: usize, horizon: usize) -> Result<Array> {
        let n = d.n_sensors();
        if n != self.slot_means.len() {
            return Err(Error::shape("ha_baseline", &[n], &[self.slot_means.len()]));
        }
        let mut out = Vec::with_capacity(windows.len() * horizon * n);
        for w in windows {
            let first = w.origin.checked_sub(d.offset).ok_or_else(|| {
                Error::Param(format!("window origin {} precedes the split start {}", w.origin, d.offset))
            })? + input_len;
            for f in 0..horizon {
                let ts = *d
                    .timestamps
                    .get(first + f)
                    .ok_or_else(|| Error::Param("window extends past the split".into()))?;
                for s in 0..n {
                    out.push(self.at(s, ts, d.utc_offset_seconds));
                }
            }
        }
        Array::new(&[windows.len(), horizon, n], out)
    }
}

/// Repeats the last observed metric reading of every sensor over `horizon`
/// steps. `inputs` are `[N, L]` metric windows; the result is `[B, F, N]`.
pub fn persistence_baseline(inputs: &[Array], horizon: usize) -> Result<Array> {
    let Some(first) = inputs.first() else {
        return Array::new(&[0, horizon, 0], vec![]);
    };
    let (n, l) = (first.shape()[0], first.shape()[1]);
    let mut out = Vec::with_capacity(inputs.len() * horizon * n);
    for x in inputs {
        if x.shape() != [n, l] {
            return Err(Error::shape("persistence_baseline", x.shape(), &[n, l]));
        }
        for _ in 0..horizon {
            out.extend((0..n).map(|s| x.get(&[s, l - 1])));
        }
    }
    Array::new(&[inputs.len(), horizon, n], out)
}

/// Stacks window targets `[N, F]` into `[B, F, N]`.
pub fn stack_targets(windows: &[Window]) -> Result<Array> {
    let Some(first) = windows.first() else {
        return Array::new(&[0, 0, 0], vec![]);
    };
    let (n, f) = (first.target.shape()[0], first.target.shape()[1]);
    let mut out = Vec::with_capacity(windows.len() * n * f);
    for w in windows {
        out.extend_from_slice(w.target.transpose_last2().data());
    }
    Array::new(&[windows.len(), f, n], out)
}

/// Metric channel of each window input, `[N, L]`.
pub fn metric_inputs(windows: &[Window]) -> Vec<Array> {
    windows.iter().map(|w| w.input.index_axis0(METRIC)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_windows, MetricKind};
    use crate::evaluation::compute_metrics;

    fn ds(series: Vec<Vec<f64>>) -> TrafficDataset {
        let ids = (0..series.len()).map(|i| format!("s{i}")).collect();
        TrafficDataset::from_metric(&series, ids, 0, MetricKind::Speed, vec![]).unwrap()
    }

    #[test]
    fn slot_mean_of_two_days() {
        let mut v = vec![0.0; 2 * STEPS_PER_DAY];
        v[5] = 10.0;
        v[STEPS_PER_DAY + 5] = 14.0;
        let ha = HistoricalAverage::fit(&ds(vec![v]), 0.0);
        assert_eq!(ha.at(0, 5 * 300, 0), 12.0);
    }

    #[test]
    fn periodic_series_is_exact() {
        let day: Vec<f64> = (0..STEPS_PER_DAY).map(|i| 40.0 + (i as f64 * 0.1).sin() * 7.3).collect();
        let series: Vec<f64> = day.iter().cycle().take(5 * STEPS_PER_DAY).copied().collect();
        let d = ds(vec![series]);
        let train = d.slice_time(0, 3 * STEPS_PER_DAY).unwrap();
        let test = d.slice_time(3 * STEPS_PER_DAY, 2 * STEPS_PER_DAY).unwrap();
        let ha = HistoricalAverage::fit(&train, 0.0);
        let w = make_windows(&test, 12, 12).unwrap();
        let h = ha.predict(&test, &w, 12, 12).unwrap();
        let y = stack_targets(&w).unwrap();
        assert_eq!(compute_metrics(&y, &h).unwrap().mae, 0.0);

        // same target timestamp, different lead: same prediction
        assert_eq!(h.get(&[0, 5, 0]), h.get(&[1, 4, 0]));
        assert_eq!(h.get(&[0, 11, 0]), h.get(&[11, 0, 0]));
    }

    #[test]
    fn uncovered_slot_falls_back() {
        let ha = HistoricalAverage::fit(&ds(vec![vec![3.0; 10]]), 7.5);
        assert_eq!(ha.at(0, 0, 0), 3.0);
        assert_eq!(ha.at(0, 100 * 300, 0), 7.5);
    }

    #[test]
    fn persistence_cases() {
        let ramp = ds(vec![(0..60).map(f64::from).collect()]);
        let w = make_windows(&ramp, 12, 12).unwrap();
        let h = persistence_baseline(&metric_inputs(&w), 12).unwrap();
        let y = stack_targets(&w).unwrap();
        assert_eq!(h.shape(), y.shape());
        assert!((compute_metrics(&y, &h).unwrap().mae - 6.5).abs() < 1e-9);

        let flat = ds(vec![vec![4.0; 30], vec![2.0; 30]]);
        let w = make_windows(&flat, 12, 12).unwrap();
        let h = persistence_baseline(&metric_inputs(&w), 12).unwrap();
        assert_eq!(compute_metrics(&stack_targets(&w).unwrap(), &h).unwrap().mae, 0.0);
    }
}
