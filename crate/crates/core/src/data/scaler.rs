use serde::{Deserialize, Serialize};

use super::dataset::{TrafficDataset, METRIC, TIME_OF_DAY};
use crate::error::{Error, Result};

const STD_FLOOR: f64 = 1e-8;

/// Standardizes the metric channel and MinMax-scales time of day, using
/// statistics from the training split only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: f64,
    pub std: f64,
    pub tod_min: f64,
    pub tod_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

pub fn fit_scaler(train: &TrafficDataset) -> Result<Scaler> {
    let n = train.n_sensors();
    let present: Vec<f64> = (0..n)
        .flat_map(|s| train.series(METRIC, s).iter().copied())
        .filter(|v| !v.is_nan())
        .collect();
    if present.is_empty() {
        return Err(Error::Param("cannot fit a scaler: every metric value is missing".into()));
    }
    let count = present.len() as f64;
    let mean = present.iter().sum::<f64>() / count;
    let var = present.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
    let std = var.sqrt().max(STD_FLOOR);
    let (mut tod_min, mut tod_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in 0..n {
        for &v in train.series(TIME_OF_DAY, s) {
            tod_min = tod_min.min(v);
            tod_max = tod_max.max(v);
        }
    }
    Ok(Scaler {
        mean,
        std,
        tod_min,
        tod_max,
    })
}

impl Scaler {
    fn tod_range(&self) -> f64 {
        let r = self.tod_max - self.tod_min;
        if r > 0.0 {
            r
        } else {
            1.0
        }
    }

    pub fn forward_metric(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn inverse_metric(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }

    /// Scales channel 0 and channel 1; further channels are left as is.
    /// Missing markers stay missing.
    pub fn apply(&self, d: &TrafficDataset, direction: Direction) -> TrafficDataset {
        let mut out = d.clone();
        let (n, k) = (d.n_sensors(), d.n_timesteps());
        let range = self.tod_range();
        let data = out.values.data_mut();
        for v in &mut data[METRIC * n * k..(METRIC + 1) * n * k] {
            *v = match direction {
                Direction::Forward => self.forward_metric(*v),
                Direction::Inverse => self.inverse_metric(*v),
            };
        }
        for v in &mut data[TIME_OF_DAY * n * k..(TIME_OF_DAY + 1) * n * k] {
            *v = match direction {
                Direction::Forward => (*v - self.tod_min) / range,
                Direction::Inverse => *v * range + self.tod_min,
            };
        }
        out
    }
}

pub fn apply_scaler(s: &Scaler, d: &TrafficDataset, direction: Direction) -> TrafficDataset {
    s.apply(d, direction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::{summarize, MetricKind};

    fn ds(series: Vec<Vec<f64>>) -> TrafficDataset {
        let ids = (0..series.len()).map(|i| format!("s{i}")).collect();
        TrafficDataset::from_metric(&series, ids, 1_700_000_000, MetricKind::Speed, vec![]).unwrap()
    }

    #[test]
    fn fit_examples() {
        let s = fit_scaler(&ds(vec![vec![1.0, 2.0, 3.0]])).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 0.816496580927726).abs() < 1e-15);
        let c = fit_scaler(&ds(vec![vec![4.0; 5]])).unwrap();
        assert_eq!(c.std, STD_FLOOR);
        assert!(fit_scaler(&ds(vec![vec![f64::NAN; 3]])).is_err());
    }

    #[test]
    fn direct_evaluation() {
        let s = Scaler {
            mean: 4.0,
            std: 2.0,
            tod_min: 0.0,
            tod_max: 1.0,
        };
        assert_eq!(s.forward_metric(10.0), 3.0);
    }

    #[test]
    fn train_becomes_standard_and_round_trips() {
        let d = ds(vec![
            (0..50).map(|i| (i as f64 * 0.37).sin() * 9.0 + 40.0).collect(),
            (0..50).map(|i| (i as f64 * 0.11).cos() * 3.0 + 55.0).collect(),
        ]);
        let s = fit_scaler(&d).unwrap();
        let f = s.apply(&d, Direction::Forward);
        let sum = summarize(&f);
        assert!(sum.mean.abs() < 1e-9 && (sum.std - 1.0).abs() < 1e-9);
        let back = s.apply(&f, Direction::Inverse);
        assert!(back.values.max_abs_diff(&d.values) < 1e-12);
    }
}
