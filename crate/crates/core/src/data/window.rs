use log::warn;

use super::dataset::{TrafficDataset, METRIC, TIME_OF_DAY};
use crate::array::Array;
use crate::error::{Error, Result};

pub const INPUT_LEN: usize = 12;
pub const HORIZON: usize = 12;

/// One datapoint: `input [2, N, L]` (metric, time of day) and the next `F`
/// metric readings `target [N, F]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub input: Array,
    pub target: Array,
    /// Timeline index of the first input step.
    pub origin: usize,
}

/// Every window lying fully inside `d`, ordered by origin.
/// Window `i` reads inputs `[i, i+L)` and targets `[i+L, i+L+F)`.
pub fn make_windows(d: &TrafficDataset, input_len: usize, horizon: usize) -> Result<Vec<Window>> {
    let k = d.n_timesteps();
    let required = input_len + horizon;
    if k < required {
        return Err(Error::TooShort { got: k, required });
    }
    let n = d.n_sensors();
    let mut windows = Vec::with_capacity(k - required + 1);
    for i in 0..=k - required {
        let mut input = Vec::with_capacity(2 * n * input_len);
        for ch in [METRIC, TIME_OF_DAY] {
            for s in 0..n {
                input.extend_from_slice(&d.series(ch, s)[i..i + input_len]);
            }
        }
        let mut target = Vec::with_capacity(n * horizon);
        for s in 0..n {
            target.extend_from_slice(&d.series(METRIC, s)[i + input_len..i + required]);
        }
        windows.push(Window {
            input: Array::new(&[2, n, input_len], input)?,
            target: Array::new(&[n, horizon], target)?,
            origin: d.offset + i,
        });
    }
    Ok(windows)
}

/// Replaces every missing metric reading with `train_mean`. Returns the
/// filled dataset and the number of replacements.
pub fn impute_missing(d: &TrafficDataset, train_mean: f64) -> (TrafficDataset, usize) {
    let mut out = d.clone();
    let (n, k) = (d.n_sensors(), d.n_timesteps());
    let mut count = 0;
    for s in 0..n {
        let row = &mut out.values.data_mut()[(METRIC * n + s) * k..(METRIC * n + s + 1) * k];
        let missing = row.iter().filter(|v| v.is_nan()).count();
        if missing == k && k > 0 {
            warn!("sensor {} has no readings; filling with the training mean", d.sensor_ids[s]);
        }
        for v in row.iter_mut().filter(|v| v.is_nan()) {
            *v = train_mean;
        }
        count += missing;
    }
    (out, count)
}
