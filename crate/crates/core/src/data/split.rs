use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dataset::TrafficDataset;
use crate::error::{Error, Result};

/// Integer train:val:test proportions such as `7:1:2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SplitRatio {
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

impl SplitRatio {
    pub const SPEED: SplitRatio = SplitRatio { train: 7, val: 1, test: 2 };
    pub const FLOW: SplitRatio = SplitRatio { train: 6, val: 2, test: 2 };

    pub fn new(train: u32, val: u32, test: u32) -> Result<Self> {
        if train == 0 || val == 0 || test == 0 {
            return Err(Error::Config(format!(
                "split ratio parts must be positive, got {train}:{val}:{test}"
            )));
        }
        Ok(Self { train, val, test })
    }

    /// Cut points `(b1, b2)` at the floor of the cumulative fractions.
    pub fn boundaries(&self, k: usize) -> (usize, usize) {
        let total = (self.train + self.val + self.test) as u128;
        let k = k as u128;
        let b1 = k * self.train as u128 / total;
        let b2 = k * (self.train + self.val) as u128 / total;
        (b1 as usize, b2 as usize)
    }
}

impl fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.train, self.val, self.test)
    }
}

impl FromStr for SplitRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("split ratio must look like 7:1:2, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let nums: Vec<u32> = parts
            .iter()
            .map(|p| p.trim().parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        Self::new(nums[0], nums[1], nums[2])
    }
}

impl TryFrom<String> for SplitRatio {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SplitRatio> for String {
    fn from(r: SplitRatio) -> String {
        r.to_string()
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: TrafficDataset,
    pub val: TrafficDataset,
    pub test: TrafficDataset,
}

/// Cuts the raw timeline into contiguous, ordered train/val/test ranges.
/// Each part must hold at least `min_len` timesteps.
pub fn split_temporal(d: &TrafficDataset, ratio: SplitRatio, min_len: usize) -> Result<Splits> {
    let k = d.n_timesteps();
    let (b1, b2) = ratio.boundaries(k);
    for (split, len) in [("train", b1), ("val", b2 - b1), ("test", k - b2)] {
        if len < min_len {
            return Err(Error::SplitTooSmall {
                split,
                len,
                required: min_len,
            });
        }
    }
    Ok(Splits {
        train: d.slice_time(0, b1)?,
        val: d.slice_time(b1, b2 - b1)?,
        test: d.slice_time(b2, k - b2)?,
    })
}
