use log::warn;

use crate::array::Array;
use crate::error::{Error, Result};

const SIGMA_FLOOR: f64 = 1e-8;

/// Physical adjacency built from road distances with a Gaussian RBF.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyPair {
    pub a_r: Array,
    pub sigma_d: f64,
}

/// `A[i][j] = exp(−(d/σ_d)²)` on every listed directed edge, where σ_d is the
/// population standard deviation of the listed distances. The diagonal is 1
/// and unlisted pairs are 0.
pub fn build_adjacency(edges: &[(usize, usize, f64)], n: usize) -> Result<AdjacencyPair> {
    if edges.is_empty() {
        return Err(Error::Param("adjacency needs at least one edge".into()));
    }
    for &(i, j, d) in edges {
        if i >= n || j >= n {
            return Err(Error::Param(format!("edge ({i},{j}) outside {n} sensors")));
        }
        if !(d >= 0.0) {
            return Err(Error::Param(format!("edge ({i},{j}) has invalid distance {d}")));
        }
    }
    let count = edges.len() as f64;
    let mean = edges.iter().map(|e| e.2).sum::<f64>() / count;
    let mut sigma_d = (edges.iter().map(|e| (e.2 - mean).powi(2)).sum::<f64>() / count).sqrt();
    if sigma_d < SIGMA_FLOOR {
        warn!("edge distances have zero spread; flooring sigma_d at {SIGMA_FLOOR}");
        sigma_d = SIGMA_FLOOR;
    }
    let mut a_r = Array::zeros(&[n, n]);
    for &(i, j, d) in edges {
        a_r.set(&[i, j], rbf(d, sigma_d));
    }
    for i in 0..n {
        a_r.set(&[i, i], 1.0);
    }
    Ok(AdjacencyPair { a_r, sigma_d })
}

pub fn rbf(distance: f64, sigma_d: f64) -> f64 {
    let r = distance / sigma_d;
    (-(r * r)).exp()
}

/// Row-normalized copy (`D⁻¹A`), the static transition matrix used when the
/// attention module is disabled.
pub fn row_normalize(a: &Array) -> Array {
    let n = a.shape()[1];
    let mut out = a.clone();
    for row in out.data_mut().chunks_mut(n) {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            for v in row {
                *v /= s;
            }
        }
    }
    out
}
