use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::array::Array;
use crate::error::{Error, Result};

const TAN_CLIP: f64 = 1e3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeFit {
    pub r2: f64,
    /// Mean of the per-target values (longitude, latitude).
    pub per_target: [f64; 2],
    /// Per target: intercept first, then one weight per feature.
    pub coefficients: [Vec<f64>; 2],
    pub features: usize,
    /// Set when the system is underdetermined.
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeResult {
    pub r2_linear: f64,
    pub r2_kernel: f64,
    pub linear: ProbeFit,
    pub kernel: ProbeFit,
}

/// Rows `[e1_i ‖ e2_i]`.
pub fn embedding_features(e1: &Array, e2: &Array) -> Result<Vec<Vec<f64>>> {
    if e1.rank() != 2 || e1.shape()[0] != e2.shape()[0] || e2.rank() != 2 {
        return Err(Error::shape("embedding_features", e1.shape(), e2.shape()));
    }
    let n = e1.shape()[0];
    Ok((0..n)
        .map(|i| {
            let mut row = e1.data()[i * e1.shape()[1]..(i + 1) * e1.shape()[1]].to_vec();
            row.extend_from_slice(&e2.data()[i * e2.shape()[1]..(i + 1) * e2.shape()[1]]);
            row
        })
        .collect())
}

/// Appends `sin`, `cos` and clipped `tan` of every feature.
pub fn trig_kernel(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let mut out = r.clone();
            out.extend(r.iter().map(|v| v.sin()));
            out.extend(r.iter().map(|v| v.cos()));
            out.extend(r.iter().map(|v| v.tan().clamp(-TAN_CLIP, TAN_CLIP)));
            out
        })
        .collect()
}

/// `1 − SS_res/SS_tot`, defined as 0 when the target is constant.
pub fn r_squared(y: &[f64], fitted: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return 0.0;
    }
    let ss_res: f64 = y.iter().zip(fitted).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

/// Ordinary least squares with intercept from `rows` to each coordinate,
/// solved through the SVD pseudo-inverse.
pub fn fit_probe(rows: &[Vec<f64>], coords: &[(f64, f64)]) -> Result<ProbeFit> {
    let n = rows.len();
    if n == 0 || n != coords.len() {
        return Err(Error::shape("fit_probe", &[n], &[coords.len()]));
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::Param("probe feature rows differ in width".into()));
    }
    let note = (n <= p + 1).then(|| {
        let msg = format!("{n} samples for {} coefficients: the fit is underdetermined and R² is optimistic", p + 1);
        warn!("{msg}");
        msg
    });
    let x = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    let svd = x.clone().svd(true, true);
    let mut per_target = [0.0; 2];
    let mut coefficients: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for target in 0..2 {
        let y: Vec<f64> = coords.iter().map(|c| if target == 0 { c.0 } else { c.1 }).collect();
        let yv = DVector::from_vec(y.clone());
        let beta = svd
            .solve(&yv, 1e-12)
            .map_err(|e| Error::Numeric(format!("least squares failed: {e}")))?;
        let fitted = &x * &beta;
        per_target[target] = r_squared(&y, fitted.as_slice());
        coefficients[target] = beta.as_slice().to_vec();
    }
    Ok(ProbeFit {
        r2: (per_target[0] + per_target[1]) / 2.0,
        per_target,
        coefficients,
        features: p,
        note,
    })
}

/// Linear and trigonometric-kernel probes from `[e1 ‖ e2]` to coordinates.
pub fn probe_embeddings(e1: &Array, e2: &Array, coords: &[(f64, f64)]) -> Result<ProbeResult> {
    let rows = embedding_features(e1, e2)?;
    let linear = fit_probe(&rows, coords)?;
    let kernel = fit_probe(&trig_kernel(&rows), coords)?;
    Ok(ProbeResult {
        r2_linear: linear.r2,
        r2_kernel: kernel.r2,
        linear,
        kernel,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(n: usize, w: usize, rng: &mut ChaCha8Rng) -> Array {
        Array::new(&[n, w], (0..n * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn planted_linear_map_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (e1, e2) = (random(60, 4, &mut rng), random(60, 4, &mut rng));
        let rows = embedding_features(&e1, &e2).unwrap();
        let coords: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| {
                let lon = -118.0 + r.iter().enumerate().map(|(i, v)| 0.1 * (i as f64 + 1.0) * v).sum::<f64>();
                let lat = 34.0 + r.iter().enumerate().map(|(i, v)| 0.05 * (8.0 - i as f64) * v).sum::<f64>();
                (lon, lat)
            })
            .collect();
        let r = probe_embeddings(&e1, &e2, &coords).unwrap();
        assert!(r.r2_linear > 0.999, "{}", r.r2_linear);
        assert!(r.r2_kernel > 0.999, "{}", r.r2_kernel);
        assert!((r.linear.coefficients[0][0] + 118.0).abs() < 1e-8);
    }

    #[test]
    fn constant_coordinates_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = probe_embeddings(&random(20, 2, &mut rng), &random(20, 2, &mut rng), &[(1.0, 2.0); 20]).unwrap();
        assert_eq!(r.r2_linear, 0.0);
        assert_eq!(r.r2_kernel, 0.0);
    }

    #[test]
    fn underdetermined_fit_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coords: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, (i * i) as f64)).collect();
        let r = probe_embeddings(&random(5, 3, &mut rng), &random(5, 3, &mut rng), &coords).unwrap();
        assert!(r.linear.note.is_some());
        assert!(r.r2_linear <= 1.0 + 1e-12);
    }

    #[test]
    fn tan_is_clipped() {
        let k = trig_kernel(&[vec![std::f64::consts::FRAC_PI_2]]);
        assert_eq!(k[0].len(), 4);
        assert!(k[0][3].abs() <= TAN_CLIP);
    }
}
