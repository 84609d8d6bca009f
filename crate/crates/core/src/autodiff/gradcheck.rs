//! Central-difference gradient oracle.

use crate::array::Array;
use crate::error::{Error, Result};

use super::{Graph, NodeId};

/// Worst coordinate found by a gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
}

const DENOM_FLOOR: f64 = 1e-8;

/// `(f(x+hᵢeᵢ) − f(x−hᵢeᵢ)) / 2hᵢ` per coordinate, with `hᵢ = h·max(1,|xᵢ|)`.
pub fn central_difference_gradient<F>(f: F, x0: &Array, h: f64) -> Result<Array>
where
    F: Fn(&Array) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Param(format!("finite-difference step must be positive, got {h}")));
    }
    let mut x = x0.clone();
    let mut grad = Array::zeros(x0.shape());
    for i in 0..x0.len() {
        let orig = x0.data()[i];
        let step = h * orig.abs().max(1.0);
        x.data_mut()[i] = orig + step;
        let plus = f(&x)?;
        x.data_mut()[i] = orig - step;
        let minus = f(&x)?;
        x.data_mut()[i] = orig;
        for value in [plus, minus] {
            if !value.is_finite() {
                return Err(Error::Oracle {
                    coordinate: i,
                    value,
                });
            }
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

/// Max relative error `|a − n| / max(|a|, |n|, 1e-8)` over coordinates.
pub fn compare_gradients(analytic: &Array, numeric: &Array) -> Result<GradCheck> {
    if analytic.shape() != numeric.shape() {
        return Err(Error::shape("compare_gradients", analytic.shape(), numeric.shape()));
    }
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_coordinate: 0,
        analytic: analytic.data().first().copied().unwrap_or(0.0),
        numeric: numeric.data().first().copied().unwrap_or(0.0),
    };
    for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let denom = a.abs().max(n.abs()).max(DENOM_FLOOR);
        let rel = (a - n).abs() / denom;
        if rel > worst.max_rel_error {
            worst = GradCheck {
                max_rel_error: rel,
                worst_coordinate: i,
                analytic: a,
                numeric: n,
            };
        }
    }
    Ok(worst)
}

/// Checks the reverse-mode gradient of a scalar function against central
/// differences. `build` receives a fresh graph and the input leaf and must
/// return the scalar output node.
pub fn finite_difference_check<F>(build: F, x0: &Array, h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let x = g.param(x0.clone());
    let y = build(&mut g, x)?;
    g.backward(y)?;
    let analytic = g.grad(x).cloned().unwrap_or_else(|| Array::zeros(x0.shape()));

    let numeric = central_difference_gradient(
        |xp| {
            let mut g = Graph::new();
            let x = g.param(xp.clone());
            let y = build(&mut g, x)?;
            Ok(g.value(y).item())
        },
        x0,
        h,
    )?;
    compare_gradients(&analytic, &numeric)
}
