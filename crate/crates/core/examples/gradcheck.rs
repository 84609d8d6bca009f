//! Compares reverse-mode gradients with central differences on a few
//! composite expressions built on the tape.

use gswan::autodiff::{finite_difference_check, Activation, Graph, NodeId};
use gswan::Array;

fn weighted(g: &mut Graph, y: NodeId) -> gswan::Result<NodeId> {
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = Array::new(&shape, (0..n).map(|i| 0.3 + 0.1 * i as f64).collect())?;
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn main() -> gswan::Result<()> {
    let x = Array::new(&[3, 4], (0..12).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect())?;

    let softmax = finite_difference_check(
        |g, x| {
            let s = g.activation(x, Activation::Sigmoid);
            let a = g.softmax(s, 0.5, 1)?;
            weighted(g, a)
        },
        &x,
        1e-6,
    )?;
    println!("softmax(sigmoid(x) / 0.5): max rel error {:.2e}", softmax.max_rel_error);

    let m = Array::new(&[4, 3], (0..12).map(|i| (i as f64).sin()).collect())?;
    let gated = finite_difference_check(
        |g, x| {
            let k = g.constant(m.clone());
            let h = g.matmul(x, k)?;
            let t = g.activation(h, Activation::Tanh);
            let s = g.activation(h, Activation::Sigmoid);
            let y = g.mul(t, s)?;
            weighted(g, y)
        },
        &x,
        1e-6,
    )?;
    println!("tanh(xM) * sigmoid(xM): max rel error {:.2e}", gated.max_rel_error);

    let mish = finite_difference_check(
        |g, x| {
            let y = g.activation(x, Activation::Mish);
            let y = g.mean_axis(y, 0)?;
            weighted(g, y)
        },
        &x,
        1e-6,
    )?;
    println!("mean(mish(x)): max rel error {:.2e}", mish.max_rel_error);
    Ok(())
}
