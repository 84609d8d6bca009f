//! Plain loop kernels shared by forward and backward passes.

/// `c[m×n] += a[m×p] · b[p×n]`
pub(crate) fn mm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, p: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for k in 0..p {
            let av = a[i * p + k];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[k * n..(k + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `out[p×n] += aᵀ · g` with `a[m×p]`, `g[m×n]`.
pub(crate) fn mm_at_b(a: &[f64], g: &[f64], out: &mut [f64], m: usize, p: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for k in 0..p {
            let av = a[i * p + k];
            if av == 0.0 {
                continue;
            }
            let o_row = &mut out[k * n..(k + 1) * n];
            for (ov, &gv) in o_row.iter_mut().zip(g_row) {
                *ov += av * gv;
            }
        }
    }
}

/// `out[m×p] += g · bᵀ` with `g[m×n]`, `b[p×n]`.
pub(crate) fn mm_a_bt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, p: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for k in 0..p {
            let b_row = &b[k * n..(k + 1) * n];
            let dot: f64 = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            out[i * p + k] += dot;
        }
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn mish(x: f64) -> f64 {
    x * softplus(x).tanh()
}

pub(crate) fn mish_grad(x: f64) -> f64 {
    let t = softplus(x).tanh();
    t + x * (1.0 - t * t) * sigmoid(x)
}
