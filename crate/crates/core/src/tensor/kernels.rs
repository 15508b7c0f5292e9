//! Plain slice kernels shared by the tape and the inference paths. All
//! matrices are row-major; every `out` is accumulated into, not overwritten.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..n {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn axpy(out: &mut [f64], alpha: f64, x: &[f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// `out (m×n) += a (m×k) · b (k×n)`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let o = &mut out[i * n..(i + 1) * n];
        let ar = &a[i * k..(i + 1) * k];
        for (p, &av) in ar.iter().enumerate() {
            if av != 0.0 {
                axpy(o, av, &b[p * n..(p + 1) * n]);
            }
        }
    }
}

/// `out (m×n) += a (m×k) · bᵀ` with `b` stored as `n×k`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let o = &mut out[i * n..(i + 1) * n];
        for (j, oj) in o.iter_mut().enumerate() {
            *oj += dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out (m×n) += aᵀ · b` with `a` stored as `p×m` and `b` as `p×n`.
pub fn matmul_tn(a: &[f64], b: &[f64], p: usize, m: usize, n: usize, out: &mut [f64]) {
    for r in 0..p {
        let ar = &a[r * m..(r + 1) * m];
        let br = &b[r * n..(r + 1) * n];
        for (i, &av) in ar.iter().enumerate() {
            if av != 0.0 {
                axpy(&mut out[i * n..(i + 1) * n], av, br);
            }
        }
    }
}

/// Row-wise layer normalization into `out`; returns per-row inverse standard
/// deviations and writes the normalized (pre-affine) rows into `xhat`.
pub fn layer_norm(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    cols: usize,
    eps: f64,
    out: &mut [f64],
    xhat: &mut [f64],
) -> alloc::vec::Vec<f64> {
    let rows = x.len() / cols;
    let mut inv = alloc::vec::Vec::with_capacity(rows);
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let mean = xr.iter().sum::<f64>() / cols as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let is = 1.0 / crate::math::sqrt(var + eps);
        inv.push(is);
        for c in 0..cols {
            let h = (xr[c] - mean) * is;
            xhat[r * cols + c] = h;
            out[r * cols + c] = h * gamma[c] + beta[c];
        }
    }
    inv
}
