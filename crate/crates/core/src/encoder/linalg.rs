//! Small dense kernels over row-major `f64` slices.
//!
//! Inner loops are written axpy-style (contiguous row updates) so they
//! vectorize without reassociating floating-point sums; results are
//! therefore bitwise reproducible.

/// `out (n x m) = a (n x k) * b (k x m)`
pub fn matmul(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    out.fill(0.0);
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(m)) {
        for (&av, b_row) in a_row.iter().zip(b.chunks_exact(m)) {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out = a * b + bias` with `bias` broadcast over rows.
pub fn affine(a: &[f64], w: &[f64], bias: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    matmul(a, w, out, n, k, m);
    for row in out.chunks_exact_mut(m) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

/// `out (k x m) += a^T * b` where `a` is `n x k` and `b` is `n x m`.
pub fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), n * m);
    debug_assert_eq!(out.len(), k * m);
    for (a_row, b_row) in a.chunks_exact(k).zip(b.chunks_exact(m)) {
        for (&av, out_row) in a_row.iter().zip(out.chunks_exact_mut(m)) {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out (n x m) = a (n x k) * b^T` where `b` is `m x k`.
pub fn matmul_nt(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    let bt = transpose(b, m, k);
    matmul(a, &bt, out, n, k, m);
}

/// `out (n x m) += a (n x k) * b^T` where `b` is `m x k`.
pub fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    debug_assert_eq!(out.len(), n * m);
    let bt = transpose(b, m, k);
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(m)) {
        for (&av, b_row) in a_row.iter().zip(bt.chunks_exact(m)) {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// Adds column sums of `a (n x m)` into `out (m)`.
pub fn colsum_acc(a: &[f64], out: &mut [f64], m: usize) {
    for row in a.chunks_exact(m) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}
