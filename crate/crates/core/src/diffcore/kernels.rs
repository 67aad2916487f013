//! Numeric kernels shared by the tape and by plain evaluation, so both
//! paths produce bitwise identical values.

/// `out = beta * out + op(a) * op(b)` for row-major buffers, where `op`
/// optionally transposes. `a` is `m x k` after `op`, `b` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    out: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in out.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // stored shapes: a is (m,k) or (k,m); b is (k,n) or (n,k)
    let (rsa, csa) = if trans_a { (1isize, m as isize) } else { (k as isize, 1isize) };
    let (rsb, csb) = if trans_b { (1isize, k as isize) } else { (n as isize, 1isize) };
    // SAFETY: the strides above describe exactly the buffers checked by the
    // debug assertions; matrixmultiply reads `a`, `b` and writes `out` only
    // within those extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `x * w + bias` with `x: [r, i]`, `w: [i, o]`, `bias: [1, o]`.
pub fn affine(x: &[f64], rows: usize, inp: usize, w: &[f64], out_dim: usize, bias: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * out_dim);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    gemm(rows, inp, out_dim, x, false, w, false, 1.0, &mut out);
    out
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 - tanh(u)^2)` without cancellation.
#[inline]
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}
