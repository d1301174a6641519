//! Dense inner loops shared by the forward and reverse passes.

/// Dot product with four independent accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `out = W x + b` for row-major `W` (`out.len()` rows).
#[inline]
pub fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = b[i] + dot(&w[i * cols..(i + 1) * cols], x);
    }
}

/// `out += W x` where only columns `c0..c0+x.len()` of the `cols`-wide `W` are used.
#[inline]
pub fn matvec_cols_acc(w: &[f64], cols: usize, c0: usize, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o += dot(&w[i * cols + c0..i * cols + c0 + x.len()], x);
    }
}

/// `out += Wᵀ y` restricted to columns `c0..c0+out.len()` of the `cols`-wide `W`.
#[inline]
pub fn matvec_t_cols_acc(w: &[f64], cols: usize, c0: usize, y: &[f64], out: &mut [f64]) {
    for (i, &yi) in y.iter().enumerate() {
        if yi == 0.0 {
            continue;
        }
        let row = &w[i * cols + c0..i * cols + c0 + out.len()];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += wv * yi;
        }
    }
}

/// `G[:, c0..c0+x.len()] += y xᵀ` for the `cols`-wide row-major `G`.
#[inline]
pub fn outer_cols_acc(g: &mut [f64], cols: usize, c0: usize, y: &[f64], x: &[f64]) {
    for (i, &yi) in y.iter().enumerate() {
        if yi == 0.0 {
            continue;
        }
        let row = &mut g[i * cols + c0..i * cols + c0 + x.len()];
        for (gv, &xv) in row.iter_mut().zip(x) {
            *gv += yi * xv;
        }
    }
}

#[inline]
pub fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
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

#[inline]
pub fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
