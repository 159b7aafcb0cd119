//! Slice-level numeric kernels. All matrices are row-major.
//!
//! Every output element of the matrix products is a left-to-right dot
//! product over the shared dimension, so a row computed alone is bitwise
//! equal to the same row computed as part of a larger product.

use super::Scalar;

/// `out[m×n] = a[m×k] · b[k×n]`
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// `out[m×n] = a[m×k] · b[n×k]ᵀ`
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
    out
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub fn matmul_tn_acc<T: Scalar>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Same-length 1-D convolution with zero padding of `(k-1)/2` on each side.
///
/// `x` is `n×d_in`, `w` is `k×d_in×d_out`, `b` is `d_out`; output is `n×d_out`.
pub fn conv1d_same<T: Scalar>(
    x: &[T],
    w: &[T],
    b: &[T],
    n: usize,
    k: usize,
    d_in: usize,
    d_out: usize,
) -> Vec<T> {
    let pad = (k - 1) / 2;
    let mut out = vec![T::zero(); n * d_out];
    for i in 0..n {
        let orow = &mut out[i * d_out..(i + 1) * d_out];
        orow.copy_from_slice(b);
        for t in 0..k {
            let Some(src) = (i + t).checked_sub(pad).filter(|&s| s < n) else {
                continue;
            };
            let xrow = &x[src * d_in..(src + 1) * d_in];
            let wt = &w[t * d_in * d_out..(t + 1) * d_in * d_out];
            for (c, &xv) in xrow.iter().enumerate() {
                let wrow = &wt[c * d_out..(c + 1) * d_out];
                for (o, &wv) in orow.iter_mut().zip(wrow) {
                    *o = *o + xv * wv;
                }
            }
        }
    }
    out
}

/// Gradients of [`conv1d_same`]; accumulates into `dx`, `dw`, `db`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_same_backward<T: Scalar>(
    dout: &[T],
    x: &[T],
    w: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
    n: usize,
    k: usize,
    d_in: usize,
    d_out: usize,
) {
    let pad = (k - 1) / 2;
    if let Some(db) = db {
        for i in 0..n {
            for (g, &d) in db.iter_mut().zip(&dout[i * d_out..(i + 1) * d_out]) {
                *g = *g + d;
            }
        }
    }
    let mut dx = dx;
    let mut dw = dw;
    for i in 0..n {
        let drow = &dout[i * d_out..(i + 1) * d_out];
        for t in 0..k {
            let Some(src) = (i + t).checked_sub(pad).filter(|&s| s < n) else {
                continue;
            };
            let off = t * d_in * d_out;
            if let Some(dx) = dx.as_deref_mut() {
                for c in 0..d_in {
                    let wrow = &w[off + c * d_out..off + (c + 1) * d_out];
                    dx[src * d_in + c] = dx[src * d_in + c] + dot(wrow, drow);
                }
            }
            if let Some(dw) = dw.as_deref_mut() {
                for c in 0..d_in {
                    let xv = x[src * d_in + c];
                    let grow = &mut dw[off + c * d_out..off + (c + 1) * d_out];
                    for (g, &d) in grow.iter_mut().zip(drow) {
                        *g = *g + xv * d;
                    }
                }
            }
        }
    }
}

/// Softmax along the middle axis of an `outer × len × inner` view, with
/// per-lane max subtraction.
pub fn softmax_axis<T: Scalar>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for j in 0..inner {
            let idx = |a: usize| (o * len + a) * inner + j;
            let max = (0..len).map(|a| x[idx(a)]).fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for a in 0..len {
                let e = (x[idx(a)] - max).exp();
                out[idx(a)] = e;
                sum = sum + e;
            }
            for a in 0..len {
                out[idx(a)] = out[idx(a)] / sum;
            }
        }
    }
    out
}

/// Row-wise softmax of a `rows × cols` matrix over the columns where
/// `mask[col]` is true. Masked entries are exactly zero. Returns `None` when
/// no column is unmasked.
pub fn masked_softmax_rows<T: Scalar>(
    x: &[T],
    rows: usize,
    cols: usize,
    mask: &[bool],
) -> Option<Vec<T>> {
    if !mask.iter().any(|&m| m) {
        return None;
    }
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let or = &mut out[r * cols..(r + 1) * cols];
        let max = xr
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for ((o, &v), &m) in or.iter_mut().zip(xr).zip(mask) {
            if m {
                *o = (v - max).exp();
                sum = sum + *o;
            }
        }
        for o in or.iter_mut() {
            *o = *o / sum;
        }
    }
    Some(out)
}

/// Row-wise log-softmax of a `rows × cols` matrix.
pub fn log_softmax_rows<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let max = xr.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = xr.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(xr) {
            *o = v - lse;
        }
    }
    out
}
