//! Buffer-level math behind the tape ops. No graph logic here.

use crate::scalar::Scalar;

/// Gather sliding windows of width `width` (stride 1, zero same-padding)
/// from `x: [rows, len, ch]` into `out: [rows*len, width*ch]`.
pub fn unfold1d<T: Scalar>(x: &[T], rows: usize, len: usize, ch: usize, width: usize, out: &mut [T]) {
    debug_assert_eq!(x.len(), rows * len * ch);
    debug_assert_eq!(out.len(), rows * len * width * ch);
    let pad = (width - 1) / 2;
    for r in 0..rows {
        let xr = &x[r * len * ch..(r + 1) * len * ch];
        for l in 0..len {
            let orow = &mut out[(r * len + l) * width * ch..(r * len + l + 1) * width * ch];
            for dk in 0..width {
                let src = l as isize + dk as isize - pad as isize;
                if src >= 0 && (src as usize) < len {
                    let src = src as usize;
                    orow[dk * ch..(dk + 1) * ch].copy_from_slice(&xr[src * ch..(src + 1) * ch]);
                }
            }
        }
    }
}

/// Adjoint of [`unfold1d`]: scatter-add `g: [rows*len, width*ch]` back into
/// `out: [rows, len, ch]`. `out` must be zero-initialized.
pub fn fold1d<T: Scalar>(g: &[T], rows: usize, len: usize, ch: usize, width: usize, out: &mut [T]) {
    debug_assert_eq!(g.len(), rows * len * width * ch);
    debug_assert_eq!(out.len(), rows * len * ch);
    let pad = (width - 1) / 2;
    for r in 0..rows {
        let or = &mut out[r * len * ch..(r + 1) * len * ch];
        for l in 0..len {
            let grow = &g[(r * len + l) * width * ch..(r * len + l + 1) * width * ch];
            for dk in 0..width {
                let dst = l as isize + dk as isize - pad as isize;
                if dst >= 0 && (dst as usize) < len {
                    let dst = dst as usize;
                    for c in 0..ch {
                        or[dst * ch + c] += grow[dk * ch + c];
                    }
                }
            }
        }
    }
}

/// Row-wise softmax with max-subtraction, rows of length `n`.
pub fn softmax_rows<T: Scalar>(x: &[T], n: usize, out: &mut [T]) {
    debug_assert_eq!(x.len() % n, 0);
    for (xr, yr) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let mut m = xr[0];
        for &v in &xr[1..] {
            if v > m {
                m = v;
            }
        }
        let mut s = T::zero();
        for (y, &v) in yr.iter_mut().zip(xr) {
            let e = (v - m).exp();
            *y = e;
            s += e;
        }
        let inv = s.recip();
        for y in yr.iter_mut() {
            *y = *y * inv;
        }
    }
}

pub fn transpose2d<T: Scalar>(x: &[T], m: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(x.len(), m * n);
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x[i * n + j];
        }
    }
}

pub fn row_sum<T: Scalar>(x: &[T], n: usize, out: &mut [T]) {
    for (xr, o) in x.chunks_exact(n).zip(out.iter_mut()) {
        let mut s = T::zero();
        for &v in xr {
            s += v;
        }
        *o = s;
    }
}

pub fn col_sum<T: Scalar>(x: &[T], c: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), c);
    for xr in x.chunks_exact(c) {
        for (o, &v) in out.iter_mut().zip(xr) {
            *o += v;
        }
    }
}
