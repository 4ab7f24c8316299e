//! Scalar abstraction for the tensor engine.
//!
//! Everything numeric is written once, generic over [`Scalar`], so the same
//! graph code runs in `f32` for training/sampling and in `f64` for the
//! finite-difference oracles in the test suite.

use num_traits::{Float, FromPrimitive, NumAssignOps};

pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + Default + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// `c += a * b` for row-major `a: m x k`, `b: k x n`, `c: m x n`.
    fn gemm_acc(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(b.len(), k * n);
        debug_assert_eq!(c.len(), m * n);
        for i in 0..m {
            let crow = &mut c[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = a[i * k + p];
                let brow = &b[p * n..(p + 1) * n];
                for j in 0..n {
                    crow[j] = aip.mul_add(brow[j], crow[j]);
                }
            }
        }
    }

    fn fr(v: f64) -> Self {
        Self::from_f64(v).expect("scalar conversion")
    }

    fn f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar conversion")
    }
}

impl Scalar for f32 {
    fn gemm_acc(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
        assert_eq!(a.len(), m * k);
        assert_eq!(b.len(), k * n);
        assert_eq!(c.len(), m * n);
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                1.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Scalar for f64 {
    fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
        assert_eq!(a.len(), m * k);
        assert_eq!(b.len(), k * n);
        assert_eq!(c.len(), m * n);
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                1.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}
