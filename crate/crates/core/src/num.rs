//! Scalar abstraction and the small dense linear algebra kernels the network
//! is built from.
//!
//! The network runs in f32 for training and generation and in f64 for
//! gradient checking, so everything numeric is generic over [`Scalar`].
//! Accumulation order inside each kernel is fixed; results are reproducible
//! bit-for-bit for a given scalar type.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Floating-point element type of network parameters and activations.
pub trait Scalar:
    Float + Sum + Send + Sync + Debug + Display + Default + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(T::zero());
    }
}

/// Dot product with four independent accumulators so LLVM can vectorize it.
/// The summation order is fixed and identical for every call site.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc0 = T::zero();
    let mut acc1 = T::zero();
    let mut acc2 = T::zero();
    let mut acc3 = T::zero();
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc0 = acc0 + x[0] * y[0];
        acc1 = acc1 + x[1] * y[1];
        acc2 = acc2 + x[2] * y[2];
        acc3 = acc3 + x[3] * y[3];
    }
    let mut s = (acc0 + acc1) + (acc2 + acc3);
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        s = s + *x * *y;
    }
    s
}

/// `out += m * x`
#[inline]
pub fn matvec_acc<T: Scalar>(m: &Mat<T>, x: &[T], out: &mut [T]) {
    debug_assert_eq!(m.cols, x.len());
    debug_assert_eq!(m.rows, out.len());
    for (o, row) in out.iter_mut().zip(m.data.chunks_exact(m.cols)) {
        *o = *o + dot(row, x);
    }
}

/// `out += m^T * g` (pushes a gradient back through `m`).
#[inline]
pub fn matvec_t_acc<T: Scalar>(m: &Mat<T>, g: &[T], out: &mut [T]) {
    debug_assert_eq!(m.rows, g.len());
    debug_assert_eq!(m.cols, out.len());
    for (&gr, row) in g.iter().zip(m.data.chunks_exact(m.cols)) {
        for (o, &w) in out.iter_mut().zip(row) {
            *o = *o + gr * w;
        }
    }
}

/// Rank-1 update `m += g ⊗ x` (outer product; the weight-gradient kernel).
#[inline]
pub fn outer_acc<T: Scalar>(m: &mut Mat<T>, g: &[T], x: &[T]) {
    debug_assert_eq!(m.rows, g.len());
    debug_assert_eq!(m.cols, x.len());
    for (&gr, row) in g.iter().zip(m.data.chunks_exact_mut(m.cols)) {
        for (o, &v) in row.iter_mut().zip(x) {
            *o = *o + gr * v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..13).map(|i| i as f64 * 0.25 - 1.0).collect();
        let b: Vec<f64> = (0..13).map(|i| (i as f64).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn matvec_and_transpose_agree_with_naive() {
        let m = Mat {
            rows: 3,
            cols: 2,
            data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        };
        let x = [10.0, 20.0];
        let mut y = [0.0; 3];
        matvec_acc(&m, &x, &mut y);
        assert_eq!(y, [50.0, 110.0, 170.0]);

        let g = [1.0, 1.0, 1.0];
        let mut xt = [0.0; 2];
        matvec_t_acc(&m, &g, &mut xt);
        assert_eq!(xt, [9.0, 12.0]);
    }

    #[test]
    fn outer_accumulates() {
        let mut m = Mat::<f64>::zeros(2, 3);
        outer_acc(&mut m, &[2.0, -1.0], &[1.0, 0.0, 3.0]);
        assert_eq!(m.data, vec![2.0, 0.0, 6.0, -1.0, 0.0, -3.0]);
    }
}
