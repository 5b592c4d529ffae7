//! Hand-written layers with explicit forward and backward passes. All
//! arithmetic is f64; stored parameters are kept f32-representable so that
//! checkpoints round-trip exactly.

pub mod conv1d;
pub mod conv2d;
pub mod gru;

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use conv1d::Conv1d;
pub use conv2d::Conv2d;
pub use gru::{Gru, GruCache};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_data(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor data does not match shape");
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Zero-mean normal draw with the given standard deviation.
    pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("valid std");
        let data = (0..shape.iter().product()).map(|_| dist.sample(rng)).collect();
        Self::from_data(shape, data).rounded_f32()
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let data = (0..shape.iter().product()).map(|_| rng.random_range(-bound..=bound)).collect();
        Self::from_data(shape, data).rounded_f32()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rounded_f32(mut self) -> Self {
        self.round_f32();
        self
    }

    pub fn round_f32(&mut self) {
        self.data.iter_mut().for_each(|x| *x = *x as f32 as f64);
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
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
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a * x`
#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

/// Strided row/column layout of a matrix operand.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub rows: isize,
    pub cols: isize,
}

impl Layout {
    /// Row-major with `n` columns.
    pub fn row_major(n: usize) -> Self {
        Self { rows: n as isize, cols: 1 }
    }

    /// Transpose of a row-major matrix with `n` columns.
    pub fn transposed(n: usize) -> Self {
        Self { rows: 1, cols: n as isize }
    }

    fn check(&self, rows: usize, cols: usize, len: usize, what: &str) {
        if rows == 0 || cols == 0 {
            return;
        }
        let last = (rows - 1) as isize * self.rows + (cols - 1) as isize * self.cols;
        assert!(self.rows >= 0 && self.cols >= 0 && (last as usize) < len, "gemm operand {what} out of bounds");
    }
}

/// `c = alpha·a·b + beta·c` for an `m×k` times `k×n` product.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: &[f64], la: Layout, b: &[f64], lb: Layout, beta: f64, c: &mut [f64], lc: Layout) {
    la.check(m, k, a.len(), "a");
    lb.check(k, n, b.len(), "b");
    lc.check(m, n, c.len(), "c");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every index the kernel touches is bounded by the checks above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            la.rows,
            la.cols,
            b.as_ptr(),
            lb.rows,
            lb.cols,
            beta,
            c.as_mut_ptr(),
            lc.rows,
            lc.cols,
        );
    }
}

pub(crate) fn relu_inplace(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes gradient entries whose forward activation was clipped by ReLU.
pub(crate) fn relu_backward(activation: &[f64], grad: &mut [f64]) {
    grad.iter_mut().zip(activation).for_each(|(g, a)| {
        if *a <= 0.0 {
            *g = 0.0
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_product_with_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut c = vec![1.0; m * n];
        gemm(m, k, n, 1.0, &a, Layout::row_major(k), &b, Layout::row_major(n), 1.0, &mut c, Layout::row_major(n));
        for i in 0..m {
            for j in 0..n {
                let want = 1.0 + (0..k).map(|q| a[i * k + q] * b[q * n + j]).sum::<f64>();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
        // aᵀ·a through a transposed layout
        let mut g = vec![0.0; k * k];
        gemm(k, m, k, 1.0, &a, Layout::transposed(k), &a, Layout::row_major(k), 0.0, &mut g, Layout::row_major(k));
        for i in 0..k {
            for j in 0..k {
                let want: f64 = (0..m).map(|r| a[r * k + i] * a[r * k + j]).sum();
                assert!((g[i * k + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0).is_finite());
        assert!((sigmoid(800.0) - 1.0).abs() < 1e-15);
    }
}
