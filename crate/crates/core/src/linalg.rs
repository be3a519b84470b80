//! Dense row-major matrices and the few kernels the recurrent code needs.
//!
//! Everything is `f64`. Sequential recurrences use the hand-written
//! matrix-vector helpers; whole-sequence products (input projections and
//! weight gradients) go through `matrixmultiply`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Dot product with four independent accumulators. The summation order is
/// fixed, so results are reproducible for identical inputs.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let split = n - n % 4;
    let mut acc = [0.0f64; 4];
    for (ca, cb) in a[..split].chunks_exact(4).zip(b[..split].chunks_exact(4)) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut tail = 0.0;
    for i in split..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out[i] += Σ_j w[i, col0 + j] · v[j]` for `i < out.len()`, `j < v.len()`.
#[inline]
pub fn matvec_acc(w: &Matrix, col0: usize, v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w.row(i)[col0..col0 + n];
        *o += dot(row, v);
    }
}

/// `out[j] += Σ_i w[i, col0 + j] · v[i]` (transposed product over a column block).
#[inline]
pub fn matvec_t_acc(w: &Matrix, col0: usize, v: &[f64], out: &mut [f64]) {
    let n = out.len();
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        let row = &w.row(i)[col0..col0 + n];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += vi * wij;
        }
    }
}

/// Strided view of a dense operand for [`gemm`].
#[derive(Debug, Clone, Copy)]
pub struct View<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> View<'a> {
    /// Row-major `rows × cols` block starting at `offset`, with `ld` elements per row.
    pub fn rm(data: &'a [f64], offset: usize, ld: usize) -> Self {
        Self {
            data,
            offset,
            row_stride: ld,
            col_stride: 1,
        }
    }

    /// Transpose of a row-major block: logical `(r, c)` reads stored `(c, r)`.
    pub fn t(data: &'a [f64], offset: usize, ld: usize) -> Self {
        Self {
            data,
            offset,
            row_stride: 1,
            col_stride: ld,
        }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows == 0 || cols == 0 {
            return;
        }
        let last = self.offset + (rows - 1) * self.row_stride + (cols - 1) * self.col_stride;
        assert!(last < self.data.len(), "gemm operand out of bounds");
    }
}

/// `C[m×n] = alpha · A[m×k] · B[k×n] + beta · C`, with `C` row-major at
/// `c_offset` and leading dimension `ldc`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: View<'_>,
    b: View<'_>,
    beta: f64,
    c: &mut [f64],
    c_offset: usize,
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    a.check(m, k);
    b.check(k, n);
    assert!(c_offset + (m - 1) * ldc + n <= c.len(), "gemm output out of bounds");
    // SAFETY: all three operands were bounds-checked above for the logical
    // extents matrixmultiply will touch, and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr().add(b.offset),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr().add(c_offset),
            ldc as isize,
            1,
        );
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

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|p| a.get(i, p) * b.get(p, j)).sum()
        })
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a = Matrix::from_fn(5, 3, |i, j| (i as f64) - 0.5 * j as f64);
        let b = Matrix::from_fn(3, 4, |i, j| 0.25 * (i * j) as f64 + 1.0);
        let expect = naive(&a, &b);
        let mut c = vec![0.0; 20];
        gemm(5, 3, 4, 1.0, View::rm(a.as_slice(), 0, 3), View::rm(b.as_slice(), 0, 4), 0.0, &mut c, 0, 4);
        for (x, y) in c.iter().zip(expect.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }

        // (Aᵀ)ᵀ·B through the transpose view of a stored 3×5 matrix.
        let at = Matrix::from_fn(3, 5, |i, j| a.get(j, i));
        let mut c2 = vec![1.0; 20];
        gemm(5, 3, 4, 1.0, View::t(at.as_slice(), 0, 5), View::rm(b.as_slice(), 0, 4), 1.0, &mut c2, 0, 4);
        for (x, y) in c2.iter().zip(expect.as_slice()) {
            assert!((x - (y + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn matvec_helpers_use_column_blocks() {
        let w = Matrix::from_fn(2, 5, |i, j| (i * 5 + j) as f64);
        let mut out = vec![0.0; 2];
        matvec_acc(&w, 3, &[1.0, 2.0], &mut out);
        assert_eq!(out, vec![3.0 + 8.0, 8.0 + 18.0]);

        let mut out_t = vec![0.0; 2];
        matvec_t_acc(&w, 1, &[1.0, -1.0], &mut out_t);
        assert_eq!(out_t, vec![1.0 - 6.0, 2.0 - 7.0]);
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (0..7).map(f64::from).collect();
        assert_eq!(dot(&a, &a), 91.0);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0) >= 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }
}
