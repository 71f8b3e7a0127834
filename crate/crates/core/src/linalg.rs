//! Small dense matrices and a pivoted Cholesky factorization.
//!
//! The balance covariates, regressors and estimating functions in this crate
//! are low dimensional (a handful of columns), so a row-major `Vec<f64>` with
//! straightforward loops is all that is needed.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Relative pivot tolerance below which a symmetric matrix is declared singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data has the wrong length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn column_vector(values: &[f64]) -> Self {
        Self::from_vec(values.len(), 1, values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "dimension mismatch in matmul");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "dimension mismatch in mul_vec");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `vᵀ M v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let mv = self.mul_vec(v);
        mv.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    /// Rank-one update `self += w · a bᵀ`.
    pub fn add_outer(&mut self, w: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, ai) in a.iter().enumerate() {
            let wa = w * ai;
            if wa == 0.0 {
                continue;
            }
            let row = self.row_mut(i);
            for (r, bj) in row.iter_mut().zip(b) {
                *r += wa * bj;
            }
        }
    }

    /// Sub-matrix on the given row and column index sets.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                out[(a, b)] = self[(i, j)];
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Cholesky factorization with diagonal pivoting: `P A Pᵀ = L Lᵀ`.
///
/// A pivot below `PIVOT_TOLERANCE · max(diag A)` is treated as zero, in which
/// case factorization fails with [`Error::SingularNormalizer`] carrying the
/// offending pivot.
#[derive(Debug, Clone)]
pub struct SymFactor {
    n: usize,
    perm: Vec<usize>,
    lower: Matrix,
}

impl SymFactor {
    pub fn new(a: &Matrix) -> Result<Self> {
        assert!(a.is_square(), "factorization needs a square matrix");
        let n = a.rows();
        let mut work = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = (0..n).fold(0.0_f64, |m, i| m.max(a[(i, i)].abs()));
        if n > 0 && !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::SingularNormalizer { smallest_pivot: if scale.is_finite() { 0.0 } else { f64::NAN } });
        }
        let tol = PIVOT_TOLERANCE * scale;
        let mut lower = Matrix::zeros(n, n);
        for k in 0..n {
            // choose the largest remaining diagonal entry
            let mut best = k;
            for i in k + 1..n {
                if work[(i, i)] > work[(best, best)] {
                    best = i;
                }
            }
            if best != k {
                swap_sym(&mut work, k, best);
                perm.swap(k, best);
                for j in 0..k {
                    let t = lower[(k, j)];
                    lower[(k, j)] = lower[(best, j)];
                    lower[(best, j)] = t;
                }
            }
            let pivot = work[(k, k)];
            if !(pivot > tol) {
                return Err(Error::SingularNormalizer { smallest_pivot: pivot });
            }
            let d = libm::sqrt(pivot);
            lower[(k, k)] = d;
            for i in k + 1..n {
                lower[(i, k)] = work[(i, k)] / d;
            }
            for i in k + 1..n {
                for j in k + 1..=i {
                    let v = work[(i, j)] - lower[(i, k)] * lower[(j, k)];
                    work[(i, j)] = v;
                    work[(j, i)] = v;
                }
            }
        }
        Ok(Self { n, perm, lower })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Smallest diagonal entry of `L`, squared.
    pub fn smallest_pivot(&self) -> f64 {
        (0..self.n).map(|i| self.lower[(i, i)] * self.lower[(i, i)]).fold(f64::INFINITY, f64::min)
    }

    /// `L⁻¹ P b`, the whitened vector; `bᵀ A⁻¹ b` is its squared norm.
    pub fn whiten(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..self.n {
            let mut s = y[i];
            for j in 0..i {
                s -= self.lower[(i, j)] * y[j];
            }
            y[i] = s / self.lower[(i, i)];
        }
        y
    }

    /// `bᵀ A⁻¹ b`.
    pub fn inv_quad_form(&self, b: &[f64]) -> f64 {
        self.whiten(b).iter().map(|v| v * v).sum()
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let mut y = self.whiten(b);
        for i in (0..self.n).rev() {
            let mut s = y[i];
            for j in i + 1..self.n {
                s -= self.lower[(j, i)] * y[j];
            }
            y[i] = s / self.lower[(i, i)];
        }
        let mut x = vec![0.0; self.n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }

    /// Solves `A X = B` column by column.
    pub fn solve(&self, b: &Matrix) -> Matrix {
        assert_eq!(b.rows(), self.n);
        let mut out = Matrix::zeros(self.n, b.cols());
        for j in 0..b.cols() {
            let x = self.solve_vec(&b.column(j));
            for i in 0..self.n {
                out[(i, j)] = x[i];
            }
        }
        out
    }

    pub fn inverse(&self) -> Matrix {
        self.solve(&Matrix::identity(self.n))
    }
}

fn swap_sym(a: &mut Matrix, i: usize, j: usize) {
    let n = a.rows();
    for k in 0..n {
        let t = a[(i, k)];
        a[(i, k)] = a[(j, k)];
        a[(j, k)] = t;
    }
    for k in 0..n {
        let t = a[(k, i)];
        a[(k, i)] = a[(k, j)];
        a[(k, j)] = t;
    }
}
