//! Dense row-major matrices over `f64`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Above this many multiply-adds, matrix products split rows across threads.
/// Each output row is still computed in a fixed sequential order, so results
/// are bitwise identical to the serial path.
const PAR_WORK_THRESHOLD: usize = 1 << 21;

/// Dense row-major matrix of `f64` values.
///
/// Entries are validated to be finite on construction and deserialization;
/// all arithmetic assumes (and preserves, for well-scaled inputs) that
/// invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = NumericsError;

    fn try_from(raw: RawMatrix) -> Result<Self, NumericsError> {
        Matrix::from_vec(raw.rows, raw.cols, raw.data)
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, checking length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite {
                row: if cols == 0 { 0 } else { idx / cols },
                col: if cols == 0 { 0 } else { idx % cols },
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Internal constructor for values produced by our own arithmetic.
    pub(crate) fn new_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new_unchecked(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new_unchecked(rows, cols, data)
    }

    /// Builds a column vector (n×1).
    pub fn col_vec(data: Vec<f64>) -> Self {
        Self::new_unchecked(data.len(), 1, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Copies rows `start..end` into a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.rows, "row slice out of range");
        let data = self.data[start * self.cols..end * self.cols].to_vec();
        Matrix::new_unchecked(end - start, self.cols, data)
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix::new_unchecked(indices.len(), self.cols, data)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let (m, k, n) = (self.rows, self.cols, rhs.cols);
        let mut out = Matrix::zeros(m, n);
        let body = |i: usize, out_row: &mut [f64]| {
            let a_row = self.row(i);
            for (l, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = rhs.row(l);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        };
        if m * k * n >= PAR_WORK_THRESHOLD {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, r)| body(i, r));
        } else {
            out.data
                .chunks_mut(n)
                .enumerate()
                .for_each(|(i, r)| body(i, r));
        }
        out
    }

    /// `self * rhs^T`; cheaper than materializing the transpose when `rhs`
    /// stores the rows we dot against (e.g. weight matrices in out×in layout).
    pub fn matmul_transb(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.cols,
            "matmul_transb shape mismatch: {}x{} * ({}x{})^T",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let (m, k, n) = (self.rows, self.cols, rhs.rows);
        let mut out = Matrix::zeros(m, n);
        let body = |i: usize, out_row: &mut [f64]| {
            let a_row = self.row(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = rhs.row(j);
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                *o = acc;
            }
        };
        if m * k * n >= PAR_WORK_THRESHOLD {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, r)| body(i, r));
        } else {
            out.data
                .chunks_mut(n)
                .enumerate()
                .for_each(|(i, r)| body(i, r));
        }
        out
    }

    /// `self^T * rhs`, accumulated row by row of the operands.
    pub fn matmul_transa(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.rows, rhs.rows,
            "matmul_transa shape mismatch: ({}x{})^T * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let (m, n) = (self.cols, rhs.cols);
        let mut out = Matrix::zeros(m, n);
        for l in 0..self.rows {
            let a_row = self.row(l);
            let b_row = rhs.row(l);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(i);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn add(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a + b)
            .collect();
        Matrix::new_unchecked(self.rows, self.cols, data)
    }

    pub fn sub(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "sub shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a - b)
            .collect();
        Matrix::new_unchecked(self.rows, self.cols, data)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Matrix::new_unchecked(self.rows, self.cols, data)
    }

    /// Adds `v` to every row in place (bias broadcast).
    pub fn add_row_inplace(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.cols, "row broadcast length mismatch");
        for row in self.data.chunks_mut(self.cols) {
            for (o, &b) in row.iter_mut().zip(v) {
                *o += b;
            }
        }
    }

    pub fn col_means(&self) -> Vec<f64> {
        assert!(self.rows > 0, "col_means on empty matrix");
        let mut means = vec![0.0; self.cols];
        for row in self.data.chunks(self.cols) {
            for (m, &v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.rows as f64;
        for m in &mut means {
            *m /= n;
        }
        means
    }

    /// Subtracts column means; returns the centered matrix and the means.
    pub fn center_cols(&self) -> (Matrix, Vec<f64>) {
        let means = self.col_means();
        let mut out = self.clone();
        for row in out.data.chunks_mut(out.cols) {
            for (o, &m) in row.iter_mut().zip(&means) {
                *o -= m;
            }
        }
        (out, means)
    }

    /// Sample covariance (divides by n−1) of the columns.
    pub fn covariance(&self) -> Matrix {
        assert!(self.rows > 1, "covariance needs at least two rows");
        let (centered, _) = self.center_cols();
        centered
            .matmul_transa(&centered)
            .scale(1.0 / (self.rows as f64 - 1.0))
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}
