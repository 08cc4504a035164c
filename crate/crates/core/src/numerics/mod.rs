//! Deterministic randomness and the dense linear algebra kernels used by
//! every other module.
//!
//! All values are plain `f64` matrices; all routines are pure functions of
//! their inputs so results are reproducible bit-for-bit on one platform.

mod eig;
mod matrix;
mod rng;
mod solve;

pub use eig::{condition_number, sym_eig};
pub use matrix::Matrix;
pub use rng::{derive_seed, rng_normal, RngStream};
pub use solve::solve_linear;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("matrix data length {len} does not match {rows}x{cols}")]
    BadLength {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("matrix entry at ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {delta:e}")]
    NotSymmetric { i: usize, j: usize, delta: f64 },
    #[error("eigendecomposition did not converge within {sweeps} sweeps")]
    EigNoConvergence { sweeps: usize },
    #[error("singular matrix: pivot {pivot} has magnitude {magnitude:e}")]
    Singular { pivot: usize, magnitude: f64 },
    #[error("right-hand side has {got} rows, expected {expected}")]
    RhsMismatch { expected: usize, got: usize },
}

/// Leaky rectifier used by both the data generator and the predictor.
#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// Exact inverse of [`leaky_relu`] for `slope > 0`.
#[inline]
pub fn leaky_relu_inv(y: f64, slope: f64) -> f64 {
    if y >= 0.0 {
        y
    } else {
        y / slope
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
