//! Post-hoc linear maps on learned representations: whitening, PCA, and the
//! fixed-point ICA that searches for mutually independent components.
//!
//! All transforms subtract the column means of the fitting data first and
//! act on rows as `(r − offset)ᵀ ↦ matrix · (r − offset)`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{rng_normal, sym_eig, Matrix, NumericsError, RngStream};

/// Eigenvalues below this fraction of the largest are treated as numerically
/// zero rank and projected out during whitening.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("fitting needs more rows than columns, got {rows}x{cols}")]
    TooFewRows { rows: usize, cols: usize },
    #[error("fitting data has rank zero")]
    RankZero,
    #[error("transform expects {expected} columns, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Whiten,
    Pca,
    Ica,
}

/// A fitted affine map `r ↦ matrix·(r − offset)`. `matrix` is d'×d where
/// d' ≤ d (whitening projects out null directions of the covariance).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearTransform {
    pub kind: TransformKind,
    pub matrix: Matrix,
    /// Column means of the fitting data (d×1).
    pub offset: Matrix,
    /// Whether the fit converged; always true for whiten/pca.
    pub converged: bool,
    /// Fixed-point iterations used; zero for whiten/pca.
    pub iterations: usize,
}

/// Fixed-point ICA settings; the defaults match the experimental protocol
/// (30000 maximum iterations, tolerance 1e-4).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcaSettings {
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_max_iter() -> usize {
    30_000
}

fn default_tol() -> f64 {
    1e-4
}

impl Default for IcaSettings {
    fn default() -> Self {
        IcaSettings {
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }
}

fn check_fit_input(r: &Matrix) -> Result<(), TransformError> {
    if r.rows() <= r.cols() || r.rows() < 2 {
        return Err(TransformError::TooFewRows {
            rows: r.rows(),
            cols: r.cols(),
        });
    }
    Ok(())
}

/// Eigendecomposition of the sample covariance restricted to eigenvalues
/// above `RANK_TOL · λ_max`: (kept eigenvalues, d×d' basis, column means).
fn covariance_basis(r: &Matrix) -> Result<(Vec<f64>, Matrix, Vec<f64>), TransformError> {
    let cov = r.covariance();
    let (vals, vecs) = sym_eig(&cov)?;
    let d = cov.rows();
    let lambda_max = vals.get(0, 0).max(0.0);
    if lambda_max <= 0.0 {
        return Err(TransformError::RankZero);
    }
    let kept: Vec<usize> = (0..d)
        .filter(|&i| vals.get(i, 0) > RANK_TOL * lambda_max)
        .collect();
    let mut basis = Matrix::zeros(d, kept.len());
    let mut kept_vals = Vec::with_capacity(kept.len());
    for (new_col, &old_col) in kept.iter().enumerate() {
        kept_vals.push(vals.get(old_col, 0));
        for row in 0..d {
            basis.set(row, new_col, vecs.get(row, old_col));
        }
    }
    Ok((kept_vals, basis, r.col_means()))
}

/// Whitening `r ↦ Λ⁻¹Uᵀ(r − mean)`: the transformed fitting data has identity
/// covariance. Rank-deficient directions are projected out, so the output
/// dimension can be lower than the input dimension.
pub fn fit_whiten(r: &Matrix) -> Result<LinearTransform, TransformError> {
    check_fit_input(r)?;
    let (vals, basis, means) = covariance_basis(r)?;
    let d = r.cols();
    let dp = vals.len();
    let mut matrix = Matrix::zeros(dp, d);
    for i in 0..dp {
        let inv_sigma = 1.0 / vals[i].sqrt();
        for j in 0..d {
            matrix.set(i, j, basis.get(j, i) * inv_sigma);
        }
    }
    Ok(LinearTransform {
        kind: TransformKind::Whiten,
        matrix,
        offset: Matrix::col_vec(means),
        converged: true,
        iterations: 0,
    })
}

/// PCA rotation `r ↦ Uᵀ(r − mean)`: eigenbasis of the covariance with no
/// variance scaling, eigenvalues in descending order.
pub fn fit_pca(r: &Matrix) -> Result<LinearTransform, TransformError> {
    check_fit_input(r)?;
    let cov = r.covariance();
    let (_, vecs) = sym_eig(&cov)?;
    Ok(LinearTransform {
        kind: TransformKind::Pca,
        matrix: vecs.transpose(),
        offset: Matrix::col_vec(r.col_means()),
        converged: true,
        iterations: 0,
    })
}

/// Symmetric orthogonalization `W ← (WWᵀ)^{−1/2} W`; rows become orthonormal.
fn sym_decorrelate(w: &Matrix) -> Result<Matrix, TransformError> {
    let gram = w.matmul_transb(w);
    let (vals, vecs) = sym_eig(&gram)?;
    let d = w.rows();
    let floor = vals.get(0, 0).max(f64::MIN_POSITIVE) * 1e-14;
    let mut inv_sqrt = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for l in 0..d {
                let lam = vals.get(l, 0).max(floor);
                acc += vecs.get(i, l) * vecs.get(j, l) / lam.sqrt();
            }
            inv_sqrt.set(i, j, acc);
        }
    }
    Ok(inv_sqrt.matmul(w))
}

/// Fixed-point ICA with the log-cosh contrast (g = tanh) and symmetric
/// (parallel) decorrelation, run on internally whitened data.
///
/// The returned transform composes the unmixing rotation with the whitening
/// map. Non-convergence within `settings.max_iter` is not an error: the best
/// iterate is returned with `converged = false` so callers can record it.
pub fn fit_ica(
    rng: &mut RngStream,
    r: &Matrix,
    settings: &IcaSettings,
) -> Result<LinearTransform, TransformError> {
    check_fit_input(r)?;
    let whiten = fit_whiten(r)?;
    let white = apply_transform(&whiten, r)?;
    let n = white.rows();
    let dp = white.cols();

    // Random orthonormal start from the caller's stream.
    let mut w = sym_decorrelate(&rng_normal(rng, dp, dp, 0.0, 1.0))?;

    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=settings.max_iter {
        iterations = iter;
        // Scores S = white · Wᵀ, one column per component.
        let scores = white.matmul_transb(&w);
        let g = scores.map(f64::tanh);
        // E[x·g(wᵀx)] for every component at once: (Gᵀ·white)/n.
        let eg_x = g.matmul_transa(&white).scale(1.0 / n as f64);
        // E[g'(wᵀx)] per component, g' = 1 − tanh².
        let mut mean_gprime = vec![0.0; dp];
        for i in 0..n {
            for (acc, &t) in mean_gprime.iter_mut().zip(g.row(i)) {
                *acc += 1.0 - t * t;
            }
        }
        for acc in &mut mean_gprime {
            *acc /= n as f64;
        }
        let mut update = eg_x;
        for c in 0..dp {
            let w_row = w.row(c).to_vec();
            let row = update.row_mut(c);
            for (u, wv) in row.iter_mut().zip(w_row) {
                *u -= mean_gprime[c] * wv;
            }
        }
        let w_new = sym_decorrelate(&update)?;

        // Convergence: every new row aligned (up to sign) with its old row.
        let mut lim = 0.0f64;
        for c in 0..dp {
            let dot: f64 = w_new.row(c).iter().zip(w.row(c)).map(|(a, b)| a * b).sum();
            lim = lim.max((dot.abs() - 1.0).abs());
        }
        w = w_new;
        if lim < settings.tol {
            converged = true;
            break;
        }
    }

    Ok(LinearTransform {
        kind: TransformKind::Ica,
        matrix: w.matmul(&whiten.matrix),
        offset: whiten.offset,
        converged,
        iterations,
    })
}

/// Applies a fitted transform to rows of `r`: `(r − offsetᵀ) · matrixᵀ`.
pub fn apply_transform(t: &LinearTransform, r: &Matrix) -> Result<Matrix, TransformError> {
    if r.cols() != t.matrix.cols() {
        return Err(TransformError::WidthMismatch {
            expected: t.matrix.cols(),
            got: r.cols(),
        });
    }
    let mut centered = r.clone();
    for i in 0..centered.rows() {
        let row = centered.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v -= t.offset.get(j, 0);
        }
    }
    Ok(centered.matmul_transb(&t.matrix))
}

pub fn save_transform(path: &Path, t: &LinearTransform) -> Result<(), TransformError> {
    fs::write(path, serde_json::to_string_pretty(t)?)?;
    Ok(())
}

pub fn load_transform(path: &Path) -> Result<LinearTransform, TransformError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
