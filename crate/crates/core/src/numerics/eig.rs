//! Symmetric eigendecomposition via cyclic Jacobi rotations.
//!
//! Accurate to near machine precision for the d ≤ 64 matrices this crate
//! works with; everything downstream (whitening, PCA, ICA decorrelation,
//! condition numbers) sits on top of this routine.

use super::{Matrix, NumericsError};

const MAX_SWEEPS: usize = 64;
const SYMMETRY_TOL: f64 = 1e-9;

/// Eigendecomposition `A = V Λ Vᵀ` of a symmetric matrix.
///
/// Returns eigenvalues as a d×1 column in descending order and the matching
/// orthonormal eigenvectors as columns of a d×d matrix. Eigenvector signs are
/// canonicalized so the entry of largest magnitude is positive.
pub fn sym_eig(a: &Matrix) -> Result<(Matrix, Matrix), NumericsError> {
    let d = a.rows();
    if a.cols() != d {
        return Err(NumericsError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let scale = a.max_abs().max(1.0);
    for i in 0..d {
        for j in (i + 1)..d {
            let delta = (a.get(i, j) - a.get(j, i)).abs();
            if delta > SYMMETRY_TOL * scale {
                return Err(NumericsError::NotSymmetric { i, j, delta });
            }
        }
    }
    if d == 0 {
        return Ok((Matrix::zeros(0, 1), Matrix::zeros(0, 0)));
    }

    let mut work = a.clone();
    // Work on the symmetrized matrix so tiny asymmetries cannot bias sweeps.
    for i in 0..d {
        for j in (i + 1)..d {
            let s = 0.5 * (work.get(i, j) + work.get(j, i));
            work.set(i, j, s);
            work.set(j, i, s);
        }
    }
    let mut v = Matrix::identity(d);
    let fro = work.frob_norm().max(f64::MIN_POSITIVE);

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += work.get(i, j) * work.get(i, j);
            }
        }
        if (2.0 * off).sqrt() <= 1e-15 * fro {
            converged = true;
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = work.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = work.get(p, p);
                let aqq = work.get(q, q);
                // Skip rotations that cannot change anything at f64 precision.
                if apq.abs() <= 1e-18 * (app.abs() + aqq.abs()).max(f64::MIN_POSITIVE) {
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut work, &mut v, p, q, c, s);
            }
        }
    }
    if !converged {
        // One last check after the final sweep.
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += work.get(i, j) * work.get(i, j);
            }
        }
        if (2.0 * off).sqrt() > 1e-12 * fro {
            return Err(NumericsError::EigNoConvergence { sweeps: MAX_SWEEPS });
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| work.get(j, j).partial_cmp(&work.get(i, i)).unwrap());

    let eigenvalues = Matrix::col_vec(order.iter().map(|&i| work.get(i, i)).collect());
    let mut vectors = Matrix::zeros(d, d);
    for (new_col, &old_col) in order.iter().enumerate() {
        // Canonical sign: largest-magnitude component positive.
        let mut lead = 0.0f64;
        for i in 0..d {
            let x = v.get(i, old_col);
            if x.abs() > lead.abs() {
                lead = x;
            }
        }
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            vectors.set(i, new_col, sign * v.get(i, old_col));
        }
    }
    Ok((eigenvalues, vectors))
}

/// Applies the Jacobi rotation J(p, q, c, s) as A ← JᵀAJ, V ← VJ.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let d = a.rows();
    for i in 0..d {
        let aip = a.get(i, p);
        let aiq = a.get(i, q);
        a.set(i, p, c * aip - s * aiq);
        a.set(i, q, s * aip + c * aiq);
    }
    for j in 0..d {
        let apj = a.get(p, j);
        let aqj = a.get(q, j);
        a.set(p, j, c * apj - s * aqj);
        a.set(q, j, s * apj + c * aqj);
    }
    for i in 0..d {
        let vip = v.get(i, p);
        let viq = v.get(i, q);
        v.set(i, p, c * vip - s * viq);
        v.set(i, q, s * vip + c * viq);
    }
}

/// 2-norm condition number computed from the singular values of `a`
/// (square roots of the eigenvalues of `aᵀa`).
pub fn condition_number(a: &Matrix) -> Result<f64, NumericsError> {
    let gram = a.matmul_transa(a);
    let (vals, _) = sym_eig(&gram)?;
    let max = vals.get(0, 0).max(0.0);
    let min = vals.get(vals.rows() - 1, 0);
    if min <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((max / min).sqrt())
}
