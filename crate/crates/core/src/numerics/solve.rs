//! Dense linear solves by LU factorization with partial pivoting.

use super::{Matrix, NumericsError};

const PIVOT_TOL: f64 = 1e-12;

/// Solves `A x = b` for a square `A`; `b` may carry multiple right-hand-side
/// columns. Fails naming the offending pivot when `A` is singular.
pub fn solve_linear(a: &Matrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(NumericsError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if b.rows() != n {
        return Err(NumericsError::RhsMismatch {
            expected: n,
            got: b.rows(),
        });
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let nrhs = b.cols();

    for k in 0..n {
        // Partial pivoting on the largest remaining entry in column k.
        let mut pivot_row = k;
        let mut pivot_mag = lu.get(k, k).abs();
        for i in (k + 1)..n {
            let mag = lu.get(i, k).abs();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = i;
            }
        }
        if pivot_mag <= PIVOT_TOL {
            return Err(NumericsError::Singular {
                pivot: k,
                magnitude: pivot_mag,
            });
        }
        if pivot_row != k {
            for j in 0..n {
                let t = lu.get(k, j);
                lu.set(k, j, lu.get(pivot_row, j));
                lu.set(pivot_row, j, t);
            }
            for j in 0..nrhs {
                let t = x.get(k, j);
                x.set(k, j, x.get(pivot_row, j));
                x.set(pivot_row, j, t);
            }
        }
        let pivot = lu.get(k, k);
        for i in (k + 1)..n {
            let factor = lu.get(i, k) / pivot;
            if factor == 0.0 {
                continue;
            }
            lu.set(i, k, 0.0);
            for j in (k + 1)..n {
                let v = lu.get(i, j) - factor * lu.get(k, j);
                lu.set(i, j, v);
            }
            for j in 0..nrhs {
                let v = x.get(i, j) - factor * x.get(k, j);
                x.set(i, j, v);
            }
        }
    }

    for k in (0..n).rev() {
        let pivot = lu.get(k, k);
        for j in 0..nrhs {
            let mut acc = x.get(k, j);
            for l in (k + 1)..n {
                acc -= lu.get(k, l) * x.get(l, j);
            }
            x.set(k, j, acc / pivot);
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{rng_normal, RngStream};

    #[test]
    fn identity_system_returns_rhs() {
        let b = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let x = solve_linear(&Matrix::identity(3), &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn scaled_identity_halves_rhs() {
        let a = Matrix::identity(2).scale(2.0);
        let b = Matrix::from_vec(2, 1, vec![4.0, 6.0]).unwrap();
        let x = solve_linear(&a, &b).unwrap();
        assert!((x.get(0, 0) - 2.0).abs() < 1e-14);
        assert!((x.get(1, 0) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn random_8x8_residual_is_tiny() {
        let mut rng = RngStream::new(88);
        // Diagonal boost keeps the random system well conditioned.
        let a = rng_normal(&mut rng, 8, 8, 0.0, 1.0).add(&Matrix::identity(8).scale(4.0));
        let b = rng_normal(&mut rng, 8, 3, 0.0, 1.0);
        let x = solve_linear(&a, &b).unwrap();
        let residual = a.matmul(&x).sub(&b).frob_norm() / b.frob_norm();
        assert!(residual < 1e-8, "relative residual {residual:e}");
    }

    #[test]
    fn singular_matrix_names_the_pivot() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        let b = Matrix::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
        match solve_linear(&a, &b) {
            Err(NumericsError::Singular { pivot, magnitude }) => {
                assert_eq!(pivot, 1);
                assert!(magnitude <= 1e-12);
            }
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn solve_then_multiply_is_identity() {
        let mut rng = RngStream::new(17);
        for trial in 0..20 {
            let n = 2 + (trial % 7);
            let a = rng_normal(&mut rng, n, n, 0.0, 1.0)
                .add(&Matrix::identity(n).scale(3.0 + trial as f64 * 0.1));
            let b = rng_normal(&mut rng, n, 2, 0.0, 1.0);
            let x = solve_linear(&a, &b).unwrap();
            let back = a.matmul(&x);
            let rel = back.sub(&b).frob_norm() / b.frob_norm();
            assert!(rel < 1e-8, "trial {trial}: {rel:e}");
        }
    }
}
