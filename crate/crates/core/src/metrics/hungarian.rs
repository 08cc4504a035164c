//! Maximum-sum assignment between rows and columns of a square score matrix.
//!
//! The core is the O(n³) shortest-augmenting-path algorithm with potentials,
//! run on negated scores. On top of it, `hungarian_max` resolves ties toward
//! the lexicographically smallest permutation by fixing rows in order and
//! certifying that an optimal completion still exists.

use crate::numerics::Matrix;

/// Optimal total of the max-sum assignment on an arbitrary square slice,
/// described by the selected `rows` and `cols` of `score`.
fn max_value_on(score: &Matrix, rows: &[usize], cols: &[usize]) -> f64 {
    debug_assert_eq!(rows.len(), cols.len());
    let n = rows.len();
    if n == 0 {
        return 0.0;
    }
    assignment_min(n, |i, j| -score.get(rows[i], cols[j]))
        .1
        .iter()
        .sum::<f64>()
        * -1.0
}

/// Shortest-augmenting-path min-cost assignment. Returns (col per row,
/// selected costs).
fn assignment_min(n: usize, cost: impl Fn(usize, usize) -> f64) -> (Vec<usize>, Vec<f64>) {
    const INF: f64 = f64::INFINITY;
    // 1-indexed arrays with a dummy column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut match_row = vec![0usize; n + 1]; // row matched to each column
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        match_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = match_row[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[match_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if match_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            match_row[j0] = match_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    let mut picked = vec![0.0; n];
    for j in 1..=n {
        let row = match_row[j] - 1;
        assignment[row] = j - 1;
        picked[row] = cost(row, j - 1);
    }
    (assignment, picked)
}

/// Permutation (column index per row) maximizing the sum of selected score
/// entries; ties resolved toward the lexicographically smallest permutation.
pub fn hungarian_max(score: &Matrix) -> Vec<usize> {
    let d = score.rows();
    assert_eq!(d, score.cols(), "hungarian_max needs a square matrix");
    if d == 0 {
        return Vec::new();
    }
    let all: Vec<usize> = (0..d).collect();
    let best_total = max_value_on(score, &all, &all);
    let tol = 1e-9 * (1.0 + best_total.abs());

    let mut remaining: Vec<usize> = (0..d).collect();
    let mut result = vec![0usize; d];
    let mut fixed_sum = 0.0;
    for row in 0..d {
        let rest_rows: Vec<usize> = ((row + 1)..d).collect();
        let mut chosen = None;
        for (pos, &col) in remaining.iter().enumerate() {
            let rest_cols: Vec<usize> = remaining.iter().copied().filter(|&c| c != col).collect();
            let rest = max_value_on(score, &rest_rows, &rest_cols);
            if fixed_sum + score.get(row, col) + rest >= best_total - tol {
                chosen = Some((pos, col));
                break;
            }
        }
        let (pos, col) = chosen.expect("an optimal completion always exists");
        fixed_sum += score.get(row, col);
        result[row] = col;
        remaining.remove(pos);
    }
    result
}

/// Sum of selected entries for a given assignment.
pub fn assignment_total(score: &Matrix, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| score.get(i, j))
        .sum()
}
