//! Evaluation metrics: correlation-based latent matching (MCC), label scores
//! (average R², average accuracy), and refit linear/logistic readouts.

mod hungarian;

pub use hungarian::{assignment_total, hungarian_max};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::TaskType;
use crate::numerics::{sigmoid, solve_linear, Matrix, NumericsError};

/// Ridge stabilizer for the closed-form linear readout.
const RIDGE_LAMBDA: f64 = 1e-6;
const LOGISTIC_ITERS: usize = 2000;
const LOGISTIC_LR: f64 = 0.1;
const LOGISTIC_GRAD_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("row counts differ: {a} vs {b}")]
    RowMismatch { a: usize, b: usize },
    #[error("task {task} has zero variance")]
    ZeroVarianceTask { task: usize },
    #[error("entry at ({row}, {col}) is {value}, not 0 or 1")]
    NotBinary { row: usize, col: usize, value: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Erm,
    ErmPca,
    ErmIca,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::ErmPca => "erm_pca",
            Method::ErmIca => "erm_ica",
        }
    }

    pub const ALL: [Method; 3] = [Method::Erm, Method::ErmPca, Method::ErmIca];
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One evaluated (method, cell) result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub method: Method,
    pub task_type: TaskType,
    pub d: usize,
    pub k: usize,
    pub seed: u64,
    /// Average R² (regression) or average accuracy (classification) on the
    /// test split.
    pub label_score: f64,
    /// Mean correlation coefficient between true and recovered latents.
    pub mcc: f64,
    /// Convergence flag of the ICA fit; absent for other methods.
    pub ica_converged: Option<bool>,
    pub wall_time_s: f64,
}

/// Pearson correlation matrix between columns of `z` (true latents) and
/// columns of `zhat` (recovered): ρ[i][j] = corr(z_i, ẑ_j).
///
/// A column with (numerically) zero variance yields zero correlations and a
/// warning instead of an error: a collapsed representation should score
/// poorly, not crash the run.
pub fn corr_matrix(z: &Matrix, zhat: &Matrix) -> Result<Matrix, MetricsError> {
    if z.rows() != zhat.rows() {
        return Err(MetricsError::RowMismatch {
            a: z.rows(),
            b: zhat.rows(),
        });
    }
    if z.rows() < 3 {
        return Err(MetricsError::TooFewRows {
            need: 3,
            got: z.rows(),
        });
    }
    let n = z.rows() as f64;
    let stats = |m: &Matrix| -> (Vec<f64>, Vec<f64>, Vec<bool>) {
        let means = m.col_means();
        let mut stds = vec![0.0; m.cols()];
        for i in 0..m.rows() {
            for ((s, &v), &mu) in stds.iter_mut().zip(m.row(i)).zip(&means) {
                let c = v - mu;
                *s += c * c;
            }
        }
        let mut degenerate = vec![false; m.cols()];
        for (j, s) in stds.iter_mut().enumerate() {
            *s = (*s / (n - 1.0)).sqrt();
            if *s < 1e-12 * (1.0 + means[j].abs()) {
                degenerate[j] = true;
                eprintln!("warning: column {j} has zero variance; correlations set to 0");
            }
        }
        (means, stds, degenerate)
    };
    let (mz, sz, dz) = stats(z);
    let (mh, sh, dh) = stats(zhat);

    let mut rho = Matrix::zeros(z.cols(), zhat.cols());
    for i in 0..z.cols() {
        for j in 0..zhat.cols() {
            if dz[i] || dh[j] {
                continue;
            }
            let mut acc = 0.0;
            for row in 0..z.rows() {
                acc += (z.get(row, i) - mz[i]) * (zhat.get(row, j) - mh[j]);
            }
            rho.set(i, j, acc / ((n - 1.0) * sz[i] * sh[j]));
        }
    }
    Ok(rho)
}

/// Matches components by maximizing total absolute correlation and returns
/// the mean of the matched absolute correlations.
///
/// Non-square correlation matrices (a transform projected out rank-deficient
/// directions) are zero-padded to square before matching; unmatched true
/// components then contribute zero, and the mean is taken over the true
/// latent count.
pub fn mcc_from_corr(rho: &Matrix) -> f64 {
    let (d1, d2) = rho.shape();
    if d1 == 0 || d2 == 0 {
        return 0.0;
    }
    let s = d1.max(d2);
    let abs = Matrix::from_fn(s, s, |i, j| {
        if i < d1 && j < d2 {
            rho.get(i, j).abs()
        } else {
            0.0
        }
    });
    let assignment = hungarian_max(&abs);
    let total: f64 = assignment
        .iter()
        .take(d1)
        .enumerate()
        .map(|(i, &j)| abs.get(i, j))
        .sum();
    total / d1 as f64
}

/// Mean correlation coefficient between true latents and a recovered
/// representation, evaluated with the optimal absolute-correlation matching.
pub fn mcc(z: &Matrix, zhat: &Matrix) -> Result<f64, MetricsError> {
    Ok(mcc_from_corr(&corr_matrix(z, zhat)?))
}

/// Average coefficient of determination over tasks.
pub fn r2_avg(y: &Matrix, yhat: &Matrix) -> Result<f64, MetricsError> {
    if y.shape() != yhat.shape() {
        return Err(MetricsError::RowMismatch {
            a: y.rows(),
            b: yhat.rows(),
        });
    }
    if y.rows() < 2 {
        return Err(MetricsError::TooFewRows {
            need: 2,
            got: y.rows(),
        });
    }
    let means = y.col_means();
    let mut total = 0.0;
    for j in 0..y.cols() {
        let mut ss_res = 0.0;
        let mut ss_tot = 0.0;
        for i in 0..y.rows() {
            let r = y.get(i, j) - yhat.get(i, j);
            ss_res += r * r;
            let c = y.get(i, j) - means[j];
            ss_tot += c * c;
        }
        if ss_tot == 0.0 {
            return Err(MetricsError::ZeroVarianceTask { task: j });
        }
        total += 1.0 - ss_res / ss_tot;
    }
    Ok(total / y.cols() as f64)
}

/// Average per-task fraction of exact matches between binary labels.
pub fn accuracy_avg(y: &Matrix, yhat: &Matrix) -> Result<f64, MetricsError> {
    if y.shape() != yhat.shape() {
        return Err(MetricsError::RowMismatch {
            a: y.rows(),
            b: yhat.rows(),
        });
    }
    for (m, _) in [(y, "labels"), (yhat, "predictions")] {
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 && v != 1.0 {
                    return Err(MetricsError::NotBinary {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
    }
    let n = y.rows() as f64;
    let mut total = 0.0;
    for j in 0..y.cols() {
        let mut hits = 0usize;
        for i in 0..y.rows() {
            if y.get(i, j) == yhat.get(i, j) {
                hits += 1;
            }
        }
        total += hits as f64 / n;
    }
    Ok(total / y.cols() as f64)
}

/// Thresholds probabilities (or sigmoided logits) at 0.5 into {0, 1}.
pub fn threshold_probs(probs: &Matrix) -> Matrix {
    probs.map(|p| if p >= 0.5 { 1.0 } else { 0.0 })
}

/// Affine readout refit on a (possibly transformed) representation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Readout {
    pub task_type: TaskType,
    /// k×d weights.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Readout {
    /// Raw affine outputs (regression predictions or logits).
    pub fn predict_linear(&self, r: &Matrix) -> Matrix {
        let mut out = r.matmul_transb(&self.weight);
        out.add_row_inplace(&self.bias);
        out
    }
}

/// Fits a label predictor on train-split representations and scores it on
/// the test split: ridge-stabilized least squares + average R² for
/// regression, per-task full-batch logistic regression + average accuracy
/// for classification.
pub fn downstream_readout(
    r_train: &Matrix,
    y_train: &Matrix,
    r_test: &Matrix,
    y_test: &Matrix,
    task_type: TaskType,
) -> Result<(Readout, f64), MetricsError> {
    if r_train.rows() != y_train.rows() {
        return Err(MetricsError::RowMismatch {
            a: r_train.rows(),
            b: y_train.rows(),
        });
    }
    match task_type {
        TaskType::Regression => {
            let readout = fit_linear(r_train, y_train)?;
            let score = r2_avg(y_test, &readout.predict_linear(r_test))?;
            Ok((readout, score))
        }
        TaskType::Classification => {
            let readout = fit_logistic(r_train, y_train)?;
            let probs = readout.predict_linear(r_test).map(sigmoid);
            let score = accuracy_avg(y_test, &threshold_probs(&probs))?;
            Ok((readout, score))
        }
    }
}

/// Closed-form ridge regression with intercept: the normal equations are
/// solved on centered data with a tiny diagonal stabilizer.
fn fit_linear(r: &Matrix, y: &Matrix) -> Result<Readout, MetricsError> {
    let (rc, r_means) = r.center_cols();
    let (yc, y_means) = y.center_cols();
    let mut gram = rc.matmul_transa(&rc);
    for i in 0..gram.rows() {
        let v = gram.get(i, i) + RIDGE_LAMBDA;
        gram.set(i, i, v);
    }
    let rhs = rc.matmul_transa(&yc);
    let coef = solve_linear(&gram, &rhs)?; // d×k
    let weight = coef.transpose(); // k×d
    let mut bias = y_means;
    for (j, b) in bias.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, &rm) in r_means.iter().enumerate() {
            acc += weight.get(j, i) * rm;
        }
        *b -= acc;
    }
    Ok(Readout {
        task_type: TaskType::Regression,
        weight,
        bias,
    })
}

/// Per-task logistic regression by full-batch gradient descent on the mean
/// cross-entropy; stops when the gradient ∞-norm falls below tolerance.
fn fit_logistic(r: &Matrix, y: &Matrix) -> Result<Readout, MetricsError> {
    let (n, d) = r.shape();
    let k = y.cols();
    let nf = n as f64;
    let mut weight = Matrix::zeros(k, d);
    let mut bias = vec![0.0; k];
    for task in 0..k {
        let labels = y.column(task);
        for (i, &v) in labels.iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                return Err(MetricsError::NotBinary {
                    row: i,
                    col: task,
                    value: v,
                });
            }
        }
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        for _ in 0..LOGISTIC_ITERS {
            let mut grad_w = vec![0.0; d];
            let mut grad_b = 0.0;
            for i in 0..n {
                let row = r.row(i);
                let logit = b + row.iter().zip(&w).map(|(x, wv)| x * wv).sum::<f64>();
                let err = sigmoid(logit) - labels[i];
                for (g, &x) in grad_w.iter_mut().zip(row) {
                    *g += err * x;
                }
                grad_b += err;
            }
            let mut inf_norm = (grad_b / nf).abs();
            for g in &mut grad_w {
                *g /= nf;
                inf_norm = inf_norm.max(g.abs());
            }
            grad_b /= nf;
            if inf_norm < LOGISTIC_GRAD_TOL {
                break;
            }
            for (wv, g) in w.iter_mut().zip(&grad_w) {
                *wv -= LOGISTIC_LR * g;
            }
            b -= LOGISTIC_LR * grad_b;
        }
        for (j, &wv) in w.iter().enumerate() {
            weight.set(task, j, wv);
        }
        bias[task] = b;
    }
    Ok(Readout {
        task_type: TaskType::Classification,
        weight,
        bias,
    })
}
