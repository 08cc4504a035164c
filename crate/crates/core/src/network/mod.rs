//! The supervised predictor: a two-block fully connected network with batch
//! normalization and leaky-ReLU activations, a linear head, exact reverse-mode
//! gradients, and SGD with momentum.
//!
//! Layout (latent dimension d, task count k):
//!
//! ```text
//! affine d→100 → batch-norm → leaky-ReLU(0.5)
//! affine 100→d → batch-norm → leaky-ReLU(0.5)   ← representation
//! affine d→k                                    ← output
//! ```

mod train;

pub use train::{
    load_checkpoint, save_checkpoint, train, EpochStats, ModelCheckpoint, TrainConfig, TrainOutput,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{leaky_relu, Matrix, RngStream};

/// Hidden width of the first block.
pub const HIDDEN: usize = 100;
/// Activation slope used by both blocks.
pub const LEAKY_SLOPE: f64 = 0.5;

const BN_MOMENTUM: f64 = 0.1;
const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("train-mode forward needs a batch of at least 2 rows, got {n}")]
    BatchTooSmall { n: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("classification label at ({row}, {col}) is {value}, not 0 or 1")]
    LabelNotBinary { row: usize, col: usize, value: f64 },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Bce,
}

/// Affine layer with weights in out×in layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Affine {
    fn init(rng: &mut RngStream, out_dim: usize, in_dim: usize) -> Self {
        // Fan-in uniform: U(±1/√in).
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut data = Vec::with_capacity(out_dim * in_dim);
        for _ in 0..out_dim * in_dim {
            data.push((rng.next_f64() * 2.0 - 1.0) * bound);
        }
        Affine {
            weight: Matrix::new_unchecked(out_dim, in_dim, data),
            bias: vec![0.0; out_dim],
        }
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let mut out = x.matmul_transb(&self.weight);
        out.add_row_inplace(&self.bias);
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    fn init(dim: usize) -> Self {
        BatchNorm {
            scale: vec![1.0; dim],
            shift: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }

    /// Normalizes with batch statistics; the cache carries everything the
    /// backward pass and the running-stat update need.
    fn forward_train(&self, x: &Matrix) -> BnCache {
        let (n, c) = x.shape();
        let nf = n as f64;
        let mut mean = vec![0.0; c];
        for i in 0..n {
            for (m, &v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= nf;
        }
        let mut var = vec![0.0; c];
        for i in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        for s in &mut var {
            *s /= nf;
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|&v| 1.0 / (v + self.epsilon).sqrt())
            .collect();
        let mut x_hat = Matrix::zeros(n, c);
        let mut output = Matrix::zeros(n, c);
        for i in 0..n {
            for j in 0..c {
                let xh = (x.get(i, j) - mean[j]) * inv_std[j];
                x_hat.set(i, j, xh);
                output.set(i, j, self.scale[j] * xh + self.shift[j]);
            }
        }
        BnCache {
            input: x.clone(),
            mean,
            var,
            inv_std,
            x_hat,
            output,
        }
    }

    fn forward_eval(&self, x: &Matrix) -> Matrix {
        let (n, c) = x.shape();
        let inv_std: Vec<f64> = self
            .running_var
            .iter()
            .map(|&v| 1.0 / (v + self.epsilon).sqrt())
            .collect();
        let mut out = Matrix::zeros(n, c);
        for i in 0..n {
            for j in 0..c {
                let xh = (x.get(i, j) - self.running_mean[j]) * inv_std[j];
                out.set(i, j, self.scale[j] * xh + self.shift[j]);
            }
        }
        out
    }

    fn update_running(&mut self, cache: &BnCache) {
        let n = cache.input.rows() as f64;
        // Running variance uses the unbiased estimate, matching the usual
        // deep-learning convention.
        let correction = n / (n - 1.0);
        for j in 0..self.running_mean.len() {
            self.running_mean[j] =
                (1.0 - self.momentum) * self.running_mean[j] + self.momentum * cache.mean[j];
            self.running_var[j] = (1.0 - self.momentum) * self.running_var[j]
                + self.momentum * cache.var[j] * correction;
        }
    }

    /// Exact gradient through the batch statistics.
    fn backward(&self, cache: &BnCache, g_out: &Matrix) -> (Matrix, BnGrads) {
        let (n, c) = g_out.shape();
        let nf = n as f64;
        let mut g_scale = vec![0.0; c];
        let mut g_shift = vec![0.0; c];
        let mut g_xhat_sum = vec![0.0; c];
        let mut g_var = vec![0.0; c];
        for i in 0..n {
            for j in 0..c {
                let g = g_out.get(i, j);
                g_scale[j] += g * cache.x_hat.get(i, j);
                g_shift[j] += g;
                let g_xhat = g * self.scale[j];
                g_xhat_sum[j] += g_xhat;
                let centered = cache.input.get(i, j) - cache.mean[j];
                g_var[j] += g_xhat * centered;
            }
        }
        for j in 0..c {
            let istd = cache.inv_std[j];
            g_var[j] *= -0.5 * istd * istd * istd;
        }
        // d mean: the −Σ g_x̂·inv_std term; the g_var·Σ(x−μ) term vanishes
        // because the centered values sum to zero by construction.
        let mut g_mean = vec![0.0; c];
        for j in 0..c {
            g_mean[j] = -cache.inv_std[j] * g_xhat_sum[j];
        }
        let mut g_in = Matrix::zeros(n, c);
        for i in 0..n {
            for j in 0..c {
                let g_xhat = g_out.get(i, j) * self.scale[j];
                let centered = cache.input.get(i, j) - cache.mean[j];
                let v = g_xhat * cache.inv_std[j] + g_var[j] * 2.0 * centered / nf + g_mean[j] / nf;
                g_in.set(i, j, v);
            }
        }
        (
            g_in,
            BnGrads {
                scale: g_scale,
                shift: g_shift,
            },
        )
    }
}

#[derive(Debug, Clone)]
pub struct BnCache {
    input: Matrix,
    mean: Vec<f64>,
    var: Vec<f64>,
    inv_std: Vec<f64>,
    x_hat: Matrix,
    output: Matrix,
}

impl BnCache {
    /// Normalized activations before scale/shift (used by tests).
    pub fn normalized(&self) -> &Matrix {
        &self.x_hat
    }
}

/// Intermediates of one train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Matrix,
    pub bn1: BnCache,
    h1: Matrix,
    pub bn2: BnCache,
    h2: Matrix,
}

impl ForwardCache {
    pub fn representation(&self) -> &Matrix {
        &self.h2
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictorModel {
    pub fc1: Affine,
    pub bn1: BatchNorm,
    pub fc2: Affine,
    pub bn2: BatchNorm,
    pub head: Affine,
    pub leaky_slope: f64,
    pub mode: Mode,
}

/// Initializes the predictor for latent dimension `d` and `k` tasks: affine
/// weights fan-in uniform, biases zero, batch-norm scale 1 / shift 0 with
/// running stats (0, 1).
pub fn init_model(rng: &mut RngStream, d: usize, k: usize) -> PredictorModel {
    assert!(d >= 1 && k >= 1, "init_model needs d, k >= 1");
    PredictorModel {
        fc1: Affine::init(rng, HIDDEN, d),
        bn1: BatchNorm::init(HIDDEN),
        fc2: Affine::init(rng, d, HIDDEN),
        bn2: BatchNorm::init(d),
        head: Affine::init(rng, k, d),
        leaky_slope: LEAKY_SLOPE,
        mode: Mode::Train,
    }
}

impl PredictorModel {
    pub fn input_dim(&self) -> usize {
        self.fc1.weight.cols()
    }

    pub fn repr_dim(&self) -> usize {
        self.fc2.weight.rows()
    }

    pub fn task_dim(&self) -> usize {
        self.head.weight.rows()
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Mode-dispatching forward pass. Train mode uses batch statistics and
    /// folds them into the running estimates; eval mode is a pure function of
    /// the stored parameters. Returns `(representation, output)`.
    pub fn forward(&mut self, x: &Matrix) -> Result<(Matrix, Matrix), NetworkError> {
        match self.mode {
            Mode::Train => {
                let (cache, out) = self.forward_train(x)?;
                self.update_running_stats(&cache);
                Ok((cache.h2, out))
            }
            Mode::Eval => Ok(self.forward_eval(x)),
        }
    }

    /// Pure train-mode forward pass; running statistics are untouched until
    /// [`PredictorModel::update_running_stats`] is called with the cache.
    pub fn forward_train(&self, x: &Matrix) -> Result<(ForwardCache, Matrix), NetworkError> {
        if x.rows() < 2 {
            return Err(NetworkError::BatchTooSmall { n: x.rows() });
        }
        self.check_input(x)?;
        let s = self.leaky_slope;
        let a1 = self.fc1.forward(x);
        let bn1 = self.bn1.forward_train(&a1);
        let h1 = bn1.output.map(|v| leaky_relu(v, s));
        let a2 = self.fc2.forward(&h1);
        let bn2 = self.bn2.forward_train(&a2);
        let h2 = bn2.output.map(|v| leaky_relu(v, s));
        let out = self.head.forward(&h2);
        Ok((
            ForwardCache {
                x: x.clone(),
                bn1,
                h1,
                bn2,
                h2,
            },
            out,
        ))
    }

    /// Deterministic eval-mode forward using running statistics. Returns
    /// `(representation, output)`.
    pub fn forward_eval(&self, x: &Matrix) -> (Matrix, Matrix) {
        let s = self.leaky_slope;
        let h1 = self
            .bn1
            .forward_eval(&self.fc1.forward(x))
            .map(|v| leaky_relu(v, s));
        let h2 = self
            .bn2
            .forward_eval(&self.fc2.forward(&h1))
            .map(|v| leaky_relu(v, s));
        let out = self.head.forward(&h2);
        (h2, out)
    }

    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        self.bn1.update_running(&cache.bn1);
        self.bn2.update_running(&cache.bn2);
    }

    fn check_input(&self, x: &Matrix) -> Result<(), NetworkError> {
        if x.cols() != self.input_dim() {
            return Err(NetworkError::ShapeMismatch {
                expected: (x.rows(), self.input_dim()),
                got: x.shape(),
            });
        }
        Ok(())
    }

    /// Exact reverse-mode gradients for every parameter, including the
    /// batch-statistic terms of both normalization layers.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Matrix) -> Gradients {
        let s = self.leaky_slope;

        let g_head_w = grad_output.matmul_transa(&cache.h2);
        let g_head_b = column_sums(grad_output);
        let g_h2 = grad_output.matmul(&self.head.weight);

        let g_bn2_out = leaky_backward(&g_h2, &cache.bn2.output, s);
        let (g_a2, g_bn2) = self.bn2.backward(&cache.bn2, &g_bn2_out);

        let g_fc2_w = g_a2.matmul_transa(&cache.h1);
        let g_fc2_b = column_sums(&g_a2);
        let g_h1 = g_a2.matmul(&self.fc2.weight);

        let g_bn1_out = leaky_backward(&g_h1, &cache.bn1.output, s);
        let (g_a1, g_bn1) = self.bn1.backward(&cache.bn1, &g_bn1_out);

        let g_fc1_w = g_a1.matmul_transa(&cache.x);
        let g_fc1_b = column_sums(&g_a1);

        Gradients {
            fc1: AffineGrads {
                weight: g_fc1_w,
                bias: g_fc1_b,
            },
            bn1: g_bn1,
            fc2: AffineGrads {
                weight: g_fc2_w,
                bias: g_fc2_b,
            },
            bn2: g_bn2,
            head: AffineGrads {
                weight: g_head_w,
                bias: g_head_b,
            },
        }
    }

    /// Representation Φ†(X): the activations feeding the head, computed with
    /// eval-mode statistics.
    pub fn extract_representation(&self, x: &Matrix) -> Matrix {
        self.forward_eval(x).0
    }

    /// All trainable parameters in a fixed order (weights and biases of the
    /// three affine layers plus batch-norm scales and shifts). Running
    /// statistics are not parameters.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.fc1.weight.data());
        out.extend_from_slice(&self.fc1.bias);
        out.extend_from_slice(&self.bn1.scale);
        out.extend_from_slice(&self.bn1.shift);
        out.extend_from_slice(self.fc2.weight.data());
        out.extend_from_slice(&self.fc2.bias);
        out.extend_from_slice(&self.bn2.scale);
        out.extend_from_slice(&self.bn2.shift);
        out.extend_from_slice(self.head.weight.data());
        out.extend_from_slice(&self.head.bias);
        out
    }

    /// Writes back a parameter vector produced by [`flatten_params`].
    ///
    /// [`flatten_params`]: PredictorModel::flatten_params
    pub fn assign_params(&mut self, flat: &[f64]) {
        let mut offset = 0;
        let mut take = |slice: &mut [f64]| {
            slice.copy_from_slice(&flat[offset..offset + slice.len()]);
            offset += slice.len();
        };
        take(self.fc1.weight.data_mut());
        take(&mut self.fc1.bias);
        take(&mut self.bn1.scale);
        take(&mut self.bn1.shift);
        take(self.fc2.weight.data_mut());
        take(&mut self.fc2.bias);
        take(&mut self.bn2.scale);
        take(&mut self.bn2.shift);
        take(self.head.weight.data_mut());
        take(&mut self.head.bias);
        assert_eq!(offset, flat.len(), "parameter vector length mismatch");
    }

    pub fn param_count(&self) -> usize {
        self.flatten_params().len()
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut sums = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (s, &v) in sums.iter_mut().zip(m.row(i)) {
            *s += v;
        }
    }
    sums
}

fn leaky_backward(g: &Matrix, pre_activation: &Matrix, slope: f64) -> Matrix {
    let mut out = g.clone();
    for (o, &p) in out.data_mut().iter_mut().zip(pre_activation.data()) {
        if p < 0.0 {
            *o *= slope;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct AffineGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub fc1: AffineGrads,
    pub bn1: BnGrads,
    pub fc2: AffineGrads,
    pub bn2: BnGrads,
    pub head: AffineGrads,
}

impl Gradients {
    fn zeros_like(model: &PredictorModel) -> Self {
        let affine = |a: &Affine| AffineGrads {
            weight: Matrix::zeros(a.weight.rows(), a.weight.cols()),
            bias: vec![0.0; a.bias.len()],
        };
        let bn = |b: &BatchNorm| BnGrads {
            scale: vec![0.0; b.scale.len()],
            shift: vec![0.0; b.shift.len()],
        };
        Gradients {
            fc1: affine(&model.fc1),
            bn1: bn(&model.bn1),
            fc2: affine(&model.fc2),
            bn2: bn(&model.bn2),
            head: affine(&model.head),
        }
    }

    /// Gradient entries in the [`PredictorModel::flatten_params`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.fc1.weight.data());
        out.extend_from_slice(&self.fc1.bias);
        out.extend_from_slice(&self.bn1.scale);
        out.extend_from_slice(&self.bn1.shift);
        out.extend_from_slice(self.fc2.weight.data());
        out.extend_from_slice(&self.fc2.bias);
        out.extend_from_slice(&self.bn2.scale);
        out.extend_from_slice(&self.bn2.shift);
        out.extend_from_slice(self.head.weight.data());
        out.extend_from_slice(&self.head.bias);
        out
    }
}

/// SGD-with-momentum state: one velocity buffer per parameter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Gradients,
}

impl OptimizerState {
    pub fn new(model: &PredictorModel, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimizerState {
            lr,
            momentum,
            weight_decay,
            buffers: Gradients::zeros_like(model),
        }
    }
}

/// One SGD step: `g ← grad + wd·θ` (weight decay on affine weights only),
/// `buf ← momentum·buf + g`, `θ ← θ − lr·buf`.
pub fn sgd_step(model: &mut PredictorModel, grads: &Gradients, opt: &mut OptimizerState) {
    let (lr, mu, wd) = (opt.lr, opt.momentum, opt.weight_decay);
    let update = |theta: &mut [f64], grad: &[f64], buf: &mut [f64], decay: f64| {
        for ((t, &g), b) in theta.iter_mut().zip(grad).zip(buf.iter_mut()) {
            let g_eff = g + decay * *t;
            *b = mu * *b + g_eff;
            *t -= lr * *b;
        }
    };
    update(
        model.fc1.weight.data_mut(),
        grads.fc1.weight.data(),
        opt.buffers.fc1.weight.data_mut(),
        wd,
    );
    update(
        &mut model.fc1.bias,
        &grads.fc1.bias,
        &mut opt.buffers.fc1.bias,
        0.0,
    );
    update(
        &mut model.bn1.scale,
        &grads.bn1.scale,
        &mut opt.buffers.bn1.scale,
        0.0,
    );
    update(
        &mut model.bn1.shift,
        &grads.bn1.shift,
        &mut opt.buffers.bn1.shift,
        0.0,
    );
    update(
        model.fc2.weight.data_mut(),
        grads.fc2.weight.data(),
        opt.buffers.fc2.weight.data_mut(),
        wd,
    );
    update(
        &mut model.fc2.bias,
        &grads.fc2.bias,
        &mut opt.buffers.fc2.bias,
        0.0,
    );
    update(
        &mut model.bn2.scale,
        &grads.bn2.scale,
        &mut opt.buffers.bn2.scale,
        0.0,
    );
    update(
        &mut model.bn2.shift,
        &grads.bn2.shift,
        &mut opt.buffers.bn2.shift,
        0.0,
    );
    update(
        model.head.weight.data_mut(),
        grads.head.weight.data(),
        opt.buffers.head.weight.data_mut(),
        wd,
    );
    update(
        &mut model.head.bias,
        &grads.head.bias,
        &mut opt.buffers.head.bias,
        0.0,
    );
}

/// Loss value and its gradient with respect to the network output.
///
/// `Mse` averages squared error over all n·k entries. `Bce` treats outputs as
/// logits and computes the numerically stable logistic cross-entropy, again
/// averaged over entries; labels must be exactly 0 or 1.
pub fn loss(output: &Matrix, y: &Matrix, kind: LossKind) -> Result<(f64, Matrix), NetworkError> {
    if output.shape() != y.shape() {
        return Err(NetworkError::ShapeMismatch {
            expected: y.shape(),
            got: output.shape(),
        });
    }
    let count = (output.rows() * output.cols()) as f64;
    match kind {
        LossKind::Mse => {
            let mut value = 0.0;
            let mut grad = Matrix::zeros(output.rows(), output.cols());
            for i in 0..output.rows() {
                for j in 0..output.cols() {
                    let diff = output.get(i, j) - y.get(i, j);
                    value += diff * diff;
                    grad.set(i, j, 2.0 * diff / count);
                }
            }
            Ok((value / count, grad))
        }
        LossKind::Bce => {
            let mut value = 0.0;
            let mut grad = Matrix::zeros(output.rows(), output.cols());
            for i in 0..output.rows() {
                for j in 0..output.cols() {
                    let label = y.get(i, j);
                    if label != 0.0 && label != 1.0 {
                        return Err(NetworkError::LabelNotBinary {
                            row: i,
                            col: j,
                            value: label,
                        });
                    }
                    let z = output.get(i, j);
                    // max(z,0) − z·y + ln(1 + e^{−|z|})
                    value += z.max(0.0) - z * label + (-z.abs()).exp().ln_1p();
                    grad.set(i, j, (crate::numerics::sigmoid(z) - label) / count);
                }
            }
            Ok((value / count, grad))
        }
    }
}
