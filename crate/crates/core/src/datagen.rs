//! Synthetic dataset generation: independent latents drive both the
//! observations (through an invertible two-layer map) and the labels
//! (through a linear task matrix).

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io;
use crate::numerics::{
    condition_number, leaky_relu, leaky_relu_inv, rng_normal, sigmoid, solve_linear, sym_eig,
    Matrix, NumericsError, RngStream,
};

pub const TRAIN_ROWS: usize = 5000;
pub const VAL_ROWS: usize = 1250;
pub const TEST_ROWS: usize = 5000;

const GENERATOR_COND_LIMIT: f64 = 25.0;
const GENERATOR_DRAW_CAP: usize = 24;
const TASK_COND_LIMIT: f64 = 1e6;
const TASK_DRAW_CAP: usize = 100;
const CLASSIFICATION_GAMMA_STD: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Regression,
    Classification,
}

impl TaskType {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::Regression => "regression",
            TaskType::Classification => "classification",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Distribution of each latent component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentDist {
    /// Discrete uniform on {0, 1}; the default experimental choice.
    #[default]
    Binary,
    /// Continuous uniform on [0, 1].
    Uniform,
}

#[derive(Debug, Error)]
pub enum DataGenError {
    #[error("{what}: resampling cap {cap} exceeded")]
    ResampleCap { what: &'static str, cap: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] io::CsvError),
    #[error("dataset layout: {0}")]
    Layout(String),
}

/// Invertible two-layer map `X = φ(φ(Z·W₁ᵀ)·W₂ᵀ)` with leaky-ReLU `φ` and no
/// biases. Both layers are kept well conditioned so the exact inverse stays
/// numerically tight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Generator {
    pub layer1_weight: Matrix,
    pub layer2_weight: Matrix,
    pub leaky_slope: f64,
}

/// Linear task map `Γ` (k×d) with the entry scale it was drawn at.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskMatrix {
    pub gamma: Matrix,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub x: Matrix,
    pub y: Matrix,
    pub z: Matrix,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub task_type: TaskType,
    pub d: usize,
    pub k: usize,
    pub train: Split,
    pub val: Split,
    pub test: Split,
    pub generator: Generator,
    pub tasks: TaskMatrix,
    pub seed: u64,
    pub noise_std: f64,
    pub latent_dist: LatentDist,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub task_type: TaskType,
    pub d: usize,
    pub k: usize,
    pub seed: u64,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default = "default_slope")]
    pub slope: f64,
    #[serde(default = "default_latent_dist")]
    pub latent_dist: LatentDist,
}

fn default_noise_std() -> f64 {
    1.0
}

fn default_slope() -> f64 {
    0.2
}

fn default_latent_dist() -> LatentDist {
    LatentDist::Binary
}

impl DatasetConfig {
    pub fn new(task_type: TaskType, d: usize, k: usize, seed: u64) -> Self {
        Self {
            task_type,
            d,
            k,
            seed,
            noise_std: default_noise_std(),
            slope: default_slope(),
            latent_dist: default_latent_dist(),
        }
    }
}

/// Draws an n×d latent matrix with i.i.d. {0, 1} entries (probability ½
/// each); columns are mutually independent by construction.
pub fn sample_latents(rng: &mut RngStream, n: usize, d: usize) -> Matrix {
    sample_latents_from(rng, n, d, LatentDist::Binary)
}

pub fn sample_latents_from(rng: &mut RngStream, n: usize, d: usize, dist: LatentDist) -> Matrix {
    assert!(n >= 1 && d >= 1, "sample_latents needs n, d >= 1");
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        let v = match dist {
            LatentDist::Binary => {
                if rng.bernoulli(0.5) {
                    1.0
                } else {
                    0.0
                }
            }
            LatentDist::Uniform => rng.next_f64(),
        };
        data.push(v);
    }
    Matrix::new_unchecked(n, d, data)
}

/// Draws the k×d task matrix. Entries are i.i.d. N(0, scale²) with scale 1
/// for regression and 10 for classification; square task matrices are
/// resampled until invertible (condition number ≤ 1e6).
pub fn sample_task_matrix(
    rng: &mut RngStream,
    k: usize,
    d: usize,
    task_type: TaskType,
) -> Result<TaskMatrix, DataGenError> {
    assert!(k >= 1 && k <= d, "task count must satisfy 1 <= k <= d");
    let scale = match task_type {
        TaskType::Regression => 1.0,
        TaskType::Classification => CLASSIFICATION_GAMMA_STD,
    };
    for _ in 0..TASK_DRAW_CAP {
        let gamma = rng_normal(rng, k, d, 0.0, scale);
        if (0..k).any(|i| gamma.row(i).iter().all(|&v| v == 0.0)) {
            continue;
        }
        if k == d && condition_number(&gamma)? > TASK_COND_LIMIT {
            continue;
        }
        return Ok(TaskMatrix { gamma, scale });
    }
    Err(DataGenError::ResampleCap {
        what: "task matrix",
        cap: TASK_DRAW_CAP,
    })
}

/// Samples one d×d layer with entries N(0, 1/√d), accepting the first draw
/// whose condition number is within the limit. Large d makes that bound
/// unreachable by rejection alone (the median condition number of a Gaussian
/// matrix grows with d), so after the draw cap the best draw has its small
/// singular values raised to meet the limit exactly.
fn conditioned_layer(rng: &mut RngStream, d: usize) -> Result<Matrix, DataGenError> {
    let std = 1.0 / (d as f64).sqrt();
    let mut best: Option<(f64, Matrix)> = None;
    for _ in 0..GENERATOR_DRAW_CAP {
        let w = rng_normal(rng, d, d, 0.0, std);
        let cond = condition_number(&w)?;
        if cond <= GENERATOR_COND_LIMIT {
            return Ok(w);
        }
        if best.as_ref().map_or(true, |(c, _)| cond < *c) {
            best = Some((cond, w));
        }
    }
    let (_, w) = best.expect("draw cap is positive");
    raise_singular_floor(&w, GENERATOR_COND_LIMIT)
}

/// Returns `W` with singular values below `σ_max / limit` raised to that
/// floor, leaving singular vectors untouched.
fn raise_singular_floor(w: &Matrix, limit: f64) -> Result<Matrix, DataGenError> {
    let gram = w.matmul_transa(w);
    let (vals, vecs) = sym_eig(&gram)?;
    let d = w.rows();
    let sigma_max = vals.get(0, 0).max(0.0).sqrt();
    if sigma_max == 0.0 {
        return Err(DataGenError::Layout(
            "cannot condition an all-zero layer".into(),
        ));
    }
    let floor = sigma_max / limit;
    let mut ratios = Vec::with_capacity(d);
    for i in 0..d {
        let sigma = vals.get(i, 0).max(0.0).sqrt().max(sigma_max * 1e-12);
        ratios.push(sigma.max(floor) / sigma);
    }
    // W' = W · V · diag(σ'/σ) · Vᵀ rescales each right singular direction.
    let scaled = Matrix::from_fn(d, d, |i, j| vecs.get(i, j) * ratios[j]);
    Ok(w.matmul(&scaled).matmul(&vecs.transpose()))
}

/// Builds the invertible two-layer generator for latent dimension `d`.
pub fn build_generator(
    rng: &mut RngStream,
    d: usize,
    slope: f64,
) -> Result<Generator, DataGenError> {
    assert!(d >= 1, "generator needs d >= 1");
    assert!(slope > 0.0 && slope <= 1.0, "leaky slope must be in (0, 1]");
    Ok(Generator {
        layer1_weight: conditioned_layer(rng, d)?,
        layer2_weight: conditioned_layer(rng, d)?,
        leaky_slope: slope,
    })
}

impl Generator {
    pub fn dim(&self) -> usize {
        self.layer1_weight.rows()
    }

    /// Forward map `X = φ(φ(Z·W₁ᵀ)·W₂ᵀ)` applied row-wise.
    pub fn apply(&self, z: &Matrix) -> Matrix {
        assert_eq!(z.cols(), self.dim(), "latent width mismatch");
        let s = self.leaky_slope;
        let h = z
            .matmul_transb(&self.layer1_weight)
            .map(|v| leaky_relu(v, s));
        h.matmul_transb(&self.layer2_weight)
            .map(|v| leaky_relu(v, s))
    }

    /// Exact layer-wise inverse of [`Generator::apply`].
    pub fn invert(&self, x: &Matrix) -> Result<Matrix, DataGenError> {
        assert_eq!(x.cols(), self.dim(), "observation width mismatch");
        let s = self.leaky_slope;
        let a = x.map(|v| leaky_relu_inv(v, s));
        // a = h · W₂ᵀ  ⇒  hᵀ = solve(W₂, aᵀ)
        let h = solve_linear(&self.layer2_weight, &a.transpose())?.transpose();
        let b = h.map(|v| leaky_relu_inv(v, s));
        let z = solve_linear(&self.layer1_weight, &b.transpose())?.transpose();
        Ok(z)
    }
}

/// Generates labels from latents: `Y = ZΓᵀ + noise` for regression and
/// elementwise `Bernoulli(σ(ZΓᵀ))` for classification.
pub fn gen_labels(
    rng: &mut RngStream,
    tasks: &TaskMatrix,
    z: &Matrix,
    task_type: TaskType,
    noise_std: f64,
) -> Matrix {
    assert_eq!(z.cols(), tasks.gamma.cols(), "latent width mismatch");
    let mut logits = z.matmul_transb(&tasks.gamma);
    match task_type {
        TaskType::Regression => {
            for v in logits.data_mut() {
                *v += rng.normal(0.0, noise_std);
            }
            logits
        }
        TaskType::Classification => {
            for v in logits.data_mut() {
                *v = if rng.bernoulli(sigmoid(*v)) { 1.0 } else { 0.0 };
            }
            logits
        }
    }
}

/// Draws a full dataset: task matrix, generator, then 11250 latent rows
/// split 5000/1250/5000 into train/val/test.
pub fn make_dataset(config: &DatasetConfig) -> Result<Dataset, DataGenError> {
    assert!(config.k <= config.d, "k must not exceed d");
    let mut rng = RngStream::new(config.seed);
    let tasks = sample_task_matrix(&mut rng, config.k, config.d, config.task_type)?;
    let generator = build_generator(&mut rng, config.d, config.slope)?;

    let total = TRAIN_ROWS + VAL_ROWS + TEST_ROWS;
    let z_all = sample_latents_from(&mut rng, total, config.d, config.latent_dist);
    let y_all = gen_labels(&mut rng, &tasks, &z_all, config.task_type, config.noise_std);
    let x_all = generator.apply(&z_all);

    let cut = |start: usize, end: usize| Split {
        x: x_all.slice_rows(start, end),
        y: y_all.slice_rows(start, end),
        z: z_all.slice_rows(start, end),
    };
    Ok(Dataset {
        task_type: config.task_type,
        d: config.d,
        k: config.k,
        train: cut(0, TRAIN_ROWS),
        val: cut(TRAIN_ROWS, TRAIN_ROWS + VAL_ROWS),
        test: cut(TRAIN_ROWS + VAL_ROWS, total),
        generator,
        tasks,
        seed: config.seed,
        noise_std: config.noise_std,
        latent_dist: config.latent_dist,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    d: usize,
    k: usize,
    task_type: TaskType,
    seed: u64,
    noise_std: f64,
    slope: f64,
    latent_dist: LatentDist,
}

const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

impl Dataset {
    fn split(&self, name: &str) -> &Split {
        match name {
            "train" => &self.train,
            "val" => &self.val,
            "test" => &self.test,
            other => panic!("unknown split {other}"),
        }
    }

    /// Writes the dataset as a directory: `meta.json`, the generator and
    /// task matrices, and per-split `X.csv` / `Y.csv` / `Z.csv`.
    pub fn save(&self, dir: &Path) -> Result<(), DataGenError> {
        fs::create_dir_all(dir)?;
        let meta = DatasetMeta {
            d: self.d,
            k: self.k,
            task_type: self.task_type,
            seed: self.seed,
            noise_std: self.noise_std,
            slope: self.generator.leaky_slope,
            latent_dist: self.latent_dist,
        };
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        io::write_matrix_csv(&dir.join("gamma.csv"), &self.tasks.gamma)?;
        io::write_matrix_csv(&dir.join("gen_w1.csv"), &self.generator.layer1_weight)?;
        io::write_matrix_csv(&dir.join("gen_w2.csv"), &self.generator.layer2_weight)?;
        for name in SPLIT_NAMES {
            let split_dir = dir.join(name);
            fs::create_dir_all(&split_dir)?;
            let split = self.split(name);
            io::write_matrix_csv(&split_dir.join("X.csv"), &split.x)?;
            io::write_matrix_csv(&split_dir.join("Y.csv"), &split.y)?;
            io::write_matrix_csv(&split_dir.join("Z.csv"), &split.z)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset, DataGenError> {
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
        let gamma = io::read_matrix_csv(&dir.join("gamma.csv"))?;
        let w1 = io::read_matrix_csv(&dir.join("gen_w1.csv"))?;
        let w2 = io::read_matrix_csv(&dir.join("gen_w2.csv"))?;
        if gamma.shape() != (meta.k, meta.d) {
            return Err(DataGenError::Layout(format!(
                "gamma.csv is {}x{}, expected {}x{}",
                gamma.rows(),
                gamma.cols(),
                meta.k,
                meta.d
            )));
        }
        if w1.shape() != (meta.d, meta.d) || w2.shape() != (meta.d, meta.d) {
            return Err(DataGenError::Layout(
                "generator layer shape mismatch".into(),
            ));
        }
        let mut splits = Vec::new();
        for name in SPLIT_NAMES {
            let split_dir = dir.join(name);
            let split = Split {
                x: io::read_matrix_csv(&split_dir.join("X.csv"))?,
                y: io::read_matrix_csv(&split_dir.join("Y.csv"))?,
                z: io::read_matrix_csv(&split_dir.join("Z.csv"))?,
            };
            if split.x.cols() != meta.d || split.z.cols() != meta.d || split.y.cols() != meta.k {
                return Err(DataGenError::Layout(format!(
                    "{name}: column mismatch with meta.json"
                )));
            }
            if split.x.rows() != split.y.rows() || split.x.rows() != split.z.rows() {
                return Err(DataGenError::Layout(format!("{name}: row count mismatch")));
            }
            splits.push(split);
        }
        let test = splits.pop().unwrap();
        let val = splits.pop().unwrap();
        let train = splits.pop().unwrap();
        let scale = match meta.task_type {
            TaskType::Regression => 1.0,
            TaskType::Classification => CLASSIFICATION_GAMMA_STD,
        };
        Ok(Dataset {
            task_type: meta.task_type,
            d: meta.d,
            k: meta.k,
            train,
            val,
            test,
            generator: Generator {
                layer1_weight: w1,
                layer2_weight: w2,
                leaky_slope: meta.slope,
            },
            tasks: TaskMatrix { gamma, scale },
            seed: meta.seed,
            noise_std: meta.noise_std,
            latent_dist: meta.latent_dist,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latents_are_binary_with_balanced_columns() {
        let mut rng = RngStream::new(100);
        let z = sample_latents(&mut rng, 10_000, 4);
        assert!(z.data().iter().all(|&v| v == 0.0 || v == 1.0));
        for j in 0..4 {
            let mean = z.column(j).iter().sum::<f64>() / 10_000.0;
            assert!((mean - 0.5).abs() < 0.03, "column {j} mean {mean}");
        }
    }

    #[test]
    fn latent_columns_are_uncorrelated() {
        let mut rng = RngStream::new(101);
        let z = sample_latents(&mut rng, 10_000, 2);
        let cov = z.covariance();
        let corr = cov.get(0, 1) / (cov.get(0, 0) * cov.get(1, 1)).sqrt();
        assert!(corr.abs() < 0.05, "correlation {corr}");
    }

    #[test]
    fn latent_joint_frequencies_factorize() {
        // Pairwise and 3-way empirical joints match products of marginals.
        let mut rng = RngStream::new(102);
        let n = 10_000;
        let z = sample_latents(&mut rng, n, 4);
        let marginal: Vec<f64> = (0..4)
            .map(|j| z.column(j).iter().sum::<f64>() / n as f64)
            .collect();
        let freq = |cols: &[usize], bits: usize| -> f64 {
            let mut count = 0usize;
            for i in 0..n {
                let ok = cols
                    .iter()
                    .enumerate()
                    .all(|(b, &c)| z.get(i, c) == ((bits >> b) & 1) as f64);
                if ok {
                    count += 1;
                }
            }
            count as f64 / n as f64
        };
        let product = |cols: &[usize], bits: usize| -> f64 {
            cols.iter()
                .enumerate()
                .map(|(b, &c)| {
                    if (bits >> b) & 1 == 1 {
                        marginal[c]
                    } else {
                        1.0 - marginal[c]
                    }
                })
                .product()
        };
        for a in 0..4 {
            for b in (a + 1)..4 {
                for bits in 0..4 {
                    let delta = (freq(&[a, b], bits) - product(&[a, b], bits)).abs();
                    assert!(delta < 0.03, "pair ({a},{b}) pattern {bits}: {delta}");
                }
                for c in (b + 1)..4 {
                    for bits in 0..8 {
                        let delta = (freq(&[a, b, c], bits) - product(&[a, b, c], bits)).abs();
                        assert!(delta < 0.03, "triple ({a},{b},{c}) pattern {bits}: {delta}");
                    }
                }
            }
        }
    }

    #[test]
    fn task_matrix_pooled_std_regression() {
        let mut rng = RngStream::new(103);
        let mut pooled = Vec::new();
        for _ in 0..20 {
            let t = sample_task_matrix(&mut rng, 16, 16, TaskType::Regression).unwrap();
            assert!(condition_number(&t.gamma).unwrap() <= TASK_COND_LIMIT);
            pooled.extend_from_slice(t.gamma.data());
        }
        let n = pooled.len() as f64;
        let mean = pooled.iter().sum::<f64>() / n;
        let std = (pooled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 1.0).abs() < 0.1, "pooled std {std}");
    }

    #[test]
    fn task_matrix_pooled_std_classification() {
        let mut rng = RngStream::new(104);
        let mut pooled = Vec::new();
        for _ in 0..20 {
            let t = sample_task_matrix(&mut rng, 16, 16, TaskType::Classification).unwrap();
            pooled.extend_from_slice(t.gamma.data());
        }
        let n = pooled.len() as f64;
        let mean = pooled.iter().sum::<f64>() / n;
        let std = (pooled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 10.0).abs() < 1.0, "pooled std {std}");
    }

    #[test]
    fn single_task_row_has_no_zero_entries() {
        let mut rng = RngStream::new(105);
        let t = sample_task_matrix(&mut rng, 1, 8, TaskType::Regression).unwrap();
        assert_eq!(t.gamma.shape(), (1, 8));
        assert!(t.gamma.data().iter().all(|&v| v != 0.0));
    }

    #[test]
    fn generator_layers_meet_condition_bound() {
        let mut rng = RngStream::new(106);
        for d in [1usize, 4, 16, 50] {
            let g = build_generator(&mut rng, d, 0.2).unwrap();
            let c1 = condition_number(&g.layer1_weight).unwrap();
            let c2 = condition_number(&g.layer2_weight).unwrap();
            // Tiny slack over the bound for the clipped-spectrum path.
            assert!(
                c1 <= GENERATOR_COND_LIMIT * (1.0 + 1e-9),
                "d={d}: cond1 {c1}"
            );
            assert!(
                c2 <= GENERATOR_COND_LIMIT * (1.0 + 1e-9),
                "d={d}: cond2 {c2}"
            );
            if d == 1 {
                assert!(g.layer1_weight.get(0, 0) != 0.0);
                assert!(g.layer2_weight.get(0, 0) != 0.0);
            }
        }
    }

    #[test]
    fn generator_round_trip_d16() {
        let mut rng = RngStream::new(107);
        let g = build_generator(&mut rng, 16, 0.2).unwrap();
        let z = sample_latents(&mut rng, 100, 16);
        let back = g.invert(&g.apply(&z)).unwrap();
        let err = back.sub(&z).max_abs();
        assert!(err < 1e-6, "round-trip error {err:e}");
    }

    #[test]
    fn zero_latents_map_to_zero() {
        let mut rng = RngStream::new(108);
        let g = build_generator(&mut rng, 4, 0.2).unwrap();
        let x = g.apply(&Matrix::zeros(3, 4));
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_slope_reduces_to_linear_map() {
        let mut rng = RngStream::new(109);
        let g = build_generator(&mut rng, 5, 1.0).unwrap();
        let z = rng_normal(&mut rng, 20, 5, 0.0, 1.0);
        let x = g.apply(&z);
        let linear = z
            .matmul_transb(&g.layer1_weight)
            .matmul_transb(&g.layer2_weight);
        assert!(x.sub(&linear).max_abs() < 1e-12);
    }

    #[test]
    fn forward_matches_straight_line_reimplementation() {
        let mut rng = RngStream::new(110);
        let g = build_generator(&mut rng, 6, 0.2).unwrap();
        let z = rng_normal(&mut rng, 10, 6, 0.0, 1.0);
        let x = g.apply(&z);
        for i in 0..10 {
            // Per-row evaluation with explicit loops, no matrix ops.
            let mut h = vec![0.0; 6];
            for p in 0..6 {
                let mut acc = 0.0;
                for q in 0..6 {
                    acc += g.layer1_weight.get(p, q) * z.get(i, q);
                }
                h[p] = if acc >= 0.0 { acc } else { 0.2 * acc };
            }
            for p in 0..6 {
                let mut acc = 0.0;
                for q in 0..6 {
                    acc += g.layer2_weight.get(p, q) * h[q];
                }
                let expect = if acc >= 0.0 { acc } else { 0.2 * acc };
                assert!((x.get(i, p) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scalar_chain_hand_trace() {
        // W₁ = 2, W₂ = 3, slope 0.2: forward(−1) = leaky(3·leaky(−2)) =
        // leaky(−1.2) = −0.24, and the inverse recovers −1 from −0.24.
        let g = Generator {
            layer1_weight: Matrix::from_vec(1, 1, vec![2.0]).unwrap(),
            layer2_weight: Matrix::from_vec(1, 1, vec![3.0]).unwrap(),
            leaky_slope: 0.2,
        };
        let z = Matrix::from_vec(1, 1, vec![-1.0]).unwrap();
        let x = g.apply(&z);
        assert!((x.get(0, 0) - (-0.24)).abs() < 1e-15);
        let back = g.invert(&x).unwrap();
        assert!((back.get(0, 0) - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn unit_slope_inverse_matches_two_solves() {
        let mut rng = RngStream::new(111);
        let g = build_generator(&mut rng, 4, 1.0).unwrap();
        let z = rng_normal(&mut rng, 8, 4, 0.0, 1.0);
        let x = g.apply(&z);
        let h = solve_linear(&g.layer2_weight, &x.transpose()).unwrap();
        let expect = solve_linear(&g.layer1_weight, &h).unwrap().transpose();
        let got = g.invert(&x).unwrap();
        assert!(got.sub(&expect).max_abs() < 1e-10);
    }

    #[test]
    fn identity_tasks_with_zero_noise_copy_latents() {
        let mut rng = RngStream::new(112);
        let tasks = TaskMatrix {
            gamma: Matrix::identity(3),
            scale: 1.0,
        };
        let z = sample_latents(&mut rng, 50, 3);
        let y = gen_labels(&mut rng, &tasks, &z, TaskType::Regression, 0.0);
        assert_eq!(y, z);
    }

    #[test]
    fn zero_logits_give_balanced_labels() {
        let mut rng = RngStream::new(113);
        let tasks = TaskMatrix {
            gamma: Matrix::zeros(1, 2),
            scale: 10.0,
        };
        let z = sample_latents(&mut rng, 10_000, 2);
        let y = gen_labels(&mut rng, &tasks, &z, TaskType::Classification, 0.0);
        let mean = y.data().iter().sum::<f64>() / 10_000.0;
        assert!((mean - 0.5).abs() < 0.03, "label mean {mean}");
    }

    #[test]
    fn regression_residual_variance_matches_noise() {
        let mut rng = RngStream::new(114);
        let tasks = sample_task_matrix(&mut rng, 2, 4, TaskType::Regression).unwrap();
        let z = sample_latents(&mut rng, 10_000, 4);
        let y = gen_labels(&mut rng, &tasks, &z, TaskType::Regression, 1.0);
        let resid = y.sub(&z.matmul_transb(&tasks.gamma));
        for j in 0..2 {
            let col = resid.column(j);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var =
                col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (col.len() as f64 - 1.0);
            assert!((var - 1.0).abs() < 0.05, "task {j} residual variance {var}");
        }
    }

    #[test]
    fn classification_marginals_match_sigmoid_means() {
        let config = DatasetConfig::new(TaskType::Classification, 4, 4, 7);
        let ds = make_dataset(&config).unwrap();
        let logits = ds.train.z.matmul_transb(&ds.tasks.gamma);
        for j in 0..4 {
            let p_hat = ds.train.y.column(j).iter().sum::<f64>() / TRAIN_ROWS as f64;
            let p_model =
                logits.column(j).iter().map(|&v| sigmoid(v)).sum::<f64>() / TRAIN_ROWS as f64;
            assert!(
                (p_hat - p_model).abs() < 0.03,
                "task {j}: {p_hat} vs {p_model}"
            );
        }
    }

    #[test]
    fn dataset_is_deterministic_and_split_correctly() {
        let config = DatasetConfig::new(TaskType::Regression, 8, 8, 5);
        let a = make_dataset(&config).unwrap();
        let b = make_dataset(&config).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.test, b.test);
        assert_eq!(a.train.x.rows(), TRAIN_ROWS);
        assert_eq!(a.val.x.rows(), VAL_ROWS);
        assert_eq!(a.test.x.rows(), TEST_ROWS);
        assert_eq!(a.train.y.cols(), 8);
    }

    #[test]
    fn observations_follow_generator_exactly() {
        let config = DatasetConfig::new(TaskType::Regression, 6, 3, 9);
        let ds = make_dataset(&config).unwrap();
        for split in [&ds.train, &ds.val, &ds.test] {
            let expect = ds.generator.apply(&split.z);
            assert!(split.x.sub(&expect).max_abs() < 1e-6);
        }
    }

    #[test]
    fn latent_row_collisions_match_chance_rate() {
        // Train plus test hold 10000 random 16-bit rows; the expected number
        // of colliding pairs is C(10000, 2) / 2^16 ≈ 763.
        let config = DatasetConfig::new(TaskType::Regression, 16, 8, 3);
        let ds = make_dataset(&config).unwrap();
        let mut counts = std::collections::HashMap::new();
        for split in [&ds.train, &ds.test] {
            for i in 0..split.z.rows() {
                let key: u32 = split
                    .z
                    .row(i)
                    .iter()
                    .enumerate()
                    .fold(0, |acc, (b, &v)| acc | ((v as u32) << b));
                *counts.entry(key).or_insert(0usize) += 1;
            }
        }
        let pairs: usize = counts.values().map(|&m| m * (m - 1) / 2).sum();
        // ±5 standard deviations around the Poisson-like expectation.
        assert!((500..=1100).contains(&pairs), "collision pairs {pairs}");
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let config = DatasetConfig::new(TaskType::Classification, 4, 2, 11);
        let ds = make_dataset(&config).unwrap();
        let dir = std::env::temp_dir().join("erm_ica_dataset_test");
        let _ = fs::remove_dir_all(&dir);
        ds.save(&dir).unwrap();
        let back = Dataset::load(&dir).unwrap();
        assert_eq!(ds.train, back.train);
        assert_eq!(ds.val, back.val);
        assert_eq!(ds.test, back.test);
        assert_eq!(ds.tasks.gamma, back.tasks.gamma);
        assert_eq!(ds.generator.layer1_weight, back.generator.layer1_weight);
        assert_eq!(ds.seed, back.seed);
        fs::remove_dir_all(&dir).unwrap();
    }
}
