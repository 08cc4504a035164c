//! Experiment orchestration: run the three methods (plain training, PCA
//! post-processing, ICA post-processing) over a (d, k, seed) grid, persist
//! per-cell results with resume markers, and emit report files.

mod report;

pub use report::{emit_report, write_results_csv, write_results_json};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{make_dataset, DataGenError, Dataset, DatasetConfig, LatentDist, TaskType};
use crate::metrics::{
    accuracy_avg, downstream_readout, mcc, r2_avg, threshold_probs, EvalResult, Method,
    MetricsError,
};
use crate::network::{train, NetworkError, PredictorModel, TrainConfig};
use crate::numerics::{derive_seed, sigmoid, Matrix, RngStream};
use crate::transform::{
    apply_transform, fit_ica, fit_pca, IcaSettings, LinearTransform, TransformError,
};

/// Stage tags for deriving independent per-cell streams.
const STAGE_DATA: u64 = 1;
const STAGE_TRAIN: u64 = 2;
const STAGE_ICA: u64 = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataGenError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Optional overrides on the per-task training defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub base_lr: Option<f64>,
    pub lr_halve_every: Option<usize>,
}

impl TrainOverrides {
    fn apply(&self, mut config: TrainConfig) -> TrainConfig {
        if let Some(epochs) = self.epochs {
            config.epochs = epochs;
        }
        if let Some(batch_size) = self.batch_size {
            config.batch_size = batch_size;
        }
        if let Some(base_lr) = self.base_lr {
            config.base_lr = base_lr;
        }
        if let Some(halve) = self.lr_halve_every {
            config.lr_halve_every = halve;
        }
        config
    }
}

/// Data-generation knobs shared by every cell of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSettings {
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    /// Leaky slope of the observation generator; 1.0 makes it linear.
    #[serde(default = "default_slope")]
    pub slope: f64,
    #[serde(default)]
    pub latent_dist: LatentDist,
}

fn default_noise_std() -> f64 {
    1.0
}

fn default_slope() -> f64 {
    0.2
}

impl Default for DataSettings {
    fn default() -> Self {
        DataSettings {
            noise_std: default_noise_std(),
            slope: default_slope(),
            latent_dist: LatentDist::default(),
        }
    }
}

/// Full sweep description; unknown JSON keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task_type: TaskType,
    pub d: usize,
    pub k_list: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub ica: IcaSettings,
    #[serde(default)]
    pub data: DataSettings,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must be non-empty".into()));
        }
        if self.k_list.is_empty() {
            return Err(HarnessError::Config("k_list must be non-empty".into()));
        }
        for &k in &self.k_list {
            if k < 1 || k > self.d {
                return Err(HarnessError::Config(format!(
                    "k = {k} must satisfy 1 <= k <= d = {}",
                    self.d
                )));
            }
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let config: ExperimentConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        config.validate()?;
        Ok(config)
    }

    pub fn settings(&self) -> CellSettings {
        CellSettings {
            train: self.train.clone(),
            ica: self.ica.clone(),
            data: self.data.clone(),
        }
    }

    pub fn cells(&self) -> Vec<CellSpec> {
        let mut specs = Vec::new();
        for &k in &self.k_list {
            for &seed in &self.seeds {
                specs.push(CellSpec {
                    task_type: self.task_type,
                    d: self.d,
                    k,
                    seed,
                });
            }
        }
        specs
    }
}

/// One grid point: (task type, latent dimension, task count, seed).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    pub task_type: TaskType,
    pub d: usize,
    pub k: usize,
    pub seed: u64,
}

impl CellSpec {
    /// Cell-local seed: a hash of (config seed, d, k, task type), so grid
    /// edits never perturb other cells.
    pub fn cell_seed(&self) -> u64 {
        let task_tag = match self.task_type {
            TaskType::Regression => 0,
            TaskType::Classification => 1,
        };
        derive_seed(self.seed, &[self.d as u64, self.k as u64, task_tag])
    }

    pub fn marker_name(&self) -> String {
        format!("{}_d{}_k{}_s{}", self.task_type, self.d, self.k, self.seed)
    }
}

#[derive(Debug, Clone, Default)]
pub struct CellSettings {
    pub train: TrainOverrides,
    pub ica: IcaSettings,
    pub data: DataSettings,
}

/// Dataset description for a cell, derived from its spec and settings.
pub fn dataset_config_for(spec: &CellSpec, settings: &CellSettings) -> DatasetConfig {
    DatasetConfig {
        task_type: spec.task_type,
        d: spec.d,
        k: spec.k,
        seed: derive_seed(spec.cell_seed(), &[STAGE_DATA]),
        noise_std: settings.data.noise_std,
        slope: settings.data.slope,
        latent_dist: settings.data.latent_dist,
    }
}

/// Training configuration for a cell: per-task defaults, overrides applied,
/// seeded from the cell stream.
pub fn train_config_for(spec: &CellSpec, settings: &CellSettings) -> TrainConfig {
    let seed = derive_seed(spec.cell_seed(), &[STAGE_TRAIN]);
    settings
        .train
        .apply(TrainConfig::for_task(spec.task_type, seed))
}

/// RNG stream for the ICA initialization of a cell.
pub fn ica_rng_for(spec: &CellSpec) -> RngStream {
    RngStream::new(derive_seed(spec.cell_seed(), &[STAGE_ICA]))
}

/// Label score of the trained head on the test split.
pub fn head_label_score(model: &PredictorModel, dataset: &Dataset) -> Result<f64, HarnessError> {
    let (_, out) = model.forward_eval(&dataset.test.x);
    let score = match dataset.task_type {
        TaskType::Regression => r2_avg(&dataset.test.y, &out)?,
        TaskType::Classification => {
            accuracy_avg(&dataset.test.y, &threshold_probs(&out.map(sigmoid)))?
        }
    };
    Ok(score)
}

fn transformed_eval(
    spec: &CellSpec,
    dataset: &Dataset,
    rep_train: &Matrix,
    rep_test: &Matrix,
    transform: &LinearTransform,
    method: Method,
    started: Instant,
) -> Result<EvalResult, HarnessError> {
    let train_t = apply_transform(transform, rep_train)?;
    let test_t = apply_transform(transform, rep_test)?;
    let (_, label_score) = downstream_readout(
        &train_t,
        &dataset.train.y,
        &test_t,
        &dataset.test.y,
        dataset.task_type,
    )?;
    let cell_mcc = mcc(&dataset.test.z, &test_t)?;
    Ok(EvalResult {
        method,
        task_type: spec.task_type,
        d: spec.d,
        k: spec.k,
        seed: spec.seed,
        label_score,
        mcc: cell_mcc,
        ica_converged: match method {
            Method::ErmIca => Some(transform.converged),
            _ => None,
        },
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Runs one cell end to end: generate data, train once, then evaluate the
/// shared representation directly (ERM) and through PCA and ICA transforms.
pub fn run_cell(spec: &CellSpec, settings: &CellSettings) -> Result<Vec<EvalResult>, HarnessError> {
    let t_train = Instant::now();
    let dataset = make_dataset(&dataset_config_for(spec, settings))?;
    let trained = train(&dataset, &train_config_for(spec, settings))?;
    let model = trained.model;
    let rep_train = model.extract_representation(&dataset.train.x);
    let rep_test = model.extract_representation(&dataset.test.x);

    let erm = EvalResult {
        method: Method::Erm,
        task_type: spec.task_type,
        d: spec.d,
        k: spec.k,
        seed: spec.seed,
        label_score: head_label_score(&model, &dataset)?,
        mcc: mcc(&dataset.test.z, &rep_test)?,
        ica_converged: None,
        wall_time_s: t_train.elapsed().as_secs_f64(),
    };

    let t_pca = Instant::now();
    let pca = fit_pca(&rep_train)?;
    let erm_pca = transformed_eval(
        spec,
        &dataset,
        &rep_train,
        &rep_test,
        &pca,
        Method::ErmPca,
        t_pca,
    )?;

    let t_ica = Instant::now();
    let ica = fit_ica(&mut ica_rng_for(spec), &rep_train, &settings.ica)?;
    let erm_ica = transformed_eval(
        spec,
        &dataset,
        &rep_train,
        &rep_test,
        &ica,
        Method::ErmIca,
        t_ica,
    )?;

    Ok(vec![erm, erm_pca, erm_ica])
}

/// All rows of a sweep; aggregates are recomputed from rows on demand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<EvalResult>,
}

/// Seed-aggregated statistics for one (method, task, d, k) group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellAggregate {
    pub method: Method,
    pub task_type: TaskType,
    pub d: usize,
    pub k: usize,
    pub n_seeds: usize,
    pub label_mean: f64,
    pub label_std: f64,
    pub mcc_mean: f64,
    pub mcc_std: f64,
}

fn method_rank(m: Method) -> usize {
    match m {
        Method::Erm => 0,
        Method::ErmPca => 1,
        Method::ErmIca => 2,
    }
}

impl ResultsTable {
    /// Builds a table with rows in canonical order (task, d, k, seed,
    /// method) so serialized output is independent of execution order.
    pub fn new(mut rows: Vec<EvalResult>) -> Self {
        rows.sort_by(|a, b| {
            (
                a.task_type.as_str(),
                a.d,
                a.k,
                a.seed,
                method_rank(a.method),
            )
                .cmp(&(
                    b.task_type.as_str(),
                    b.d,
                    b.k,
                    b.seed,
                    method_rank(b.method),
                ))
        });
        ResultsTable { rows }
    }

    /// Mean and sample standard deviation over seeds per (method, task,
    /// d, k) group, in canonical order. A single seed yields std 0.
    pub fn aggregates(&self) -> Vec<CellAggregate> {
        let mut groups: Vec<((&'static str, usize, usize, usize), Vec<&EvalResult>)> = Vec::new();
        for row in &self.rows {
            let key = (
                row.task_type.as_str(),
                row.d,
                row.k,
                method_rank(row.method),
            );
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, members)) => members.push(row),
                None => groups.push((key, vec![row])),
            }
        }
        groups.sort_by(|(a, _), (b, _)| a.cmp(b));
        groups
            .into_iter()
            .map(|(_, members)| {
                let (label_mean, label_std) = mean_std(members.iter().map(|r| r.label_score));
                let (mcc_mean, mcc_std) = mean_std(members.iter().map(|r| r.mcc));
                let first = members[0];
                CellAggregate {
                    method: first.method,
                    task_type: first.task_type,
                    d: first.d,
                    k: first.k,
                    n_seeds: members.len(),
                    label_mean,
                    label_std,
                    mcc_mean,
                    mcc_std,
                }
            })
            .collect()
    }
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let values: Vec<f64> = values.collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() <= 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every cell of the grid, skipping cells whose completion marker
/// already exists under `<out>/cells/`. Failed cells are recorded as
/// `.error.json` files and logged; they do not abort the sweep.
pub fn run_sweep(
    config: &ExperimentConfig,
    out_dir: &Path,
    workers: Option<usize>,
) -> Result<ResultsTable, HarnessError> {
    config.validate()?;
    let cells_dir = out_dir.join("cells");
    fs::create_dir_all(&cells_dir)?;
    let settings = config.settings();
    let specs = config.cells();

    let execute = |spec: &CellSpec| -> Vec<EvalResult> {
        let marker = cells_dir.join(format!("{}.json", spec.marker_name()));
        if marker.exists() {
            match fs::read_to_string(&marker)
                .map_err(HarnessError::from)
                .and_then(|text| Ok(serde_json::from_str::<Vec<EvalResult>>(&text)?))
            {
                Ok(rows) => return rows,
                Err(err) => {
                    eprintln!(
                        "warning: unreadable marker {} ({err}); re-running cell",
                        marker.display()
                    );
                }
            }
        }
        match run_cell(spec, &settings) {
            Ok(rows) => {
                if let Err(err) = fs::write(
                    &marker,
                    serde_json::to_string_pretty(&rows).expect("rows serialize"),
                ) {
                    eprintln!("warning: cannot write marker {}: {err}", marker.display());
                }
                rows
            }
            Err(err) => {
                let error_path = cells_dir.join(format!("{}.error.json", spec.marker_name()));
                let _ = fs::write(
                    &error_path,
                    serde_json::json!({
                        "cell": spec.marker_name(),
                        "error": err.to_string(),
                    })
                    .to_string(),
                );
                eprintln!("cell {} failed: {err}", spec.marker_name());
                Vec::new()
            }
        }
    };

    let rows: Vec<EvalResult> = match workers {
        Some(1) => specs.iter().flat_map(|s| execute(s)).collect(),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
            pool.install(|| specs.par_iter().flat_map_iter(|s| execute(s)).collect())
        }
        None => specs.par_iter().flat_map_iter(|s| execute(s)).collect(),
    };

    Ok(ResultsTable::new(rows))
}

/// Rebuilds a table from the completion markers in `<out>/cells/`.
pub fn load_table_from_markers(out_dir: &Path) -> Result<ResultsTable, HarnessError> {
    let cells_dir = out_dir.join("cells");
    let mut rows = Vec::new();
    for entry in fs::read_dir(&cells_dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if !name.ends_with(".json") || name.ends_with(".error.json") {
            continue;
        }
        let cell_rows: Vec<EvalResult> = serde_json::from_str(&fs::read_to_string(&path)?)?;
        rows.extend(cell_rows);
    }
    Ok(ResultsTable::new(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            task_type: TaskType::Regression,
            d: 4,
            k_list: vec![2, 4],
            seeds: vec![0, 1],
            train: TrainOverrides {
                epochs: Some(4),
                batch_size: None,
                base_lr: None,
                lr_halve_every: None,
            },
            ica: IcaSettings {
                max_iter: 500,
                tol: 1e-4,
            },
            data: DataSettings::default(),
            out_dir: None,
        }
    }

    #[test]
    fn config_validation_catches_bad_grids() {
        let mut config = tiny_config();
        config.k_list = vec![5];
        assert!(matches!(config.validate(), Err(HarnessError::Config(_))));
        config.k_list = vec![2];
        config.seeds.clear();
        assert!(matches!(config.validate(), Err(HarnessError::Config(_))));
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let json = r#"{"task_type":"regression","d":4,"k_list":[2],"seeds":[0],"typo_key":1}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(json).is_err());
    }

    #[test]
    fn cell_seeds_are_stable_and_distinct() {
        let a = CellSpec {
            task_type: TaskType::Regression,
            d: 16,
            k: 8,
            seed: 0,
        };
        let b = CellSpec {
            task_type: TaskType::Regression,
            d: 16,
            k: 12,
            seed: 0,
        };
        let c = CellSpec {
            task_type: TaskType::Classification,
            d: 16,
            k: 8,
            seed: 0,
        };
        assert_eq!(a.cell_seed(), a.cell_seed());
        assert_ne!(a.cell_seed(), b.cell_seed());
        assert_ne!(a.cell_seed(), c.cell_seed());
    }

    #[test]
    fn run_cell_is_deterministic_on_science_columns() {
        let config = tiny_config();
        let spec = CellSpec {
            task_type: TaskType::Regression,
            d: 4,
            k: 2,
            seed: 0,
        };
        let a = run_cell(&spec, &config.settings()).unwrap();
        let b = run_cell(&spec, &config.settings()).unwrap();
        assert_eq!(a.len(), 3);
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.method, rb.method);
            assert_eq!(ra.label_score.to_bits(), rb.label_score.to_bits());
            assert_eq!(ra.mcc.to_bits(), rb.mcc.to_bits());
            assert_eq!(ra.ica_converged, rb.ica_converged);
        }
        assert_eq!(a[0].method, Method::Erm);
        assert_eq!(a[2].method, Method::ErmIca);
        assert!(a[2].ica_converged.is_some());
    }

    #[test]
    fn sweep_produces_expected_row_count_and_resumes() {
        let config = tiny_config();
        let dir = std::env::temp_dir().join("erm_ica_sweep_unit");
        let _ = fs::remove_dir_all(&dir);
        let table = run_sweep(&config, &dir, Some(1)).unwrap();
        // 2 k-values × 2 seeds × 3 methods.
        assert_eq!(table.rows.len(), 12);
        let resumed = run_sweep(&config, &dir, Some(1)).unwrap();
        for (a, b) in table.rows.iter().zip(&resumed.rows) {
            assert_eq!(a.label_score.to_bits(), b.label_score.to_bits());
            assert_eq!(a.mcc.to_bits(), b.mcc.to_bits());
            assert_eq!(a.wall_time_s.to_bits(), b.wall_time_s.to_bits());
        }
        let from_markers = load_table_from_markers(&dir).unwrap();
        assert_eq!(from_markers.rows.len(), 12);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn aggregates_group_and_reduce_correctly() {
        let mk = |method, k: usize, seed: u64, label: f64, m: f64| EvalResult {
            method,
            task_type: TaskType::Regression,
            d: 4,
            k,
            seed,
            label_score: label,
            mcc: m,
            ica_converged: None,
            wall_time_s: 0.0,
        };
        let table = ResultsTable::new(vec![
            mk(Method::Erm, 2, 0, 0.8, 0.5),
            mk(Method::Erm, 2, 1, 0.6, 0.7),
            mk(Method::ErmIca, 2, 0, 0.8, 0.9),
        ]);
        let aggs = table.aggregates();
        assert_eq!(aggs.len(), 2);
        let erm = aggs.iter().find(|a| a.method == Method::Erm).unwrap();
        assert_eq!(erm.n_seeds, 2);
        assert!((erm.label_mean - 0.7).abs() < 1e-12);
        // Sample std of {0.8, 0.6} is √0.02.
        assert!((erm.label_std - 0.02f64.sqrt()).abs() < 1e-12);
        let ica = aggs.iter().find(|a| a.method == Method::ErmIca).unwrap();
        assert_eq!(ica.n_seeds, 1);
        assert_eq!(ica.mcc_std, 0.0);
    }
}
