//! Epoch-based SGD training with per-epoch validation and best-model
//! selection.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    init_model, loss, sgd_step, LossKind, Mode, NetworkError, OptimizerState, PredictorModel,
};
use crate::datagen::{Dataset, TaskType};
use crate::numerics::RngStream;

const MOMENTUM: f64 = 0.9;
const WEIGHT_DECAY: f64 = 5e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// The learning rate is halved after every block of this many epochs.
    pub lr_halve_every: usize,
    pub loss: LossKind,
    pub seed: u64,
}

impl TrainConfig {
    pub fn regression(seed: u64) -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 512,
            base_lr: 0.01,
            lr_halve_every: 50,
            loss: LossKind::Mse,
            seed,
        }
    }

    pub fn classification(seed: u64) -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 512,
            base_lr: 0.05,
            lr_halve_every: 50,
            loss: LossKind::Bce,
            seed,
        }
    }

    pub fn for_task(task_type: TaskType, seed: u64) -> Self {
        match task_type {
            TaskType::Regression => Self::regression(seed),
            TaskType::Classification => Self::classification(seed),
        }
    }

    /// Learning rate in force during `epoch` (1-indexed): epochs 1..=50 run
    /// at the base rate, 51..=100 at half, and so on.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let blocks = (epoch - 1) / self.lr_halve_every;
        self.base_lr * 0.5_f64.powi(blocks as i32)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Snapshot with the lowest validation loss, already in eval mode.
    pub model: PredictorModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Trains a fresh model on the dataset with the given configuration.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<TrainOutput, NetworkError> {
    let mut rng = RngStream::new(config.seed);
    let model = init_model(&mut rng, data.d, data.k);
    train_from(model, data, config, &mut rng)
}

/// Training loop over an already initialized model. Minibatches are
/// reshuffled every epoch from the supplied stream; the last short batch is
/// kept. Validation loss is computed in eval mode after every epoch and the
/// best snapshot is returned.
pub fn train_from(
    mut model: PredictorModel,
    data: &Dataset,
    config: &TrainConfig,
    shuffle_rng: &mut RngStream,
) -> Result<TrainOutput, NetworkError> {
    assert!(
        config.epochs >= 1 && config.batch_size >= 2,
        "degenerate train config"
    );
    model.set_mode(Mode::Train);
    let mut opt = OptimizerState::new(&model, config.base_lr, MOMENTUM, WEIGHT_DECAY);
    let n = data.train.x.rows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, PredictorModel, usize)> = None;

    for epoch in 1..=config.epochs {
        opt.lr = config.lr_at(epoch);
        shuffle_rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut row_count = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                // A trailing single row cannot provide batch statistics.
                continue;
            }
            let xb = data.train.x.select_rows(chunk);
            let yb = data.train.y.select_rows(chunk);
            let (cache, out) = model.forward_train(&xb)?;
            let (batch_loss, grad_out) = loss(&out, &yb, config.loss)?;
            if !batch_loss.is_finite() {
                return Err(NetworkError::NonFiniteLoss { epoch });
            }
            model.update_running_stats(&cache);
            let grads = model.backward(&cache, &grad_out);
            sgd_step(&mut model, &grads, &mut opt);
            loss_sum += batch_loss * chunk.len() as f64;
            row_count += chunk.len();
        }
        let train_loss = loss_sum / row_count as f64;

        let (_, val_out) = model.forward_eval(&data.val.x);
        let (val_loss, _) = loss(&val_out, &data.val.y, config.loss)?;
        if !val_loss.is_finite() {
            return Err(NetworkError::NonFiniteLoss { epoch });
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            lr: opt.lr,
        });

        if best.as_ref().map_or(true, |(b, _, _)| val_loss < *b) {
            best = Some((val_loss, model.clone(), epoch));
        }
    }

    let (best_val_loss, mut best_model, best_epoch) = best.expect("at least one epoch ran");
    best_model.set_mode(Mode::Eval);
    Ok(TrainOutput {
        model: best_model,
        history,
        best_epoch,
        best_val_loss,
    })
}

/// On-disk model file: every parameter and running statistic plus the
/// configuration that produced it.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub model: PredictorModel,
    pub train_config: TrainConfig,
}

pub fn save_checkpoint(
    path: &Path,
    model: &PredictorModel,
    config: &TrainConfig,
) -> Result<(), NetworkError> {
    let checkpoint = ModelCheckpoint {
        model: model.clone(),
        train_config: config.clone(),
    };
    fs::write(path, serde_json::to_string_pretty(&checkpoint)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint, NetworkError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_dataset, DatasetConfig};

    fn quick_config(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 30,
            batch_size: 512,
            base_lr: 0.01,
            lr_halve_every: 10,
            loss: LossKind::Mse,
            seed,
        }
    }

    #[test]
    fn lr_schedule_halves_in_blocks() {
        let cfg = TrainConfig::regression(0);
        assert_eq!(cfg.lr_at(1), 0.01);
        assert_eq!(cfg.lr_at(50), 0.01);
        assert_eq!(cfg.lr_at(51), 0.005);
        assert_eq!(cfg.lr_at(100), 0.005);
        assert_eq!(cfg.lr_at(101), 0.0025);
        assert_eq!(cfg.lr_at(150), 0.0025);
    }

    #[test]
    fn training_is_deterministic_and_tracks_best() {
        let data = make_dataset(&DatasetConfig::new(TaskType::Regression, 4, 2, 21)).unwrap();
        let cfg = quick_config(3);
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a.model.flatten_params(), b.model.flatten_params());
        assert_eq!(a.history.len(), b.history.len());
        for (ea, eb) in a.history.iter().zip(&b.history) {
            assert_eq!(ea.train_loss.to_bits(), eb.train_loss.to_bits());
            assert_eq!(ea.val_loss.to_bits(), eb.val_loss.to_bits());
        }
        // The selected snapshot is at least as good as the final epoch.
        let final_val = a.history.last().unwrap().val_loss;
        assert!(a.best_val_loss <= final_val);
        assert_eq!(a.best_val_loss, a.history[a.best_epoch - 1].val_loss);
    }

    #[test]
    fn training_reduces_loss_substantially() {
        // Noiseless linear-generator regression: training loss should fall
        // by at least 90% from the first epoch within a modest budget.
        let mut dc = DatasetConfig::new(TaskType::Regression, 4, 4, 33);
        dc.slope = 1.0;
        dc.noise_std = 0.0;
        let data = make_dataset(&dc).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 512,
            base_lr: 0.01,
            lr_halve_every: 50,
            loss: LossKind::Mse,
            seed: 1,
        };
        let out = train(&data, &cfg).unwrap();
        let first = out.history.first().unwrap().train_loss;
        let last = out.history.last().unwrap().train_loss;
        assert!(
            last < 0.1 * first,
            "train loss {last} did not drop 90% from {first}"
        );
    }

    #[test]
    fn divergent_training_reports_the_epoch() {
        let data = make_dataset(&DatasetConfig::new(TaskType::Regression, 4, 2, 50)).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 512,
            base_lr: 1e9,
            lr_halve_every: 50,
            loss: LossKind::Mse,
            seed: 5,
        };
        match train(&data, &cfg) {
            Err(crate::network::NetworkError::NonFiniteLoss { epoch }) => {
                assert!(epoch >= 1 && epoch <= 50)
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let data = make_dataset(&DatasetConfig::new(TaskType::Classification, 3, 2, 40)).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 512,
            base_lr: 0.05,
            lr_halve_every: 50,
            loss: LossKind::Bce,
            seed: 2,
        };
        let out = train(&data, &cfg).unwrap();
        let dir = std::env::temp_dir().join("erm_ica_ckpt_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        save_checkpoint(&path, &out.model, &cfg).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.model.flatten_params(), out.model.flatten_params());
        assert_eq!(back.model.bn1.running_mean, out.model.bn1.running_mean);
        assert_eq!(back.model.bn2.running_var, out.model.bn2.running_var);
        assert_eq!(back.train_config.epochs, cfg.epochs);
        fs::remove_dir_all(&dir).unwrap();
    }
}
