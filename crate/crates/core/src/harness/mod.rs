//! Training loop with best-by-validation selection, evaluation, embedding
//! export and the benchmark grid.

mod bench;
mod eval;
pub mod gradcheck;

pub use bench::{bench, BenchOutput, SuiteCell, SuiteConfig};
pub use eval::{
    encode_dataset, evaluate, evaluate_predictor, InputNorm, ModelPredictor, Predictor, SplitName,
};

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{Arch, Checkpoint, CheckpointError, Model, ModelConfig, ModelError};
use crate::classical::ClassicalError;
use crate::data::{make_split, DataError, EegDataset, Splits, SynthSpec};
use crate::metrics::MetricsError;
use crate::nn::Mode;
use crate::optim::{
    binary_cross_entropy, categorical_cross_entropy, AdaDeltaConfig, AdamConfig, Optimizer,
    OptimizerConfig,
};
use crate::rng::stream;
use crate::tensor::{Tape, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Classical(#[from] ClassicalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("dataset geometry (C, T, K) = {found:?} does not match the checkpoint's {expected:?}")]
    GeometryMismatch {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Io(String),
}

impl HarnessError {
    /// Process exit code: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::InvalidConfig(_) | Self::Model(ModelError::InvalidConfig(_)) => 1,
            Self::NonFiniteLoss { .. }
            | Self::Diverged { .. }
            | Self::Tensor(_)
            | Self::Model(ModelError::Tensor(_)) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Where training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Container { path: PathBuf },
    Csv { path: PathBuf },
    Synth(SynthSpec),
}

impl DataSource {
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        Ok(Self::Synth(SynthSpec::preset(name, seed)?))
    }

    pub fn load(&self) -> Result<EegDataset> {
        Ok(match self {
            Self::Container { path } => EegDataset::load(path)?,
            Self::Csv { path } => EegDataset::import_csv(path)?,
            Self::Synth(spec) => spec.generate()?,
        })
    }

    /// Short name for tables: the preset name or the file stem.
    pub fn label(&self) -> String {
        match self {
            Self::Container { path } | Self::Csv { path } => path.file_stem().map_or_else(
                || path.display().to_string(),
                |s| s.to_string_lossy().into_owned(),
            ),
            Self::Synth(spec) => spec.name.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Adam,
    AdaDelta,
}

impl FromStr for OptimizerName {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(Self::Adam),
            "adadelta" | "ada_delta" => Ok(Self::AdaDelta),
            other => Err(HarnessError::InvalidConfig(format!(
                "unknown optimizer {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub data: DataSource,
    pub optimizer: OptimizerName,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

pub const DEFAULT_MAX_EPOCHS: usize = 100;

impl TrainConfig {
    /// Default bindings: four_cnn Adam/0.001/128, gru_encoder Adam/0.001/64,
    /// autoencoder AdaDelta/0.001/128; 100 epochs, seed 0.
    pub fn new(arch: Arch, data: DataSource) -> Self {
        let (optimizer, batch_size) = match arch {
            Arch::FourCnn => (OptimizerName::Adam, 128),
            Arch::GruEncoder => (OptimizerName::Adam, 64),
            Arch::Autoencoder => (OptimizerName::AdaDelta, 128),
        };
        Self {
            arch,
            data,
            optimizer,
            lr: 0.001,
            batch_size,
            max_epochs: DEFAULT_MAX_EPOCHS,
            seed: 0,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(HarnessError::InvalidConfig(
                "batch size must be at least 1".into(),
            ));
        }
        if self.max_epochs == 0 {
            return Err(HarnessError::InvalidConfig(
                "max epochs must be at least 1".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(HarnessError::InvalidConfig(format!(
                "learning rate {}",
                self.lr
            )));
        }
        Ok(())
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        match self.optimizer {
            OptimizerName::Adam => OptimizerConfig::Adam(AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            }),
            OptimizerName::AdaDelta => OptimizerConfig::AdaDelta(AdaDeltaConfig {
                lr: self.lr,
                ..AdaDeltaConfig::default()
            }),
        }
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_value(self)
            .expect("config is always serializable")
            .to_string()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::InvalidConfig(e.to_string()))
    }
}

/// One epoch of training. Equality ignores the wall-clock time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean training loss over the epoch's batches.
    pub train_loss: f64,
    /// Eval-mode accuracy on the training split after the epoch.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub wall_seconds: f64,
}

impl PartialEq for EpochRecord {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.train_accuracy.to_bits() == other.train_accuracy.to_bits()
            && self.val_accuracy.to_bits() == other.val_accuracy.to_bits()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Highest validation accuracy, earliest on ties.
    pub best_epoch: usize,
    pub batches_per_epoch: usize,
    /// A final batch of one sample was folded into the previous batch
    /// (train-mode batch norm needs two samples).
    pub merged_trailing_batch: bool,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Weights of the best epoch plus input normalization tensors.
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    pub splits: Splits,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.ueeg";
pub const HISTORY_FILE: &str = "history.json";

/// Loads the data, splits it with the run seed and trains.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let ds = config.data.load()?;
    let plan = make_split(&ds, config.seed)?;
    let outcome = train_on(config, &ds, &plan.splits)?;
    if let Some(dir) = &config.out_dir {
        save_outcome(&outcome, dir)?;
    }
    Ok(outcome)
}

pub fn save_outcome(outcome: &TrainOutcome, dir: &Path) -> Result<()> {
    let io = |e: std::io::Error| HarnessError::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    outcome.checkpoint.write(&dir.join(CHECKPOINT_FILE))?;
    let json =
        serde_json::to_string_pretty(&outcome.history).expect("history is always serializable");
    fs::write(dir.join(HISTORY_FILE), json).map_err(io)
}

/// Batch boundaries over `n` shuffled indices. A final batch of a single
/// sample is merged into its predecessor.
fn batch_ranges(n: usize, batch: usize) -> (Vec<(usize, usize)>, bool) {
    let mut ranges: Vec<(usize, usize)> = (0..n)
        .step_by(batch)
        .map(|s| (s, (s + batch).min(n)))
        .collect();
    let merge = ranges.len() > 1 && ranges.last().is_some_and(|&(s, e)| e - s == 1);
    if merge {
        let (_, end) = ranges.pop().expect("at least two ranges");
        ranges.last_mut().expect("at least one range").1 = end;
    }
    (ranges, merge)
}

/// Trains on explicit splits. The validation split may be empty, in which
/// case selection uses training accuracy.
pub fn train_on(config: &TrainConfig, ds: &EegDataset, splits: &Splits) -> Result<TrainOutcome> {
    config.validate()?;
    if splits.train.is_empty() {
        return Err(HarnessError::InvalidConfig("empty training split".into()));
    }
    let model_config = ModelConfig::new(config.arch, ds.channels, ds.timesteps, ds.num_classes)
        .with_seed(config.seed);
    let mut model = Model::<f32>::build(&model_config)?;
    let norm = InputNorm::fit(config.arch, ds, &splits.train)?;
    let data = norm.apply(ds);
    let mut optimizer = Optimizer::<f32>::new(config.optimizer_config());
    let (ranges, merged) = batch_ranges(splits.train.len(), config.batch_size);
    if merged {
        log::info!("final batch of one sample merged into the previous batch");
    }

    let mut epochs = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(usize, f64, Model<f32>)> = None;
    for epoch in 0..config.max_epochs {
        let started = Instant::now();
        let epoch_seed = config.seed ^ epoch as u64;
        let mut order = splits.train.clone();
        order.shuffle(&mut stream(epoch_seed, "shuffle"));
        let mut dropout_rng = stream(epoch_seed, "dropout");
        let mut loss_sum = 0.0;
        for (b, &(start, end)) in ranges.iter().enumerate() {
            let idx = &order[start..end];
            let x = data.batch(idx);
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let (pass, params) =
                model.forward(&mut tape, xv, Mode::Train, &mut dropout_rng, true)?;
            let non_finite = |e: TensorError| match e {
                TensorError::NonFiniteInput { .. } => {
                    HarnessError::NonFiniteLoss { epoch, batch: b }
                }
                other => other.into(),
            };
            let loss = match pass.logits {
                Some(logits) => categorical_cross_entropy(&mut tape, logits, &data.labels_of(idx)),
                None => binary_cross_entropy(
                    &mut tape,
                    pass.reconstruction.expect("autoencoder output"),
                    &x,
                ),
            }
            .map_err(non_finite)?;
            let value = f64::from(tape.value(loss).item());
            if !value.is_finite() {
                return Err(HarnessError::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += value * idx.len() as f64;
            let grads = tape.backward(loss)?;
            let grad_refs: Vec<_> = params.iter().map(|&p| grads.get(p)).collect();
            optimizer.step(&mut model.trainable_mut(), &grad_refs)?;
            if model
                .trainable()
                .iter()
                .any(|w| w.data().iter().any(|v| !v.is_finite()))
            {
                return Err(HarnessError::Diverged {
                    epoch,
                    detail: format!("non-finite parameters after batch {b}"),
                });
            }
            model.update_running_stats(&pass.bn_stats);
        }
        let (train_accuracy, val_accuracy) =
            eval::accuracies(&model, &data, splits).map_err(|e| match e {
                HarnessError::Model(ModelError::Tensor(t @ TensorError::NonFiniteInput { .. })) => {
                    HarnessError::Diverged {
                        epoch,
                        detail: format!("evaluation: {t}"),
                    }
                }
                other => other,
            })?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / splits.train.len() as f64,
            train_accuracy,
            val_accuracy,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} train acc {:.4} val acc {:.4} ({:.1}s)",
            record.train_loss,
            record.train_accuracy,
            record.val_accuracy,
            record.wall_seconds
        );
        if best.as_ref().is_none_or(|(_, acc, _)| val_accuracy > *acc) {
            best = Some((epoch, val_accuracy, model.clone()));
        }
        epochs.push(record);
    }
    let (best_epoch, _, best_model) = best.expect("at least one epoch");
    let mut checkpoint = best_model.to_checkpoint();
    checkpoint.tensors.extend(norm.to_tensors());
    Ok(TrainOutcome {
        checkpoint,
        history: TrainHistory {
            epochs,
            best_epoch,
            batches_per_epoch: ranges.len(),
            merged_trailing_batch: merged,
        },
        splits: splits.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_layout() {
        assert_eq!(batch_ranges(10, 4), (vec![(0, 4), (4, 8), (8, 10)], false));
        assert_eq!(batch_ranges(9, 4), (vec![(0, 4), (4, 9)], true));
        assert_eq!(batch_ranges(1, 4), (vec![(0, 1)], false));
        assert_eq!(batch_ranges(5, 128), (vec![(0, 5)], false));
    }

    #[test]
    fn default_bindings() {
        let data = DataSource::preset("SEED", 0).unwrap();
        let cnn = TrainConfig::new(Arch::FourCnn, data.clone());
        assert_eq!(
            (cnn.optimizer, cnn.lr, cnn.batch_size, cnn.max_epochs),
            (OptimizerName::Adam, 0.001, 128, 100)
        );
        let gru = TrainConfig::new(Arch::GruEncoder, data.clone());
        assert_eq!((gru.optimizer, gru.batch_size), (OptimizerName::Adam, 64));
        let ae = TrainConfig::new(Arch::Autoencoder, data);
        assert_eq!(
            (ae.optimizer, ae.batch_size),
            (OptimizerName::AdaDelta, 128)
        );
    }

    #[test]
    fn config_validation_and_json() {
        let mut cfg = TrainConfig::new(Arch::FourCnn, DataSource::preset("ERN", 1).unwrap());
        assert_eq!(
            TrainConfig::from_json(&cfg.to_canonical_json()).unwrap(),
            cfg
        );
        cfg.batch_size = 0;
        assert!(matches!(
            cfg.validate(),
            Err(HarnessError::InvalidConfig(_))
        ));
        assert_eq!(HarnessError::InvalidConfig(String::new()).exit_code(), 1);
        assert_eq!(
            HarnessError::NonFiniteLoss { epoch: 0, batch: 0 }.exit_code(),
            3
        );
        assert_eq!(
            HarnessError::Data(DataError::TooFewSamples { n: 1 }).exit_code(),
            2
        );
    }
}
