//! Evaluation of trained checkpoints and embedding export.

use std::str::FromStr;

use super::{HarnessError, Result};
use crate::arch::{Arch, Checkpoint, CheckpointError, Model};
use crate::classical::{Features, Knn, RandomForest};
use crate::data::{make_split, minmax_records, ChannelStats, EegDataset, Splits};
use crate::metrics::{accuracy, F1Average, MetricsReport, TableModel};
use crate::tensor::Tensor;

/// Records per eval-mode forward pass.
const EVAL_BATCH: usize = 256;
const NORM_MEAN: &str = "input.mean";
const NORM_STD: &str = "input.std";

/// Input scaling fitted on the training split: channel z-scores for the
/// classifiers, per-record `[0, 1]` scaling for the autoencoder (its
/// reconstruction loss is binary cross-entropy).
#[derive(Debug, Clone, PartialEq)]
pub enum InputNorm {
    ZScore(ChannelStats),
    MinMax,
}

impl InputNorm {
    pub fn fit(arch: Arch, ds: &EegDataset, train: &[usize]) -> Result<Self> {
        Ok(match arch {
            Arch::Autoencoder => Self::MinMax,
            _ => Self::ZScore(ChannelStats::fit(ds, train)?),
        })
    }

    pub fn apply(&self, ds: &EegDataset) -> EegDataset {
        match self {
            Self::ZScore(stats) => stats.apply(ds),
            Self::MinMax => minmax_records(ds),
        }
    }

    pub fn to_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        match self {
            Self::ZScore(stats) => {
                let (mean, std) = stats.to_tensors();
                vec![(NORM_MEAN.into(), mean), (NORM_STD.into(), std)]
            }
            Self::MinMax => Vec::new(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.config.arch == Arch::Autoencoder {
            return Ok(Self::MinMax);
        }
        let get = |name: &str| {
            ckpt.tensor(name)
                .ok_or_else(|| CheckpointError::MissingTensor(name.into()))
        };
        Ok(Self::ZScore(ChannelStats::from_tensors(
            get(NORM_MEAN)?,
            get(NORM_STD)?,
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn indices(self, splits: &Splits) -> &[usize] {
        match self {
            Self::Train => &splits.train,
            Self::Val => &splits.val,
            Self::Test => &splits.test,
        }
    }
}

impl FromStr for SplitName {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" | "validation" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => Err(HarnessError::InvalidConfig(format!(
                "unknown split {other:?}"
            ))),
        }
    }
}

/// Anything that labels records: a trained model or a test double.
pub trait Predictor {
    fn name(&self) -> String;

    /// Predicted labels for `indices`, plus the positive-class probability
    /// per record when available.
    fn predict(&self, ds: &EegDataset, indices: &[usize])
        -> Result<(Vec<usize>, Option<Vec<f64>>)>;
}

/// Eval-mode embeddings of `indices`, one row per record.
pub(super) fn embeddings(
    model: &Model<f32>,
    ds: &EegDataset,
    indices: &[usize],
) -> Result<Features> {
    let mut data = Vec::with_capacity(indices.len() * model.embedding_dim());
    for chunk in indices.chunks(EVAL_BATCH) {
        let e = model.encode(&ds.batch(chunk))?;
        data.extend(e.data().iter().map(|&v| f64::from(v)));
    }
    Ok(Features::new(data, model.embedding_dim())?)
}

fn features_of(f: &Features, rows: std::ops::Range<usize>) -> Features {
    Features {
        data: f.data[rows.start * f.dim..rows.end * f.dim].to_vec(),
        dim: f.dim,
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

/// A softmax-headed model on already normalized data.
pub struct ModelPredictor<'a> {
    pub model: &'a Model<f32>,
}

impl Predictor for ModelPredictor<'_> {
    fn name(&self) -> String {
        match self.model.config().arch {
            Arch::FourCnn => TableModel::FourCNN.to_string(),
            _ => TableModel::GRUNetwork.to_string(),
        }
    }

    fn predict(
        &self,
        ds: &EegDataset,
        indices: &[usize],
    ) -> Result<(Vec<usize>, Option<Vec<f64>>)> {
        let k = ds.num_classes;
        let mut labels = Vec::with_capacity(indices.len());
        let mut positive = Vec::with_capacity(indices.len());
        for chunk in indices.chunks(EVAL_BATCH) {
            let p = self.model.classify(&ds.batch(chunk))?;
            for row in p.data().chunks(k) {
                let row: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
                labels.push(argmax(&row));
                positive.push(row.get(1).copied().unwrap_or(0.0));
            }
        }
        Ok((labels, (k == 2).then_some(positive)))
    }
}

enum HeadKind {
    Knn(Knn),
    Forest(RandomForest),
}

/// KNN or random forest fitted on training-split embeddings.
struct EmbeddingHead<'a> {
    model: &'a Model<f32>,
    head: HeadKind,
}

impl EmbeddingHead<'_> {
    fn proba(&self, f: &Features) -> Result<Vec<Vec<f64>>> {
        Ok(match &self.head {
            HeadKind::Knn(knn) => knn.predict_proba(f)?,
            HeadKind::Forest(rf) => rf.predict_proba(f)?,
        })
    }
}

impl Predictor for EmbeddingHead<'_> {
    fn name(&self) -> String {
        match self.head {
            HeadKind::Knn(_) => TableModel::AutoencoderKNN.to_string(),
            HeadKind::Forest(_) => TableModel::AutoencoderRF.to_string(),
        }
    }

    fn predict(
        &self,
        ds: &EegDataset,
        indices: &[usize],
    ) -> Result<(Vec<usize>, Option<Vec<f64>>)> {
        let proba = self.proba(&embeddings(self.model, ds, indices)?)?;
        let labels = proba.iter().map(|p| argmax(p)).collect();
        let positive = (ds.num_classes == 2).then(|| {
            proba
                .iter()
                .map(|p| p.get(1).copied().unwrap_or(0.0))
                .collect()
        });
        Ok((labels, positive))
    }
}

fn knn_head(train: Features, labels: Vec<usize>) -> Result<Knn> {
    let k = Knn::DEFAULT_K.min(labels.len());
    Ok(Knn::fit(k, train, labels)?)
}

/// Eval-mode `(train accuracy, validation accuracy)` after an epoch. The
/// autoencoder is scored through a KNN head on its embeddings. An empty
/// validation split reports the training accuracy.
pub(super) fn accuracies(
    model: &Model<f32>,
    data: &EegDataset,
    splits: &Splits,
) -> Result<(f64, f64)> {
    let (train, val) = (&splits.train, &splits.val);
    let (train_acc, val_acc) = if model.config().arch == Arch::Autoencoder {
        let all: Vec<usize> = train.iter().chain(val).copied().collect();
        let emb = embeddings(model, data, &all)?;
        let knn = knn_head(features_of(&emb, 0..train.len()), data.labels_of(train))?;
        let train_acc = accuracy(
            &knn.predict(&features_of(&emb, 0..train.len()))?,
            &data.labels_of(train),
        )?;
        let val_acc = if val.is_empty() {
            train_acc
        } else {
            accuracy(
                &knn.predict(&features_of(&emb, train.len()..all.len()))?,
                &data.labels_of(val),
            )?
        };
        (train_acc, val_acc)
    } else {
        let p = ModelPredictor { model };
        let train_acc = accuracy(&p.predict(data, train)?.0, &data.labels_of(train))?;
        let val_acc = if val.is_empty() {
            train_acc
        } else {
            accuracy(&p.predict(data, val)?.0, &data.labels_of(val))?
        };
        (train_acc, val_acc)
    };
    Ok((train_acc, val_acc))
}

pub fn evaluate_predictor(
    predictor: &dyn Predictor,
    ds: &EegDataset,
    indices: &[usize],
    f1_average: F1Average,
) -> Result<MetricsReport> {
    let (pred, scores) = predictor.predict(ds, indices)?;
    Ok(MetricsReport::compute(
        ds.name.clone(),
        predictor.name(),
        &pred,
        &ds.labels_of(indices),
        ds.num_classes,
        scores.as_deref(),
        f1_average,
    )?)
}

fn check_geometry(ckpt: &Checkpoint, ds: &EegDataset) -> Result<()> {
    let c = &ckpt.config;
    let expected = (c.channels, c.timesteps, c.num_classes);
    let found = (ds.channels, ds.timesteps, ds.num_classes);
    if expected != found {
        return Err(HarnessError::GeometryMismatch { expected, found });
    }
    Ok(())
}

/// Scores a checkpoint on one split of `ds`, re-deriving the split from the
/// checkpoint's seed. Classifiers give one report; the autoencoder gives a
/// KNN and a random-forest report, both fitted on training embeddings.
pub fn evaluate(
    ckpt: &Checkpoint,
    ds: &EegDataset,
    split: SplitName,
    f1_average: F1Average,
) -> Result<Vec<MetricsReport>> {
    check_geometry(ckpt, ds)?;
    let model = Model::<f32>::from_checkpoint(ckpt)?;
    let data = InputNorm::from_checkpoint(ckpt)?.apply(ds);
    let plan = make_split(ds, ckpt.config.seed)?;
    let indices = split.indices(&plan.splits);
    if indices.is_empty() {
        return Err(HarnessError::InvalidConfig(format!(
            "split {split:?} is empty"
        )));
    }
    if ckpt.config.arch != Arch::Autoencoder {
        return Ok(vec![evaluate_predictor(
            &ModelPredictor { model: &model },
            &data,
            indices,
            f1_average,
        )?]);
    }
    let train = &plan.splits.train;
    let emb = embeddings(&model, &data, train)?;
    let labels = data.labels_of(train);
    let knn = EmbeddingHead {
        model: &model,
        head: HeadKind::Knn(knn_head(emb.clone(), labels.clone())?),
    };
    let forest = EmbeddingHead {
        model: &model,
        head: HeadKind::Forest(RandomForest::fit(
            &emb,
            &labels,
            RandomForest::DEFAULT_TREES,
            ckpt.config.seed,
        )?),
    };
    Ok(vec![
        evaluate_predictor(&knn, &data, indices, f1_average)?,
        evaluate_predictor(&forest, &data, indices, f1_average)?,
    ])
}

/// Embeddings of every record as a container of geometry `(1, D)` with the
/// original labels and declared splits.
pub fn encode_dataset(ckpt: &Checkpoint, ds: &EegDataset) -> Result<EegDataset> {
    check_geometry(ckpt, ds)?;
    let model = Model::<f32>::from_checkpoint(ckpt)?;
    let data = InputNorm::from_checkpoint(ckpt)?.apply(ds);
    let all: Vec<usize> = (0..ds.len()).collect();
    let emb = embeddings(&model, &data, &all)?;
    Ok(EegDataset::new(
        format!("{}-embeddings", ds.name),
        ds.num_classes,
        1,
        emb.dim,
        emb.data.iter().map(|&v| v as f32).collect(),
        ds.labels.clone(),
        ds.splits.clone(),
    )?)
}
