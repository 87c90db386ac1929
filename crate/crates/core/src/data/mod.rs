//! EEG datasets: the in-memory container, its on-disk formats, windowing,
//! split protocol, normalization and synthetic generation.

mod container;
mod normalize;
mod split;
mod synth;

pub use container::{CONTAINER_MAGIC, CONTAINER_VERSION};
pub use normalize::{minmax_records, standardize, ChannelStats, STD_FLOOR};
pub use split::{make_split, sliding_window, window_starts, SplitPlan, StratificationWarning};
pub use synth::{Difficulty, SynthSpec, PRESETS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("bad container magic {found:?} at byte 0")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported container version {version} at byte {offset}")]
    VersionUnsupported { version: u8, offset: usize },
    #[error("{section} at byte {offset}: expected {expected} bytes, found {actual}")]
    ShapeMismatch {
        section: &'static str,
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("invalid manifest at byte {offset}: {detail}")]
    Manifest { offset: usize, detail: String },
    #[error("non-finite sample in record {record} at byte {offset}")]
    NonFiniteData { record: usize, offset: usize },
    #[error("label {label} of record {record} at byte {offset} is not below {num_classes}")]
    LabelOutOfRange {
        record: usize,
        label: u64,
        num_classes: usize,
        offset: usize,
    },
    #[error("invalid declared splits: {0}")]
    InvalidSplits(String),
    #[error("csv line {line}: {detail}")]
    Csv { line: u64, detail: String },
    #[error("signal of length {length} is shorter than the window {window}")]
    SignalTooShort { length: usize, window: usize },
    #[error("overlap {overlap} must be below window {window}")]
    InvalidWindow { window: usize, overlap: usize },
    #[error("{n} samples, at least 4 are needed to split")]
    TooFewSamples { n: usize },
    #[error("statistics need at least one record")]
    EmptySelection,
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Index lists for the train, validation and test portions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub test: Vec<usize>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Labelled EEG records of one geometry, `records` row-major `(N, C, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EegDataset {
    pub name: String,
    pub num_classes: usize,
    pub channels: usize,
    pub timesteps: usize,
    pub records: Vec<f32>,
    pub labels: Vec<usize>,
    pub splits: Option<Splits>,
}

impl EegDataset {
    /// Checks every invariant: shapes, finite samples, labels below `K`,
    /// and disjoint in-range declared splits.
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        channels: usize,
        timesteps: usize,
        records: Vec<f32>,
        labels: Vec<usize>,
        splits: Option<Splits>,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            num_classes,
            channels,
            timesteps,
            records,
            labels,
            splits,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.labels.len() * self.record_len() * 4;
        if self.records.len() * 4 != expected {
            return Err(DataError::ShapeMismatch {
                section: "records",
                offset: 0,
                expected,
                actual: self.records.len() * 4,
            });
        }
        if let Some(r) = self.records.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteData {
                record: r / self.record_len().max(1),
                offset: r * 4,
            });
        }
        if let Some((i, &l)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= self.num_classes)
        {
            return Err(DataError::LabelOutOfRange {
                record: i,
                label: l as u64,
                num_classes: self.num_classes,
                offset: i * 4,
            });
        }
        if let Some(s) = &self.splits {
            let mut seen = vec![false; self.len()];
            for &i in s.train.iter().chain(&s.val).chain(&s.test) {
                if i >= self.len() {
                    return Err(DataError::InvalidSplits(format!(
                        "index {i} outside [0,{})",
                        self.len()
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(DataError::InvalidSplits(format!("index {i} appears twice")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Samples per record, `C·T`.
    pub fn record_len(&self) -> usize {
        self.channels * self.timesteps
    }

    pub fn record(&self, i: usize) -> &[f32] {
        let n = self.record_len();
        &self.records[i * n..(i + 1) * n]
    }

    /// Records `indices` stacked as a `(B, C, T)` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let data = indices
            .iter()
            .flat_map(|&i| self.record(i).iter().copied())
            .collect();
        Tensor::new(&[indices.len(), self.channels, self.timesteps], data)
            .expect("record geometry is validated")
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// New dataset holding the records `indices`, in that order, without
    /// declared splits.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            num_classes: self.num_classes,
            channels: self.channels,
            timesteps: self.timesteps,
            records: indices
                .iter()
                .flat_map(|&i| self.record(i).iter().copied())
                .collect(),
            labels: self.labels_of(indices),
            splits: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EegDataset {
        EegDataset::new("t", 2, 1, 2, vec![0.0, 1.0, 2.0, 3.0], vec![0, 1], None).unwrap()
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(matches!(
            EegDataset::new("t", 2, 1, 2, vec![0.0; 3], vec![0, 1], None),
            Err(DataError::ShapeMismatch {
                expected: 16,
                actual: 12,
                ..
            })
        ));
        assert!(matches!(
            EegDataset::new(
                "t",
                2,
                1,
                2,
                vec![0.0, f32::NAN, 0.0, 0.0],
                vec![0, 1],
                None
            ),
            Err(DataError::NonFiniteData {
                record: 0,
                offset: 4
            })
        ));
        assert!(matches!(
            EegDataset::new("t", 2, 1, 2, vec![0.0; 4], vec![0, 2], None),
            Err(DataError::LabelOutOfRange {
                record: 1,
                label: 2,
                ..
            })
        ));
        let overlap = Splits {
            train: vec![0],
            val: vec![],
            test: vec![0, 1],
        };
        assert!(matches!(
            EegDataset::new("t", 2, 1, 2, vec![0.0; 4], vec![0, 1], Some(overlap)),
            Err(DataError::InvalidSplits(_))
        ));
    }

    #[test]
    fn batch_and_subset() {
        let ds = tiny();
        let b = ds.batch(&[1, 0]);
        assert_eq!(b.shape(), &[2, 1, 2]);
        assert_eq!(b.data(), &[2.0, 3.0, 0.0, 1.0]);
        let s = ds.subset(&[1]);
        assert_eq!(s.records, vec![2.0, 3.0]);
        assert_eq!(s.labels, vec![1]);
    }
}
