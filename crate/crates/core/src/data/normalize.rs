//! Per-channel z-scoring with training-split statistics, and per-record
//! min-max scaling.

use super::{DataError, EegDataset, Result};
use crate::tensor::Tensor;

pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel mean and (floored, population) standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Statistics over every timestep of the records `indices`.
    pub fn fit(ds: &EegDataset, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(DataError::EmptySelection);
        }
        let (c, t) = (ds.channels, ds.timesteps);
        let count = (indices.len() * t) as f64;
        let mut mean = vec![0.0; c];
        for &i in indices {
            for (ch, row) in ds.record(i).chunks(t).enumerate() {
                mean[ch] += row.iter().map(|&v| f64::from(v)).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; c];
        for &i in indices {
            for (ch, row) in ds.record(i).chunks(t).enumerate() {
                var[ch] += row
                    .iter()
                    .map(|&v| (f64::from(v) - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        let std = var
            .iter()
            .map(|v| (v / count).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, ds: &EegDataset) -> EegDataset {
        let t = ds.timesteps;
        let mut out = ds.clone();
        for (j, v) in out.records.iter_mut().enumerate() {
            let ch = (j / t) % ds.channels;
            *v = ((f64::from(*v) - self.mean[ch]) / self.std[ch]) as f32;
        }
        out
    }

    /// `(mean, std)` as `f32` tensors, for storing next to model weights.
    pub fn to_tensors(&self) -> (Tensor<f32>, Tensor<f32>) {
        let t = |v: &[f64]| Tensor::from_vec(v.iter().map(|&x| x as f32).collect());
        (t(&self.mean), t(&self.std))
    }

    pub fn from_tensors(mean: &Tensor<f32>, std: &Tensor<f32>) -> Self {
        let v = |t: &Tensor<f32>| t.data().iter().map(|&x| f64::from(x)).collect();
        Self {
            mean: v(mean),
            std: v(std),
        }
    }
}

/// Z-scores every record with statistics fitted on `train` only.
pub fn standardize(ds: &EegDataset, train: &[usize]) -> Result<(EegDataset, ChannelStats)> {
    let stats = ChannelStats::fit(ds, train)?;
    Ok((stats.apply(ds), stats))
}

/// Scales each record independently to `[0, 1]`; constant records become 0.
pub fn minmax_records(ds: &EegDataset) -> EegDataset {
    let mut out = ds.clone();
    let n = ds.record_len();
    for rec in out.records.chunks_mut(n.max(1)) {
        let lo = rec.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = rec.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let span = hi - lo;
        for v in rec.iter_mut() {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
    }
    out
}
