//! Sliding-window segmentation and the train/validation/test split.

use rand::seq::SliceRandom;

use super::{DataError, EegDataset, Result, Splits};
use crate::rng::stream;
use crate::tensor::Tensor;

/// Window start offsets `0, w−o, 2(w−o), …` that fit inside `length`;
/// the trailing remainder is dropped.
pub fn window_starts(length: usize, window: usize, overlap: usize) -> Result<Vec<usize>> {
    if window == 0 || overlap >= window {
        return Err(DataError::InvalidWindow { window, overlap });
    }
    if length < window {
        return Err(DataError::SignalTooShort { length, window });
    }
    Ok((0..=length - window).step_by(window - overlap).collect())
}

/// Cuts a `(C, L)` signal into `(C, window)` segments.
pub fn sliding_window(
    signal: &Tensor<f32>,
    window: usize,
    overlap: usize,
) -> Result<Vec<Tensor<f32>>> {
    let &[channels, length] = signal.shape() else {
        return Err(DataError::InvalidSpec(format!(
            "signal must be (C, L), got {:?}",
            signal.shape()
        )));
    };
    let data = signal.data();
    Ok(window_starts(length, window, overlap)?
        .into_iter()
        .map(|s| {
            let seg = (0..channels).flat_map(|c| {
                data[c * length + s..c * length + s + window]
                    .iter()
                    .copied()
            });
            Tensor::new(&[channels, window], seg.collect()).expect("segment geometry")
        })
        .collect())
}

/// Classes absent from the training portion of a split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratificationWarning {
    pub missing_classes: Vec<usize>,
}

impl std::fmt::Display for StratificationWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training split lacks classes {:?}", self.missing_classes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub splits: Splits,
    pub seed: u64,
    pub declared: bool,
    pub warning: Option<StratificationWarning>,
}

/// Declared splits are returned verbatim. Otherwise a seeded shuffle puts
/// `⌊N/4⌋` records in test, `⌊(N − test)/4⌋` in validation and the rest in
/// train; each list is sorted ascending.
pub fn make_split(ds: &EegDataset, seed: u64) -> Result<SplitPlan> {
    let n = ds.len();
    if n < 4 {
        return Err(DataError::TooFewSamples { n });
    }
    let (splits, declared) = match &ds.splits {
        Some(s) => (s.clone(), true),
        None => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut stream(seed, "split"));
            let test_len = n / 4;
            let val_len = (n - test_len) / 4;
            let sorted = |s: &[usize]| {
                let mut v = s.to_vec();
                v.sort_unstable();
                v
            };
            let splits = Splits {
                test: sorted(&order[..test_len]),
                val: sorted(&order[test_len..test_len + val_len]),
                train: sorted(&order[test_len + val_len..]),
            };
            (splits, false)
        }
    };
    let mut present = vec![false; ds.num_classes];
    for &i in &splits.train {
        present[ds.labels[i]] = true;
    }
    let missing_classes: Vec<usize> = (0..ds.num_classes).filter(|&k| !present[k]).collect();
    let warning =
        (!missing_classes.is_empty()).then_some(StratificationWarning { missing_classes });
    if let Some(w) = &warning {
        log::warn!("{}: {w}", ds.name);
    }
    Ok(SplitPlan {
        splits,
        seed,
        declared,
        warning,
    })
}
