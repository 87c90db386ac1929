//! Class-conditional synthetic EEG.
//!
//! Every class owns one sinusoid per channel (frequency, phase, amplitude).
//! A record of class `k` is its class sinusoids with a shared random phase
//! shift and gain, plus white Gaussian noise. `difficulty` scales all three
//! nuisances: 0 gives exact class templates, 1 gives fully random phase,
//! ±30% gain and unit noise.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, EegDataset, Result};
use crate::rng::stream;

/// Nuisance scale; parses from a number or `easy` / `mid` / `hard`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Difficulty(pub f64);

impl Difficulty {
    pub const NONE: Self = Self(0.0);
    pub const EASY: Self = Self(0.5);
    pub const MID: Self = Self(1.0);
    pub const HARD: Self = Self(2.0);
}

impl FromStr for Difficulty {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::NONE),
            "easy" => Ok(Self::EASY),
            "mid" => Ok(Self::MID),
            "hard" => Ok(Self::HARD),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|d| d.is_finite() && *d >= 0.0)
                .map(Self)
                .ok_or_else(|| DataError::InvalidSpec(format!("difficulty {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub channels: usize,
    pub timesteps: usize,
    pub num_classes: usize,
    pub num_records: usize,
    pub seed: u64,
    pub difficulty: Difficulty,
}

/// `(name, C, T, K, N)` of the desk-scale presets.
pub const PRESETS: [(&str, usize, usize, usize, usize); 7] = [
    ("BMNIST", 4, 408, 11, 1100),
    ("BMNIST_2", 4, 408, 2, 1000),
    ("SEED", 62, 32, 3, 1200),
    ("ERN", 56, 200, 2, 600),
    ("SMR", 22, 500, 4, 600),
    ("ThoughtViz", 14, 32, 10, 1000),
    ("ThoughtViz-small", 14, 32, 10, 2000),
];

impl SynthSpec {
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        let &(name, channels, timesteps, num_classes, num_records) = PRESETS
            .iter()
            .find(|p| p.0.eq_ignore_ascii_case(name))
            .ok_or_else(|| DataError::InvalidSpec(format!("unknown preset {name:?}")))?;
        Ok(Self {
            name: name.to_string(),
            channels,
            timesteps,
            num_classes,
            num_records,
            seed,
            difficulty: Difficulty::MID,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.timesteps == 0 || self.num_records == 0 {
            return Err(DataError::InvalidSpec(
                "channels, timesteps and records must be positive".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(DataError::InvalidSpec(format!(
                "{} classes, at least 2 needed",
                self.num_classes
            )));
        }
        if !self.difficulty.0.is_finite() || self.difficulty.0 < 0.0 {
            return Err(DataError::InvalidSpec(format!(
                "difficulty {}",
                self.difficulty.0
            )));
        }
        Ok(())
    }

    /// Balanced labels (counts differ by at most one) in shuffled order.
    pub fn generate(&self) -> Result<EegDataset> {
        self.validate()?;
        let (c, t, k) = (self.channels, self.timesteps, self.num_classes);
        let mut rng = stream(self.seed, "synth/templates");
        let max_freq = (t as f64 / 4.0).max(1.0);
        // (frequency in cycles per record, phase, amplitude) per class and channel
        let templates: Vec<(f64, f64, f64)> = (0..k * c)
            .map(|_| {
                (
                    rng.random_range(1.0..=max_freq),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.5..1.5),
                )
            })
            .collect();

        let mut rng = stream(self.seed, "synth/records");
        let mut labels: Vec<usize> = (0..self.num_records).map(|i| i % k).collect();
        labels.shuffle(&mut rng);
        let d = self.difficulty.0;
        let shift = std::f64::consts::PI * d.min(1.0);
        let gain_spread = 0.3 * d.min(1.0);
        let mut records = Vec::with_capacity(self.num_records * c * t);
        for &label in &labels {
            let psi = if shift > 0.0 {
                rng.random_range(-shift..=shift)
            } else {
                0.0
            };
            let gain = if gain_spread > 0.0 {
                rng.random_range(1.0 - gain_spread..=1.0 + gain_spread)
            } else {
                1.0
            };
            for ch in 0..c {
                let (f, phi, a) = templates[label * c + ch];
                for step in 0..t {
                    let clean = gain
                        * a
                        * (std::f64::consts::TAU * f * step as f64 / t as f64 + phi + psi).sin();
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    records.push((clean + d * noise) as f32);
                }
            }
        }
        EegDataset::new(self.name.clone(), k, c, t, records, labels, None)
    }
}
