#![allow(dead_code)]

use ueeg::data::{Difficulty, EegDataset, Splits, SynthSpec};

/// Eight records at `(C, T, K) = (3, 16, 2)`.
pub const TINY: (usize, usize, usize) = (3, 16, 2);

/// Synthetic generator settings at the tiny geometry.
pub fn tiny_spec(records: usize, difficulty: f64, seed: u64) -> SynthSpec {
    SynthSpec {
        name: "tiny".into(),
        channels: TINY.0,
        timesteps: TINY.1,
        num_classes: TINY.2,
        num_records: records,
        seed,
        difficulty: Difficulty(difficulty),
    }
}

/// The 8-sample separable set, with every record in every split.
pub fn overfit_set() -> (EegDataset, Splits) {
    let ds = tiny_spec(8, 0.5, 0).generate().unwrap();
    let all: Vec<usize> = (0..8).collect();
    let splits = Splits {
        test: all.clone(),
        train: all.clone(),
        val: all,
    };
    (ds, splits)
}

pub mod oracle;

/// Trainable parameter counts from an independent walk over the layer
/// shapes: `(C, T, K) → [four_cnn, gru_encoder, autoencoder]`. The tiny
/// geometry followed by ThoughtViz, SEED, ERN, BMNIST and SMR.
pub const GOLDEN: [((usize, usize, usize), [usize; 3]); 6] = [
    ((3, 16, 2), [225_812, 239_380, 235_018]),
    ((14, 32, 10), [213_532, 252_700, 256_182]),
    ((62, 32, 3), [260_885, 300_053, 460_470]),
    ((56, 200, 2), [1_304_084, 293_652, 48_358_842]),
    ((4, 408, 11), [2_584_349, 242_717, 17_933_226]),
    ((22, 500, 4), [3_189_782, 259_350, 131_911_326]),
];
