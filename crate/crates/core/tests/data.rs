use proptest::prelude::*;
use rand::Rng as _;
use ueeg::classical::{Features, Knn};
use ueeg::data::{make_split, standardize, window_starts, Difficulty, EegDataset, SynthSpec};
use ueeg::rng::stream;

fn labelled(n: usize, k: usize) -> EegDataset {
    EegDataset::new(
        "p",
        k,
        1,
        1,
        vec![0.0; n],
        (0..n).map(|i| i % k).collect(),
        None,
    )
    .unwrap()
}

#[test]
fn splits_partition_for_random_sizes_and_seeds() {
    let mut rng = stream(7, "split-pairs");
    for _ in 0..100 {
        let n = rng.random_range(4..500);
        let seed = rng.random::<u64>();
        let plan = make_split(&labelled(n, 3), seed).unwrap();
        let s = &plan.splits;
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>(), "n={n} seed={seed}");
        assert_eq!(s.test.len(), n / 4);
        assert_eq!(s.val.len(), (n - n / 4) / 4);
    }
}

proptest! {
    #[test]
    fn window_starts_are_an_in_bounds_progression(len in 32usize..2000, overlap in 0usize..32) {
        let starts = window_starts(len, 32, overlap).unwrap();
        let stride = 32 - overlap;
        prop_assert_eq!(starts[0], 0);
        for w in starts.windows(2) {
            prop_assert_eq!(w[1] - w[0], stride);
        }
        let last = *starts.last().unwrap();
        prop_assert!(last + 32 <= len);
        prop_assert!(last + stride + 32 > len);
    }

    #[test]
    fn container_round_trip_is_bit_exact(
        c in 1usize..4, t in 1usize..6, n in 1usize..6, seed in any::<u64>(), declare in any::<bool>()
    ) {
        let mut rng = stream(seed, "container");
        let records = (0..n * c * t).map(|_| f32::from_bits(rng.random::<u32>() & 0xbfff_ffff)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..3)).collect();
        let splits = declare.then(|| ueeg::data::Splits { train: vec![0], val: vec![], test: (1..n).collect() });
        let ds = EegDataset::new("rt", 3, c, t, records, labels, splits).unwrap();
        let bytes = ds.to_bytes();
        let back = EegDataset::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert!(back.records.iter().zip(&ds.records).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

fn channel_moments(ds: &EegDataset, indices: &[usize]) -> Vec<(f64, f64)> {
    (0..ds.channels)
        .map(|ch| {
            let vals: Vec<f64> = indices
                .iter()
                .flat_map(|&i| {
                    ds.record(i)[ch * ds.timesteps..(ch + 1) * ds.timesteps]
                        .iter()
                        .map(|&v| f64::from(v))
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            (mean, var.sqrt())
        })
        .collect()
}

#[test]
fn standardization_uses_training_statistics_only() {
    // train records centred at 5, test records centred at -3
    let mut rng = stream(1, "leak");
    let (c, t, n) = (3, 20, 40);
    let records = (0..n * c * t)
        .map(|j| {
            let offset = if j / (c * t) < 30 { 5.0 } else { -3.0 };
            offset + rng.random_range(-2.0..2.0) * (1 + j % c) as f32
        })
        .collect();
    let ds = EegDataset::new("leak", 2, c, t, records, vec![0; n], None).unwrap();
    let train: Vec<usize> = (0..30).collect();
    let test: Vec<usize> = (30..40).collect();
    let (z, _) = standardize(&ds, &train).unwrap();
    for (mean, std) in channel_moments(&z, &train) {
        assert!(mean.abs() < 1e-5, "{mean}");
        assert!((std - 1.0).abs() < 1e-3, "{std}");
    }
    for (mean, _) in channel_moments(&z, &test) {
        assert!(mean < -1.0, "test mean {mean} looks refitted");
    }
}

#[test]
fn noise_free_synthetic_data_is_nearest_neighbour_separable() {
    for preset in ["ThoughtViz", "SEED", "ERN"] {
        let mut spec = SynthSpec::preset(preset, 3).unwrap();
        spec.difficulty = Difficulty::NONE;
        spec.num_records = 120;
        let ds = spec.generate().unwrap();
        let plan = make_split(&ds, 0).unwrap();
        let feats = |idx: &[usize]| {
            Features::new(
                idx.iter()
                    .flat_map(|&i| ds.record(i).iter().map(|&v| f64::from(v)))
                    .collect(),
                ds.record_len(),
            )
            .unwrap()
        };
        let knn = Knn::fit(
            1,
            feats(&plan.splits.train),
            ds.labels_of(&plan.splits.train),
        )
        .unwrap();
        let pred = knn.predict(&feats(&plan.splits.test)).unwrap();
        assert_eq!(pred, ds.labels_of(&plan.splits.test), "{preset}");
    }
}
