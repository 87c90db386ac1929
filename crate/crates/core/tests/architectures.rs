mod common;

use common::GOLDEN;
use rand::Rng as _;
use ueeg::arch::{Arch, Checkpoint, Model, ModelConfig, ModelError};
use ueeg::harness::gradcheck::{model_check, MODEL_TOL};
use ueeg::nn::{LayerKind, Mode};
use ueeg::optim::binary_cross_entropy;
use ueeg::rng::stream;
use ueeg::tensor::{Tape, Tensor};

fn input(b: usize, c: usize, t: usize, seed: u64) -> Tensor<f32> {
    let mut rng = stream(seed, "arch-input");
    Tensor::from_fn(&[b, c, t], |_| rng.random_range(-1.0..1.0))
}

#[test]
fn parameter_counts_match_shape_walk() {
    for ((c, t, k), counts) in GOLDEN {
        for (arch, expected) in Arch::ALL.into_iter().zip(counts) {
            let model = Model::<f32>::build(&ModelConfig::new(arch, c, t, k)).unwrap();
            assert_eq!(model.param_count(), expected, "{arch} at ({c},{t},{k})");
        }
    }
}

#[test]
fn classifier_rows_are_distributions() {
    for arch in [Arch::FourCnn, Arch::GruEncoder] {
        for k in [2, 10] {
            let model = Model::<f32>::build(&ModelConfig::new(arch, 14, 32, k)).unwrap();
            let p = model.classify(&input(2, 14, 32, 1)).unwrap();
            assert_eq!(p.shape(), &[2, k]);
            for row in p.data().chunks(k) {
                assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            }
        }
    }
    let ae = Model::<f32>::build(&ModelConfig::new(Arch::Autoencoder, 14, 32, 10)).unwrap();
    assert_eq!(
        ae.classify(&input(2, 14, 32, 1)).unwrap_err(),
        ModelError::NoClassifierHead {
            arch: Arch::Autoencoder
        }
    );
}

#[test]
fn gru_encoder_geometry() {
    let model = Model::<f32>::build(&ModelConfig::new(Arch::GruEncoder, 14, 32, 10)).unwrap();
    let gru = model.layers().iter().find(|l| l.name == "gru").unwrap();
    assert!(matches!(gru.kind, LayerKind::Gru { hidden: 30, .. }));
    for b in [1, 3] {
        assert_eq!(
            model.encode(&input(b, 14, 32, 2)).unwrap().shape(),
            &[b, 128]
        );
    }
}

#[test]
fn zeroed_gru_leaves_only_the_embedding_bias() {
    let mut model = Model::<f32>::build(&ModelConfig::new(Arch::GruEncoder, 14, 32, 10)).unwrap();
    for layer in model.layers_mut() {
        if layer.name == "gru" {
            for w in &mut layer.weights {
                w.value = Tensor::zeros(w.value.shape());
            }
        }
        if layer.name == "embed" {
            let bias = layer.weight_mut("bias").unwrap();
            *bias = Tensor::from_fn(&[128], |i| i as f32 * 0.01);
        }
    }
    let e = model.encode(&input(2, 14, 32, 3)).unwrap();
    for row in e.data().chunks(128) {
        for (i, &v) in row.iter().enumerate() {
            assert_eq!(v, i as f32 * 0.01);
        }
    }
}

#[test]
fn unshared_gru_variant_builds_one_gru_per_map() {
    let mut cfg = ModelConfig::new(Arch::GruEncoder, 4, 32, 3);
    cfg.gru_shared = false;
    let model = Model::<f32>::build(&cfg).unwrap();
    let grus = model
        .layers()
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::Gru { .. }))
        .count();
    assert_eq!(grus, 50);
    assert_eq!(
        model.encode(&input(2, 4, 32, 4)).unwrap().shape(),
        &[2, 128]
    );
}

#[test]
fn autoencoder_shapes_and_loss() {
    let model = Model::<f32>::build(&ModelConfig::new(Arch::Autoencoder, 14, 32, 10)).unwrap();
    let x = input(3, 14, 32, 5);
    assert_eq!(model.reconstruct(&x).unwrap().shape(), &[3, 14, 32]);
    assert_eq!(model.encode(&x).unwrap().shape(), &[3, 128]);
    assert_eq!(model.embedding_dim(), 128);

    let half = Tensor::full(&[2, 14, 32], 0.5f32);
    let mut tape = Tape::new();
    let xv = tape.constant(half.clone());
    let mut rng = stream(0, "ae");
    let (pass, _) = model
        .forward(&mut tape, xv, Mode::Eval, &mut rng, false)
        .unwrap();
    let loss = binary_cross_entropy(&mut tape, pass.reconstruction.unwrap(), &half).unwrap();
    let v = tape.value(loss).item();
    assert!(v.is_finite() && v > 0.0, "{v}");
}

#[test]
fn eval_mode_is_deterministic_and_train_mode_is_seeded() {
    for arch in Arch::ALL {
        let model = Model::<f32>::build(&ModelConfig::new(arch, 14, 32, 10)).unwrap();
        let x = input(4, 14, 32, 6);
        assert!(model.encode(&x).unwrap().bit_eq(&model.encode(&x).unwrap()));

        let train = |seed| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let mut rng = stream(seed, "dropout");
            let (pass, _) = model
                .forward(&mut tape, xv, Mode::Train, &mut rng, false)
                .unwrap();
            let out = pass.logits.or(pass.reconstruction).unwrap();
            tape.value(out).clone()
        };
        assert!(train(9).bit_eq(&train(9)));
    }
}

#[test]
fn classification_is_batch_equivariant() {
    for arch in [Arch::FourCnn, Arch::GruEncoder] {
        let model = Model::<f32>::build(&ModelConfig::new(arch, 14, 32, 2).with_seed(4)).unwrap();
        let x = input(4, 14, 32, 7);
        let full = model.classify(&x).unwrap();
        let rows = 14 * 32;
        let order = [2, 0, 3, 1];
        let permuted = Tensor::new(
            &[4, 14, 32],
            order
                .iter()
                .flat_map(|&i| x.data()[i * rows..][..rows].to_vec())
                .collect(),
        )
        .unwrap();
        let p = model.classify(&permuted).unwrap();
        for (j, &i) in order.iter().enumerate() {
            assert_eq!(&p.data()[j * 2..][..2], &full.data()[i * 2..][..2]);
        }
        for i in 0..4 {
            let one = Tensor::new(&[1, 14, 32], x.data()[i * rows..][..rows].to_vec()).unwrap();
            let single = model.classify(&one).unwrap();
            for (a, b) in single.data().iter().zip(&full.data()[i * 2..][..2]) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn depthwise_stage_keeps_input_channels_apart() {
    // the depthwise stage reads one input channel (the stacked conv2 maps);
    // with zero bias a zero input must zero every derived map, and a nonzero
    // input must not
    let model = Model::<f64>::build(&ModelConfig::new(Arch::GruEncoder, 3, 32, 2)).unwrap();
    let dw = model
        .layers()
        .iter()
        .find(|l| l.name == "depthwise")
        .unwrap();
    let kernel = dw.weight("kernel").unwrap().clone();
    let m = kernel.shape()[0];
    let mut tape = Tape::new();
    let kv = tape.constant(kernel);
    let bv = tape.constant(Tensor::zeros(&[m]));
    let zero = tape.constant(Tensor::zeros(&[1, 1, 32, 29]));
    let y =
        ueeg::nn::depthwise_conv2d(&mut tape, zero, kv, bv, ueeg::nn::Padding2d::VALID).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    // three input channels, multiplier 2: zeroing channel 1 zeroes maps 2,3 only
    let k3 = tape.constant(Tensor::from_fn(&[6, 1, 2, 2], |i| 0.1 + i as f64 * 0.01));
    let b3 = tape.constant(Tensor::zeros(&[6]));
    let x = Tensor::from_fn(&[1, 3, 4, 4], |i| {
        if (16..32).contains(&i) {
            0.0
        } else {
            1.0 + i as f64
        }
    });
    let xv = tape.constant(x);
    let y = ueeg::nn::depthwise_conv2d(&mut tape, xv, k3, b3, ueeg::nn::Padding2d::VALID).unwrap();
    for (map, chunk) in tape.value(y).data().chunks(9).enumerate() {
        let zero = chunk.iter().all(|&v| v == 0.0);
        assert_eq!(zero, map == 2 || map == 3, "map {map}");
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for arch in Arch::ALL {
        let model = Model::<f32>::build(&ModelConfig::new(arch, 3, 16, 2).with_seed(11)).unwrap();
        let ckpt = model.to_checkpoint();
        let path = dir.path().join(format!("{arch}.ueeg"));
        ckpt.write(&path).unwrap();
        let back = Checkpoint::read(&path).unwrap();
        assert_eq!(back.to_bytes(), ckpt.to_bytes());
        let restored = Model::<f32>::from_checkpoint(&back).unwrap();
        assert_eq!(restored, model);
        let x = input(2, 3, 16, 8);
        assert!(restored
            .encode(&x)
            .unwrap()
            .bit_eq(&model.encode(&x).unwrap()));
    }
}

#[test]
fn wrong_input_geometry_is_rejected() {
    let model = Model::<f32>::build(&ModelConfig::new(Arch::FourCnn, 14, 32, 10)).unwrap();
    assert!(matches!(
        model.encode(&input(2, 13, 32, 0)),
        Err(ModelError::Tensor(_))
    ));
}

#[test]
fn full_architectures_pass_gradient_check() {
    for seed in 0..2 {
        for arch in Arch::ALL {
            let r = model_check(arch, (3, 16, 2), seed).unwrap();
            assert!(r.passes(MODEL_TOL), "{arch} seed {seed}: {r:?}");
        }
    }
}
