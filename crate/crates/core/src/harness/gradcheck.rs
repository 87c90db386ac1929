//! Finite-difference verification of every layer and full architecture.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::arch::{Arch, Model, ModelConfig, ModelError};
use crate::nn::{
    batchnorm, conv1d, conv2d, dense, depthwise_conv2d, dropout, gru_last, maxpool2d, GruVars,
    Mode, Padding2d, RunningStats, BN_EPSILON,
};
use crate::optim::{binary_cross_entropy, categorical_cross_entropy};
use crate::rng::{stream, Rng};
use crate::tensor::{grad_check_inputs, GradCheckReport, Result, Tape, Tensor, TensorError, Var};

/// Central-difference step.
pub const GRADCHECK_EPS: f64 = 1e-6;
/// Maximum relative error accepted for a single layer.
pub const LAYER_TOL: f64 = 1e-4;
/// Maximum relative error accepted for a full architecture.
pub const MODEL_TOL: f64 = 1e-3;
/// Coordinates sampled per parameter tensor in end-to-end checks.
pub const MODEL_SAMPLES: usize = 6;

fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Sum of `y` weighted by fixed positive coefficients, so summed gradients
/// (biases) cannot cancel to zero.
fn weighted_sum(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let w = tape.constant(Tensor::from_fn(&shape, |i| (1 + i * 37 % 11) as f64 / 7.0));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn check(
    inputs: &[Tensor<f64>],
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    grad_check_inputs(f, inputs, GRADCHECK_EPS, None)
}

/// Gradient checks of every layer and loss at one seed, as
/// `(layer name, report)` pairs.
pub fn layer_checks(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = stream(seed, "gradcheck/layers");
    let r = &mut rng;
    let mut out = Vec::new();

    let inputs = [
        random(&[2, 2, 4, 5], r),
        random(&[3, 2, 2, 3], r),
        random(&[3], r),
    ];
    out.push((
        "conv2d",
        check(&inputs, |t, v| {
            let y = conv2d(t, v[0], v[1], v[2], Padding2d::same((2, 3)))?;
            weighted_sum(t, y)
        })?,
    ));

    let inputs = [
        random(&[2, 2, 4, 5], r),
        random(&[6, 1, 2, 2], r),
        random(&[6], r),
    ];
    out.push((
        "depthwise_conv2d",
        check(&inputs, |t, v| {
            let y = depthwise_conv2d(t, v[0], v[1], v[2], Padding2d::VALID)?;
            weighted_sum(t, y)
        })?,
    ));

    let inputs = [
        random(&[2, 3, 7], r),
        random(&[2, 3, 3], r),
        random(&[2], r),
    ];
    out.push((
        "conv1d",
        check(&inputs, |t, v| {
            let y = conv1d(t, v[0], v[1], v[2], (1, 1))?;
            weighted_sum(t, y)
        })?,
    ));

    let inputs = [random(&[3, 4], r), random(&[4, 2], r), random(&[2], r)];
    out.push((
        "dense",
        check(&inputs, |t, v| {
            let y = dense(t, v[0], v[1], v[2])?;
            weighted_sum(t, y)
        })?,
    ));

    // distinct values 0.1 apart keep every window maximum away from a tie
    let mut values: Vec<f64> = (0..96).map(|i| i as f64 / 10.0).collect();
    values.shuffle(r);
    let x = Tensor::new(&[2, 2, 4, 6], values)?;
    out.push((
        "maxpool2d",
        check(&[x], |t, v| {
            let y = maxpool2d(t, v[0], (2, 2), (2, 2))?;
            weighted_sum(t, y)
        })?,
    ));

    let rm = random(&[3], r).map(|v| v * 0.1);
    let rv = random(&[3], r).map(|v| 1.0 + 0.5 * v);
    for (name, mode) in [
        ("batchnorm_train", Mode::Train),
        ("batchnorm_eval", Mode::Eval),
    ] {
        let inputs = [random(&[4, 3, 2, 2], r), random(&[3], r), random(&[3], r)];
        out.push((
            name,
            check(&inputs, |t, v| {
                let running = RunningStats {
                    mean: &rm,
                    var: &rv,
                };
                let (y, _) = batchnorm(t, v[0], v[1], v[2], mode, running, BN_EPSILON)?;
                weighted_sum(t, y)
            })?,
        ));
    }

    let inputs = [random(&[2, 5], r)];
    out.push((
        "dropout",
        check(&inputs, |t, v| {
            let mut mask_rng = stream(seed, "gradcheck/dropout");
            let y = dropout(t, v[0], 0.3, Mode::Train, &mut mask_rng)?;
            weighted_sum(t, y)
        })?,
    ));

    // magnitudes kept above 0.05 so no coordinate sits near the kink
    let x = Tensor::from_fn(&[3, 4], |_| {
        let m = r.random_range(0.05..1.0);
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    });
    out.push((
        "relu",
        check(&[x], |t, v| {
            let y = t.relu(v[0])?;
            weighted_sum(t, y)
        })?,
    ));

    let (dim, hidden) = (3, 4);
    let mut inputs = Vec::new();
    for _ in 0..3 {
        inputs.push(random(&[dim, hidden], r).map(|v| v * 0.5));
        inputs.push(random(&[hidden, hidden], r).map(|v| v * 0.5));
        inputs.push(random(&[hidden], r).map(|v| v * 0.1));
    }
    inputs.push(random(&[2, 4, dim], r));
    out.push((
        "gru",
        check(&inputs, |t, v| {
            let h = gru_last(t, v[9], &GruVars::from_slice(&v[..9]))?;
            weighted_sum(t, h)
        })?,
    ));

    let labels: Vec<usize> = (0..4).map(|_| r.random_range(0..3)).collect();
    out.push((
        "categorical_cross_entropy",
        check(&[random(&[4, 3], r).map(|v| 2.0 * v)], |t, v| {
            categorical_cross_entropy(t, v[0], &labels)
        })?,
    ));

    let target = Tensor::from_fn(&[2, 3], |_| r.random_range(0.0..1.0));
    let pred = Tensor::from_fn(&[2, 3], |_| r.random_range(0.1..0.9));
    out.push((
        "binary_cross_entropy",
        check(&[pred], |t, v| binary_cross_entropy(t, v[0], &target))?,
    ));

    Ok(out)
}

/// End-to-end check of one architecture at `(C, T, K)` in train mode: the
/// loss (cross-entropy, or reconstruction BCE for the autoencoder) against
/// every trainable tensor and the input batch, `MODEL_SAMPLES` coordinates
/// each. Biases are moved off zero first; with zero biases, ReLUs fed by
/// dead feature maps sit exactly on their kink.
pub fn model_check(
    arch: Arch,
    geometry: (usize, usize, usize),
    seed: u64,
) -> std::result::Result<GradCheckReport, ModelError> {
    let (c, t, k) = geometry;
    let mut model = Model::<f64>::build(&ModelConfig::new(arch, c, t, k).with_seed(seed))?;
    let mut rng = stream(seed, "gradcheck/model");
    for layer in model.layers_mut() {
        for w in &mut layer.weights {
            if w.trainable && (w.name == "bias" || w.name == "beta" || w.name.starts_with("b_")) {
                w.value = Tensor::from_fn(w.value.shape(), |_| rng.random_range(-0.1..0.1));
            }
        }
    }
    let batch = 2;
    let x = Tensor::from_fn(&[batch, c, t], |_| rng.random_range(0.05..0.95));
    let labels: Vec<usize> = (0..batch).map(|i| i % k).collect();
    let mut inputs: Vec<Tensor<f64>> = model.trainable().into_iter().cloned().collect();
    inputs.push(x.clone());
    let n = inputs.len() - 1;
    let report = grad_check_inputs(
        |tape, vars| {
            let mut drop_rng = stream(seed, "gradcheck/dropout");
            let pass = model
                .forward_with(tape, vars[n], &vars[..n], Mode::Train, &mut drop_rng)
                .map_err(|e| match e {
                    ModelError::Tensor(t) => t,
                    other => TensorError::DomainError {
                        op: "model forward",
                        detail: other.to_string(),
                    },
                })?;
            match pass.logits {
                Some(logits) => categorical_cross_entropy(tape, logits, &labels),
                None => {
                    binary_cross_entropy(tape, pass.reconstruction.expect("autoencoder output"), &x)
                }
            }
        },
        &inputs,
        GRADCHECK_EPS,
        Some((MODEL_SAMPLES, seed)),
    )?;
    Ok(report)
}
