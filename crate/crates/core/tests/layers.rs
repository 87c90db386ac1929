//! Layer outputs against naive loop implementations, and gradient checks.

mod common;

use common::oracle::*;
use proptest::prelude::*;
use rand::Rng as _;
use ueeg::harness::gradcheck::{layer_checks, LAYER_TOL};
use ueeg::nn::{
    conv2d, depthwise_conv2d, dropout, gru_forward, maxpool2d, GruVars, Mode, Padding2d,
};
use ueeg::rng::stream;
use ueeg::tensor::{Tape, Tensor};

#[test]
fn conv2d_matches_naive_loops_on_random_shapes() {
    assert!(conv2d_sweep(11) < 1e-6);
}

#[test]
fn conv1d_matches_naive_loops_on_random_shapes() {
    assert!(conv1d_sweep(12) < 1e-6);
}

#[test]
fn depthwise_matches_naive_loops_on_random_shapes() {
    assert!(depthwise_sweep(13) < 1e-6);
}

#[test]
fn depthwise_equals_per_channel_conv2d_loop() {
    let mut rng = stream(13, "depthwise-shapes");
    for _ in 0..20 {
        let (bn, c, m) = (
            rng.random_range(1..3),
            rng.random_range(1..5),
            rng.random_range(1..4),
        );
        let (h, w) = (rng.random_range(1..7), rng.random_range(1..9));
        let (kh, kw) = (rng.random_range(1..=h), rng.random_range(1..=w));
        let x = random(&[bn, c, h, w], &mut rng);
        let k = random(&[c * m, 1, kh, kw], &mut rng);
        let b = random(&[c * m], &mut rng);

        let mut tape = Tape::new();
        let (xv, kv, bv) = (
            tape.constant(x.clone()),
            tape.constant(k.clone()),
            tape.constant(b.clone()),
        );
        let y = depthwise_conv2d(&mut tape, xv, kv, bv, Padding2d::VALID).unwrap();

        let mut parts = Vec::new();
        for ch in 0..c {
            let xc = tape.slice(xv, 1, ch, ch + 1).unwrap();
            let kc = tape.slice(kv, 0, ch * m, (ch + 1) * m).unwrap();
            let bc = tape.slice(bv, 0, ch * m, (ch + 1) * m).unwrap();
            parts.push(conv2d(&mut tape, xc, kc, bc, Padding2d::VALID).unwrap());
        }
        let oracle = tape.concat(&parts, 1).unwrap();
        assert!(tape.value(y).bit_eq(tape.value(oracle)));
    }
}

#[test]
fn depthwise_with_one_channel_is_conv2d() {
    let mut rng = stream(14, "depthwise-collapse");
    let x = random(&[2, 1, 5, 6], &mut rng);
    let k = random(&[3, 1, 2, 3], &mut rng);
    let b = random(&[3], &mut rng);
    let mut tape = Tape::new();
    let (xv, kv, bv) = (tape.constant(x), tape.constant(k), tape.constant(b));
    let d = depthwise_conv2d(&mut tape, xv, kv, bv, Padding2d::VALID).unwrap();
    let c = conv2d(&mut tape, xv, kv, bv, Padding2d::VALID).unwrap();
    assert!(tape.value(d).bit_eq(tape.value(c)));
}

fn check_gru_against_cell(batch: usize, steps: usize, seed: u64) {
    let (params, x) = gru_case(batch, steps, 4, 5, seed);
    let mut tape = Tape::new();
    let vars: Vec<_> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let xv = tape.constant(x.clone());
    let out = gru_forward(&mut tape, xv, &GruVars::from_slice(&vars)).unwrap();
    let (all, last) = gru_reference(&params, &x);
    assert!(max_diff(tape.value(out.outputs).data(), &all) < 1e-6);
    assert!(max_diff(tape.value(out.last).data(), &last) < 1e-6);
}

#[test]
fn gru_single_step_matches_cell() {
    check_gru_against_cell(2, 1, 1);
}

#[test]
fn gru_three_steps_match_cell_recurrence() {
    check_gru_against_cell(3, 3, 3);
}

#[test]
fn gru_matches_cell_recurrence_on_random_shapes() {
    assert!(gru_sweep(4) < 1e-6);
}

#[test]
fn every_layer_passes_gradient_check() {
    for seed in 0..3 {
        for (name, r) in layer_checks(seed).unwrap() {
            assert!(r.passes(LAYER_TOL), "{name} seed {seed}: {r:?}");
        }
    }
}

proptest! {
    #[test]
    fn maxpool_outputs_are_window_maxima(
        vals in prop::collection::vec(-100i32..100, 2 * 3 * 5 * 7),
        ph in 1usize..=3, pw in 1usize..=4, sh in 1usize..=2, sw in 1usize..=3,
    ) {
        let x = Tensor::new(&[2, 3, 5, 7], vals.iter().map(|&v| v as f64).collect()).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = maxpool2d(&mut tape, xv, (ph, pw), (sh, sw)).unwrap();
        let (oh, ow) = (tape.shape(y)[2], tape.shape(y)[3]);
        let out = tape.value(y).data();
        for p in 0..6 {
            for i in 0..oh {
                for j in 0..ow {
                    let window: Vec<f64> = (0..ph)
                        .flat_map(|u| (0..pw).map(move |v| (u, v)))
                        .map(|(u, v)| x.data()[p * 35 + (i * sh + u) * 7 + j * sw + v])
                        .collect();
                    let o = out[(p * oh + i) * ow + j];
                    prop_assert!(window.iter().all(|&w| o >= w));
                    prop_assert!(window.contains(&o));
                }
            }
        }
    }

    #[test]
    fn dropout_eval_is_identity(vals in prop::collection::vec(-1e6f64..1e6, 1..50), p in 0.0f64..0.99) {
        let mut rng = stream(1, "prop-dropout");
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vals));
        let y = dropout(&mut tape, x, p, Mode::Eval, &mut rng).unwrap();
        prop_assert!(tape.value(y).bit_eq(tape.value(x)));
    }
}
