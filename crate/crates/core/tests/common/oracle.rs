//! Independent reference implementations used as test oracles.

use rand::Rng as _;
use ueeg::classical::{Features, Knn};
use ueeg::metrics::{auc_mann_whitney, auc_trapezoid};
use ueeg::nn::{conv1d, conv2d, depthwise_conv2d, gru_forward, GruVars, Padding2d};
use ueeg::rng::{stream, Rng};
use ueeg::tensor::{Tape, Tensor};

/// Random shapes per convolution sweep.
pub const SHAPES: usize = 20;

pub fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Direct four-deep loop over output positions with explicit zero padding.
pub fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], pad: Padding2d) -> Vec<f64> {
    let (bn, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = h + pad.top + pad.bottom - kh + 1;
    let ow = wd + pad.left + pad.right - kw + 1;
    let at = |n: usize, ci: usize, i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= h as isize || j >= wd as isize {
            0.0
        } else {
            x.data()[((n * c + ci) * h + i as usize) * wd + j as usize]
        }
    };
    let mut out = Vec::new();
    for n in 0..bn {
        for fi in 0..f {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b[fi];
                    for ci in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let xi = (i + u) as isize - pad.top as isize;
                                let xj = (j + v) as isize - pad.left as isize;
                                acc +=
                                    w.data()[((fi * c + ci) * kh + u) * kw + v] * at(n, ci, xi, xj);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// Valid 1-D convolution as a triple loop over batch, filter and position.
pub fn naive_conv1d(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]) -> Vec<f64> {
    let (bn, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (f, k) = (w.shape()[0], w.shape()[2]);
    let mut out = Vec::new();
    for n in 0..bn {
        for fi in 0..f {
            for t in 0..=l - k {
                let mut acc = b[fi];
                for ci in 0..c {
                    for u in 0..k {
                        acc += w.data()[(fi * c + ci) * k + u] * x.data()[(n * c + ci) * l + t + u];
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

/// Valid depthwise convolution: output map `ch * m + j` convolves input
/// channel `ch` with kernel `ch * m + j`.
pub fn naive_depthwise(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]) -> Vec<f64> {
    let (bn, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (maps, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let m = maps / c;
    let (oh, ow) = (h - kh + 1, wd - kw + 1);
    let mut out = Vec::new();
    for n in 0..bn {
        for o in 0..maps {
            let ch = o / m;
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b[o];
                    for u in 0..kh {
                        for v in 0..kw {
                            acc += w.data()[(o * kh + u) * kw + v]
                                * x.data()[((n * c + ch) * h + i + u) * wd + j + v];
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

struct CellWeights {
    w: [Vec<Vec<f64>>; 3],
    u: [Vec<Vec<f64>>; 3],
    b: [Vec<f64>; 3],
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One GRU step for a single sample, written out with plain vectors.
fn cell(p: &CellWeights, x: &[f64], h: &[f64]) -> Vec<f64> {
    let hidden = h.len();
    let affine = |g: usize, rec: &[f64]| -> Vec<f64> {
        (0..hidden)
            .map(|j| {
                let xw: f64 = x.iter().enumerate().map(|(i, xi)| xi * p.w[g][i][j]).sum();
                let hu: f64 = rec
                    .iter()
                    .enumerate()
                    .map(|(i, hi)| hi * p.u[g][i][j])
                    .sum();
                xw + hu + p.b[g][j]
            })
            .collect()
    };
    let z: Vec<f64> = affine(0, h).into_iter().map(sig).collect();
    let r: Vec<f64> = affine(1, h).into_iter().map(sig).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = affine(2, &rh).into_iter().map(f64::tanh).collect();
    (0..hidden)
        .map(|j| (1.0 - z[j]) * h[j] + z[j] * cand[j])
        .collect()
}

pub fn gru_case(
    batch: usize,
    steps: usize,
    dim: usize,
    hidden: usize,
    seed: u64,
) -> (Vec<Tensor<f64>>, Tensor<f64>) {
    let mut rng = stream(seed, "gru-oracle");
    let mut params = Vec::new();
    for _ in 0..3 {
        params.push(random(&[dim, hidden], &mut rng));
        params.push(random(&[hidden, hidden], &mut rng));
        params.push(random(&[hidden], &mut rng));
    }
    let x = random(&[batch, steps, dim], &mut rng);
    (params, x)
}

fn to_cell(params: &[Tensor<f64>]) -> CellWeights {
    let mat = |t: &Tensor<f64>| -> Vec<Vec<f64>> {
        t.data().chunks(t.shape()[1]).map(<[f64]>::to_vec).collect()
    };
    CellWeights {
        w: [mat(&params[0]), mat(&params[3]), mat(&params[6])],
        u: [mat(&params[1]), mat(&params[4]), mat(&params[7])],
        b: [
            params[2].data().to_vec(),
            params[5].data().to_vec(),
            params[8].data().to_vec(),
        ],
    }
}

/// Per-step cell recurrence over `(B, S, D)`: every hidden state `(B, S, H)`
/// and the final one `(B, H)`.
pub fn gru_reference(params: &[Tensor<f64>], x: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let (batch, steps, dim) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let hidden = params[1].shape()[0];
    let cw = to_cell(params);
    let (mut all, mut last) = (Vec::new(), Vec::new());
    for n in 0..batch {
        let mut h = vec![0.0; hidden];
        for t in 0..steps {
            h = cell(&cw, &x.data()[(n * steps + t) * dim..][..dim], &h);
            all.extend(&h);
        }
        last.extend(h);
    }
    (all, last)
}

/// Majority label of the `k` nearest points by a full sort of
/// `(squared distance, index)` pairs.
pub fn brute_force_knn(x: &Features, y: &[usize], k: usize, q: &[f64]) -> usize {
    let mut d: Vec<(f64, usize)> = (0..x.rows())
        .map(|i| {
            (
                x.row(i).iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum(),
                i,
            )
        })
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let classes = y.iter().max().unwrap() + 1;
    let mut votes = vec![0; classes];
    for &(_, i) in &d[..k] {
        votes[y[i]] += 1;
    }
    let best = *votes.iter().max().unwrap();
    votes.iter().position(|&v| v == best).unwrap()
}

/// Random binary instance with both classes present; scores drawn from a
/// small grid half of the time so ties are common.
pub fn auc_instance(seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = stream(seed, "auc");
    let n = rng.random_range(2..200);
    let coarse = rng.random_bool(0.5);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = (0..n)
        .map(|_| {
            if coarse {
                f64::from(rng.random_range(0..5)) / 4.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    (scores, labels)
}

/// Worst absolute difference between `conv2d` and the loop oracle over
/// random shapes, valid and same padding.
pub fn conv2d_sweep(seed: u64) -> f64 {
    let mut rng = stream(seed, "conv2d-shapes");
    let mut worst: f64 = 0.0;
    for _ in 0..SHAPES {
        let (bn, c, f) = (
            rng.random_range(1..3),
            rng.random_range(1..4),
            rng.random_range(1..4),
        );
        let (h, w) = (rng.random_range(1..7), rng.random_range(1..9));
        let (kh, kw) = (rng.random_range(1..=h), rng.random_range(1..=w));
        let pad = if rng.random_bool(0.5) {
            Padding2d::VALID
        } else {
            Padding2d::same((kh, kw))
        };
        let x = random(&[bn, c, h, w], &mut rng);
        let k = random(&[f, c, kh, kw], &mut rng);
        let b = random(&[f], &mut rng);
        let expected = naive_conv2d(&x, &k, b.data(), pad);
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.constant(x), tape.constant(k), tape.constant(b));
        let y = conv2d(&mut tape, xv, kv, bv, pad).unwrap();
        worst = worst.max(max_diff(tape.value(y).data(), &expected));
    }
    worst
}

pub fn conv1d_sweep(seed: u64) -> f64 {
    let mut rng = stream(seed, "conv1d-shapes");
    let mut worst: f64 = 0.0;
    for _ in 0..SHAPES {
        let (bn, c, f) = (
            rng.random_range(1..3),
            rng.random_range(1..4),
            rng.random_range(1..4),
        );
        let l = rng.random_range(1..12);
        let k = rng.random_range(1..=l);
        let x = random(&[bn, c, l], &mut rng);
        let w = random(&[f, c, k], &mut rng);
        let b = random(&[f], &mut rng);
        let expected = naive_conv1d(&x, &w, b.data());
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x), tape.constant(w), tape.constant(b));
        let y = conv1d(&mut tape, xv, wv, bv, (0, 0)).unwrap();
        assert_eq!(tape.shape(y), &[bn, f, l - k + 1]);
        worst = worst.max(max_diff(tape.value(y).data(), &expected));
    }
    worst
}

pub fn depthwise_sweep(seed: u64) -> f64 {
    let mut rng = stream(seed, "depthwise-shapes");
    let mut worst: f64 = 0.0;
    for _ in 0..SHAPES {
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
        let expected = naive_depthwise(&x, &k, b.data());
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.constant(x), tape.constant(k), tape.constant(b));
        let y = depthwise_conv2d(&mut tape, xv, kv, bv, Padding2d::VALID).unwrap();
        worst = worst.max(max_diff(tape.value(y).data(), &expected));
    }
    worst
}

/// Worst difference between `gru_forward` (every step and the last state)
/// and the per-step cell recurrence.
pub fn gru_sweep(seed: u64) -> f64 {
    let mut rng = stream(seed, "gru-shapes");
    let mut worst: f64 = 0.0;
    for case in 0..SHAPES as u64 {
        let (batch, steps) = (rng.random_range(1..4), rng.random_range(1..8));
        let (dim, hidden) = (rng.random_range(1..6), rng.random_range(1..7));
        let (params, x) = gru_case(batch, steps, dim, hidden, seed * 1000 + case);
        let mut tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|p| tape.constant(p.clone())).collect();
        let xv = tape.constant(x.clone());
        let out = gru_forward(&mut tape, xv, &GruVars::from_slice(&vars)).unwrap();
        let (all, last) = gru_reference(&params, &x);
        worst = worst.max(max_diff(tape.value(out.outputs).data(), &all));
        worst = worst.max(max_diff(tape.value(out.last).data(), &last));
    }
    worst
}

/// Number of KNN predictions that differ from the brute-force sort, over
/// `trials` integer-grid problems (grids force distance ties).
pub fn knn_sweep(seed: u64, trials: usize) -> usize {
    let mut rng = stream(seed, "knn-oracle");
    let mut mismatches = 0;
    for _ in 0..trials {
        let dim = rng.random_range(1..6);
        let n = rng.random_range(5..60);
        let data: Vec<f64> = (0..n * dim)
            .map(|_| f64::from(rng.random_range(-3..4)))
            .collect();
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let x = Features::new(data, dim).unwrap();
        let k = rng.random_range(1..=n.min(7));
        let knn = Knn::fit(k, x.clone(), y.clone()).unwrap();
        for _ in 0..10 {
            let q: Vec<f64> = (0..dim)
                .map(|_| f64::from(rng.random_range(-4..5)))
                .collect();
            let got = knn
                .predict(&Features::new(q.clone(), dim).unwrap())
                .unwrap()[0];
            mismatches += usize::from(got != brute_force_knn(&x, &y, k, &q));
        }
    }
    mismatches
}

/// Worst disagreement between the Mann–Whitney and trapezoid AUC over
/// `instances` random problems.
pub fn auc_sweep(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let (s, l) = auc_instance(seed);
        let a = auc_mann_whitney(&s, &l).unwrap();
        let b = auc_trapezoid(&s, &l).unwrap();
        worst = worst.max((a - b).abs());
    }
    worst
}
