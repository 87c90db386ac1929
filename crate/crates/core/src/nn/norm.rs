//! Batch normalization over axis 1 (features / channels).
//!
//! Train mode normalizes with the biased batch variance over every axis but
//! axis 1. Eval mode uses the running statistics. Running statistics are not
//! updated here: the caller receives the batch statistics and folds them in
//! with [`RunningStats::update`].

use crate::tensor::{Backward, Result, Scalar, Tape, Tensor, TensorError, Var};

use super::Mode;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-feature mean and biased variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

pub struct RunningStats<'a, F: Scalar> {
    pub mean: &'a Tensor<F>,
    pub var: &'a Tensor<F>,
}

impl<F: Scalar> RunningStats<'_, F> {
    /// `running ← momentum·running + (1 − momentum)·batch`.
    pub fn update(mean: &mut Tensor<F>, var: &mut Tensor<F>, batch: &BatchStats<F>, momentum: F) {
        let keep = momentum;
        let take = F::one() - momentum;
        for (r, &b) in mean.make_mut().iter_mut().zip(&batch.mean) {
            *r = keep * *r + take * b;
        }
        for (r, &b) in var.make_mut().iter_mut().zip(&batch.var) {
            *r = keep * *r + take * b;
        }
    }
}

fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(TensorError::ShapeMismatch {
            op: "batchnorm",
            lhs: shape.to_vec(),
            rhs: vec![],
        });
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

struct TrainRule<F> {
    xhat: Vec<F>,
    inv_std: Vec<F>,
    gamma: Vec<F>,
}

impl<F: Scalar> Backward<F> for TrainRule<F> {
    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        _out: &Tensor<F>,
        grad: &Tensor<F>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<F>>> {
        let (b, c, s) = layout(inputs[0].shape()).expect("validated in forward");
        let g = grad.data();
        let m = F::lit((b * s) as f64);
        let mut sum_g = vec![F::zero(); c];
        let mut sum_gx = vec![F::zero(); c];
        for n in 0..b {
            for ch in 0..c {
                let at = (n * c + ch) * s;
                for i in at..at + s {
                    sum_g[ch] += g[i];
                    sum_gx[ch] += g[i] * self.xhat[i];
                }
            }
        }
        let dx = needs[0].then(|| {
            let mut dx = vec![F::zero(); g.len()];
            for n in 0..b {
                for ch in 0..c {
                    let k = self.gamma[ch] * self.inv_std[ch] / m;
                    let at = (n * c + ch) * s;
                    for i in at..at + s {
                        dx[i] = k * (m * g[i] - sum_g[ch] - self.xhat[i] * sum_gx[ch]);
                    }
                }
            }
            Tensor::from_parts(inputs[0].shape().to_vec(), dx)
        });
        vec![
            dx,
            needs[1].then(|| Tensor::from_parts(vec![c], sum_gx)),
            needs[2].then(|| Tensor::from_parts(vec![c], sum_g)),
        ]
    }
}

struct EvalRule<F> {
    xhat: Vec<F>,
    inv_std: Vec<F>,
    gamma: Vec<F>,
}

impl<F: Scalar> Backward<F> for EvalRule<F> {
    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        _out: &Tensor<F>,
        grad: &Tensor<F>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<F>>> {
        let (b, c, s) = layout(inputs[0].shape()).expect("validated in forward");
        let g = grad.data();
        let mut dx = needs[0].then(|| vec![F::zero(); g.len()]);
        let mut dgamma = vec![F::zero(); c];
        let mut dbeta = vec![F::zero(); c];
        for n in 0..b {
            for ch in 0..c {
                let at = (n * c + ch) * s;
                for i in at..at + s {
                    dgamma[ch] += g[i] * self.xhat[i];
                    dbeta[ch] += g[i];
                    if let Some(dx) = dx.as_mut() {
                        dx[i] = g[i] * self.gamma[ch] * self.inv_std[ch];
                    }
                }
            }
        }
        vec![
            dx.map(|d| Tensor::from_parts(inputs[0].shape().to_vec(), d)),
            needs[1].then(|| Tensor::from_parts(vec![c], dgamma)),
            needs[2].then(|| Tensor::from_parts(vec![c], dbeta)),
        ]
    }
}

/// Normalizes `x` per feature of axis 1, then applies `gamma`/`beta`.
/// Returns the batch statistics in train mode.
pub fn batchnorm<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    gamma: Var,
    beta: Var,
    mode: Mode,
    running: RunningStats<'_, F>,
    eps: F,
) -> Result<(Var, Option<BatchStats<F>>)> {
    let xs = tape.shape(x).to_vec();
    let (b, c, s) = layout(&xs)?;
    for p in [gamma, beta] {
        if tape.shape(p) != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "batchnorm",
                lhs: xs.clone(),
                rhs: tape.shape(p).to_vec(),
            });
        }
    }
    let xd = tape.value(x).data();
    let gd = tape.value(gamma).data().to_vec();
    let bd = tape.value(beta).data();

    let (mean, var) = match mode {
        Mode::Train => {
            if b < 2 {
                return Err(TensorError::BatchTooSmall { batch: b });
            }
            let m = F::lit((b * s) as f64);
            let mut mean = vec![F::zero(); c];
            let mut var = vec![F::zero(); c];
            for n in 0..b {
                for ch in 0..c {
                    mean[ch] += xd[(n * c + ch) * s..][..s].iter().copied().sum::<F>();
                }
            }
            mean.iter_mut().for_each(|v| *v /= m);
            for n in 0..b {
                for ch in 0..c {
                    for &v in &xd[(n * c + ch) * s..][..s] {
                        let d = v - mean[ch];
                        var[ch] += d * d;
                    }
                }
            }
            var.iter_mut().for_each(|v| *v /= m);
            (mean, var)
        }
        Mode::Eval => (running.mean.data().to_vec(), running.var.data().to_vec()),
    };
    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![F::zero(); xd.len()];
    let mut out = vec![F::zero(); xd.len()];
    for n in 0..b {
        for ch in 0..c {
            let at = (n * c + ch) * s;
            for i in at..at + s {
                xhat[i] = (xd[i] - mean[ch]) * inv_std[ch];
                out[i] = gd[ch] * xhat[i] + bd[ch];
            }
        }
    }
    let out = Tensor::new(&xs, out)?;
    match mode {
        Mode::Train => {
            let y = tape.record(
                out,
                &[x, gamma, beta],
                TrainRule {
                    xhat,
                    inv_std,
                    gamma: gd,
                },
            );
            Ok((y, Some(BatchStats { mean, var })))
        }
        Mode::Eval => {
            let y = tape.record(
                out,
                &[x, gamma, beta],
                EvalRule {
                    xhat,
                    inv_std,
                    gamma: gd,
                },
            );
            Ok((y, None))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(
        x: Tensor<f64>,
        mode: Mode,
        rm: &Tensor<f64>,
        rv: &Tensor<f64>,
    ) -> (Tensor<f64>, Option<BatchStats<f64>>) {
        let c = x.shape()[1];
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let g = tape.constant(Tensor::ones(&[c]));
        let b = tape.constant(Tensor::zeros(&[c]));
        let (y, stats) = batchnorm(
            &mut tape,
            xv,
            g,
            b,
            mode,
            RunningStats { mean: rm, var: rv },
            BN_EPSILON,
        )
        .unwrap();
        (tape.value(y).clone(), stats)
    }

    #[test]
    fn train_mode_standardizes_each_feature() {
        let x = Tensor::from_fn(&[6, 3], |i| {
            ((i * 7919) % 13) as f64 * (1.0 + (i % 3) as f64)
        });
        let zeros = Tensor::zeros(&[3]);
        let ones = Tensor::ones(&[3]);
        let (y, _) = run(x, Mode::Train, &zeros, &ones);
        for ch in 0..3 {
            let col: Vec<f64> = (0..6).map(|n| y.data()[n * 3 + ch]).collect();
            let mean = col.iter().sum::<f64>() / 6.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3, "{var}");
        }
    }

    #[test]
    fn constant_feature_maps_to_zero() {
        let x = Tensor::full(&[4, 2, 1, 3], 3.5);
        let (y, _) = run(x, Mode::Train, &Tensor::zeros(&[2]), &Tensor::ones(&[2]));
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_with_batch_stats_matches_train() {
        let x = Tensor::from_fn(&[3, 2, 2, 2], |i| (i as f64 * 0.37).sin());
        let (train, stats) = run(
            x.clone(),
            Mode::Train,
            &Tensor::zeros(&[2]),
            &Tensor::ones(&[2]),
        );
        let stats = stats.unwrap();
        let rm = Tensor::from_vec(stats.mean.clone());
        let rv = Tensor::from_vec(stats.var.clone());
        let (eval, none) = run(x, Mode::Eval, &rm, &rv);
        assert!(none.is_none());
        assert!(train.max_abs_diff(&eval) < 1e-12);
    }

    #[test]
    fn train_mode_rejects_single_sample() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros(&[1, 2]));
        let g = tape.constant(Tensor::ones(&[2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        let (rm, rv) = (Tensor::zeros(&[2]), Tensor::ones(&[2]));
        let err = batchnorm(
            &mut tape,
            x,
            g,
            b,
            Mode::Train,
            RunningStats {
                mean: &rm,
                var: &rv,
            },
            1e-5,
        )
        .unwrap_err();
        assert_eq!(err, TensorError::BatchTooSmall { batch: 1 });
        assert!(batchnorm(
            &mut tape,
            x,
            g,
            b,
            Mode::Eval,
            RunningStats {
                mean: &rm,
                var: &rv
            },
            1e-5
        )
        .is_ok());
    }

    #[test]
    fn running_stats_use_momentum() {
        let mut m = Tensor::from_vec(vec![1.0f64]);
        let mut v = Tensor::from_vec(vec![1.0f64]);
        let stats = BatchStats {
            mean: vec![3.0],
            var: vec![5.0],
        };
        RunningStats::update(&mut m, &mut v, &stats, 0.9);
        assert!((m.item() - 1.2).abs() < 1e-12);
        assert!((v.item() - 1.4).abs() < 1e-12);
    }
}
