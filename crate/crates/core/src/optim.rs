//! Optimizers (Adam, AdaDelta) and the two training losses.

use serde::{Deserialize, Serialize};

use crate::tensor::{Backward, Result, Scalar, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaDeltaConfig {
    /// Multiplier applied to the native AdaDelta update.
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for AdaDeltaConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            rho: 0.95,
            eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimizerConfig {
    Adam(AdamConfig),
    AdaDelta(AdaDeltaConfig),
}

/// Per-parameter accumulators, kept at parameter precision. For Adam
/// `first`/`second` hold `m`/`v`; for AdaDelta they hold `E[g²]`/`E[Δx²]`.
#[derive(Debug, Clone)]
pub struct Optimizer<F> {
    config: OptimizerConfig,
    step: u64,
    first: Vec<Vec<F>>,
    second: Vec<Vec<F>>,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter. `grads[i]` of `None` counts as
    /// a zero gradient. Accumulators are created on the first call and fixed
    /// to those shapes afterwards.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<F>],
        grads: &[Option<&Tensor<F>>],
    ) -> Result<()> {
        if params.len() != grads.len()
            || (!self.first.is_empty() && self.first.len() != params.len())
        {
            return Err(TensorError::ShapeMismatch {
                op: "optimizer",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let expected = self.first.get(i).map_or(p.len(), Vec::len);
            let grad_ok = g.is_none_or(|g| g.shape() == p.shape());
            if !grad_ok || p.len() != expected {
                return Err(TensorError::ShapeMismatch {
                    op: "optimizer",
                    lhs: p.shape().to_vec(),
                    rhs: g.map_or(vec![expected], |g| g.shape().to_vec()),
                });
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![F::zero(); p.len()]).collect();
            self.second = params.iter().map(|p| vec![F::zero(); p.len()]).collect();
        }
        self.step += 1;
        let one = F::one();
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else {
                // zero gradient: moments still decay
                self.decay(i);
                continue;
            };
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let data = p.make_mut();
            match self.config {
                OptimizerConfig::Adam(c) => {
                    let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
                    let bc1 = F::lit(1.0 - c.beta1.powi(self.step as i32));
                    let bc2 = F::lit(1.0 - c.beta2.powi(self.step as i32));
                    let (lr, eps) = (F::lit(c.lr), F::lit(c.eps));
                    for (((theta, &gi), mi), vi) in data
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mi = b1 * *mi + (one - b1) * gi;
                        *vi = b2 * *vi + (one - b2) * gi * gi;
                        *theta -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
                    }
                }
                OptimizerConfig::AdaDelta(c) => {
                    let (rho, eps, lr) = (F::lit(c.rho), F::lit(c.eps), F::lit(c.lr));
                    for (((theta, &gi), eg), ex) in data
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *eg = rho * *eg + (one - rho) * gi * gi;
                        let dx = -((*ex + eps).sqrt() / (*eg + eps).sqrt()) * gi;
                        *ex = rho * *ex + (one - rho) * dx * dx;
                        *theta += lr * dx;
                    }
                }
            }
        }
        Ok(())
    }

    fn decay(&mut self, i: usize) {
        let (a, b) = match self.config {
            OptimizerConfig::Adam(c) => (c.beta1, c.beta2),
            OptimizerConfig::AdaDelta(c) => (c.rho, c.rho),
        };
        self.first[i].iter_mut().for_each(|m| *m *= F::lit(a));
        self.second[i].iter_mut().for_each(|v| *v *= F::lit(b));
    }
}

struct CrossEntropyRule {
    labels: Vec<usize>,
}

impl<F: Scalar> Backward<F> for CrossEntropyRule {
    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        _out: &Tensor<F>,
        grad: &Tensor<F>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<F>>> {
        let logits = inputs[0];
        let (b, k) = (logits.shape()[0], logits.shape()[1]);
        let scale = grad.item() / F::lit(b as f64);
        let mut probs = logits.data().to_vec();
        for (row, &label) in probs.chunks_mut(k).zip(&self.labels) {
            softmax_row(row);
            row[label] -= F::one();
            row.iter_mut().for_each(|v| *v *= scale);
        }
        vec![Some(Tensor::from_parts(vec![b, k], probs))]
    }
}

fn softmax_row<F: Scalar>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// Mean over the batch of `−log softmax(logits)[label]`, computed with
/// log-sum-exp. `logits: (B,K)`, one class index per row.
pub fn categorical_cross_entropy<F: Scalar>(
    tape: &mut Tape<F>,
    logits: Var,
    labels: &[usize],
) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(TensorError::ShapeMismatch {
            op: "categorical_cross_entropy",
            lhs: shape,
            rhs: vec![labels.len()],
        });
    }
    let k = shape[1];
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(TensorError::LabelOutOfRange { label, classes: k });
    }
    let data = tape.value(logits).data();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFiniteInput {
            op: "categorical_cross_entropy",
        });
    }
    let mut total = F::zero();
    for (row, &label) in data.chunks(k).zip(labels) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
        total += lse - row[label];
    }
    let loss = Tensor::scalar(total / F::lit(labels.len() as f64));
    Ok(tape.record(
        loss,
        &[logits],
        CrossEntropyRule {
            labels: labels.to_vec(),
        },
    ))
}

pub const BCE_CLAMP: f64 = 1e-7;

struct BinaryCrossEntropyRule {
    target: Vec<f64>,
}

impl<F: Scalar> Backward<F> for BinaryCrossEntropyRule {
    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        _out: &Tensor<F>,
        grad: &Tensor<F>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<F>>> {
        let pred = inputs[0];
        let scale = grad.item().as_f64() / pred.len() as f64;
        let dx = pred
            .data()
            .iter()
            .zip(&self.target)
            .map(|(&p, &t)| {
                let p = p.as_f64();
                if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                    // the clamp is flat outside its range
                    return F::zero();
                }
                F::lit(scale * (p - t) / (p * (1.0 - p)))
            })
            .collect();
        vec![Some(Tensor::from_parts(pred.shape().to_vec(), dx))]
    }
}

/// Mean of `−[t·ln p + (1−t)·ln(1−p)]` with `p` clamped to
/// `[1e-7, 1−1e-7]`. `target` has the shape of `pred`.
pub fn binary_cross_entropy<F: Scalar>(
    tape: &mut Tape<F>,
    pred: Var,
    target: &Tensor<F>,
) -> Result<Var> {
    let p = tape.value(pred);
    if p.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "binary_cross_entropy",
            lhs: p.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let target: Vec<f64> = target.data().iter().map(|t| t.as_f64()).collect();
    let total: f64 = p
        .data()
        .iter()
        .zip(&target)
        .map(|(&p, &t)| {
            let p = p.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    let loss = Tensor::scalar(F::lit(total / p.len() as f64));
    Ok(tape.record(loss, &[pred], BinaryCrossEntropyRule { target }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adam() -> Optimizer<f64> {
        Optimizer::new(OptimizerConfig::Adam(AdamConfig::default()))
    }

    fn adadelta(lr: f64) -> Optimizer<f64> {
        Optimizer::new(OptimizerConfig::AdaDelta(AdaDeltaConfig {
            lr,
            ..AdaDeltaConfig::default()
        }))
    }

    fn one_step(opt: &mut Optimizer<f64>, theta: f64, g: f64) -> f64 {
        let mut p = Tensor::from_vec(vec![theta]);
        let g = Tensor::from_vec(vec![g]);
        opt.step(&mut [&mut p], &[Some(&g)]).unwrap();
        p.item()
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        assert_eq!(one_step(&mut adam(), 0.25, 0.0), 0.25);
    }

    #[test]
    fn adam_first_step() {
        let theta = one_step(&mut adam(), 0.0, 1.0);
        assert!((theta - (-0.001 / (1.0 + 1e-8))).abs() < 1e-15);
        // lr/(1+ε) = 0.00099999999; the ≈0.000999999995 shorthand differs by 5e-12
        assert!((theta + 0.000999999995).abs() < 1e-11);
    }

    #[test]
    fn adam_two_constant_steps() {
        let mut opt = adam();
        let mut p = Tensor::from_vec(vec![0.0f64]);
        let g = Tensor::from_vec(vec![1.0]);
        let mut prev = 0.0;
        for _ in 0..2 {
            opt.step(&mut [&mut p], &[Some(&g)]).unwrap();
            let delta = (p.item() - prev).abs();
            assert!((0.0009..=0.001).contains(&delta), "{delta}");
            prev = p.item();
        }
        assert_eq!(opt.steps(), 2);
    }

    #[test]
    fn adadelta_first_step() {
        let eps: f64 = 1e-6;
        let dx = -(eps.sqrt() / (0.05 + eps).sqrt());
        assert!((dx + 0.0044721).abs() < 1e-6);
        let theta = one_step(&mut adadelta(0.001), 0.0, 1.0);
        assert!((theta - 0.001 * dx).abs() < 1e-15);
        assert_eq!(one_step(&mut adadelta(0.001), 3.0, 0.0), 3.0);
    }

    #[test]
    fn adadelta_update_is_linear_in_lr() {
        let a = one_step(&mut adadelta(0.001), 0.0, 0.7);
        let b = one_step(&mut adadelta(0.002), 0.0, 0.7);
        assert_eq!(2.0 * a, b);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::<f64>::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        assert!(matches!(
            adam().step(&mut [&mut p], &[Some(&g)]),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    fn ce(logits: Vec<f64>, k: usize, labels: &[usize]) -> f64 {
        let mut tape = Tape::new();
        let b = logits.len() / k;
        let l = tape.constant(Tensor::new(&[b, k], logits).unwrap());
        let loss = categorical_cross_entropy(&mut tape, l, labels).unwrap();
        tape.value(loss).item()
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((ce(vec![0.3; 4], 4, &[2]) - 4f64.ln()).abs() < 1e-12);
        assert!(ce(vec![20.0, -20.0], 2, &[0]) < 1e-8);
        assert!((ce(vec![0.0, 3f64.ln()], 2, &[0]) - 4f64.ln()).abs() < 1e-12);
        assert!((ce(vec![0.0; 8], 4, &[0, 3]) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let mut tape = Tape::<f64>::new();
        let l = tape.constant(Tensor::zeros(&[1, 3]));
        assert_eq!(
            categorical_cross_entropy(&mut tape, l, &[3]).unwrap_err(),
            TensorError::LabelOutOfRange {
                label: 3,
                classes: 3
            }
        );
    }

    fn bce(p: Vec<f64>, t: Vec<f64>) -> f64 {
        let mut tape = Tape::new();
        let n = p.len();
        let pv = tape.constant(Tensor::new(&[n], p).unwrap());
        let loss = binary_cross_entropy(&mut tape, pv, &Tensor::new(&[n], t).unwrap()).unwrap();
        tape.value(loss).item()
    }

    #[test]
    fn binary_cross_entropy_examples() {
        assert!((bce(vec![0.5; 6], vec![0.5; 6]) - 2f64.ln()).abs() < 1e-12);
        assert!(bce(vec![0.0, 1.0, 1.0], vec![0.0, 1.0, 1.0]) <= -(1.0 - 1e-7f64).ln() + 1e-15);
        assert!((bce(vec![0.75], vec![1.0]) - 0.2877).abs() < 1e-4);
        assert!((bce(vec![0.75], vec![1.0]) + 0.75f64.ln()).abs() < 1e-12);
    }
}
