//! Parameterized layers: convolutions (1-D, 2-D, depthwise), GRU, dense,
//! batch normalization, max pooling and dropout.

mod conv;
mod gru;
mod norm;
mod pool;

pub use conv::{conv1d, conv2d, depthwise_conv2d, Padding2d};
pub use gru::{gru_forward, gru_last, GruOutput, GruVars};
pub use norm::{batchnorm, BatchStats, RunningStats, BN_EPSILON, BN_MOMENTUM};
pub use pool::maxpool2d;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::tensor::{Result, Scalar, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// `x·W + b` for `x: (B,D)`, `W: (D,U)`, `b: (U)`.
pub fn dense<F: Scalar>(tape: &mut Tape<F>, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add(xw, b)
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `p` and survivors are scaled by `1/(1−p)`. Eval mode returns `x` itself.
pub fn dropout<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    p: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(TensorError::InvalidProbability { p });
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x);
    }
    let scale = F::lit(1.0 / (1.0 - p));
    let shape = tape.shape(x).to_vec();
    let mask = Tensor::from_fn(&shape, |_| {
        if rng.random::<f64>() < p {
            F::zero()
        } else {
            scale
        }
    });
    let m = tape.constant(mask);
    tape.mul(x, m)
}

/// Layer discriminator with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv2d {
        filters: usize,
        in_channels: usize,
        kernel: (usize, usize),
        padding: Padding2d,
    },
    DepthwiseConv2d {
        in_channels: usize,
        multiplier: usize,
        kernel: (usize, usize),
        padding: Padding2d,
    },
    Dense {
        inputs: usize,
        units: usize,
    },
    BatchNorm {
        features: usize,
        momentum: f64,
        eps: f64,
    },
    MaxPool2d {
        window: (usize, usize),
        stride: (usize, usize),
    },
    Dropout {
        p: f64,
    },
    Gru {
        input_size: usize,
        hidden: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weight<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub trainable: bool,
}

/// A named layer with its weights.
///
/// Conv kernels are `(filters, in_channels_per_group, kh, kw)`; dense
/// weights `(inputs, units)`; GRU weights are stored in the order
/// `W_z, U_z, b_z, W_r, U_r, b_r, W_h, U_h, b_h`; batch norm keeps
/// `gamma, beta` (trainable) and `running_mean, running_var` (not trainable).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub name: String,
    pub kind: LayerKind,
    pub weights: Vec<Weight<F>>,
}

/// Glorot-uniform sample with limit `√(6/(fan_in+fan_out))`.
pub fn glorot_uniform<F: Scalar>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut Rng,
) -> Tensor<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| F::lit(rng.random_range(-limit..limit)))
}

fn trainable<F>(name: &str, value: Tensor<F>) -> Weight<F> {
    Weight {
        name: name.to_string(),
        value,
        trainable: true,
    }
}

impl<F: Scalar> LayerParams<F> {
    /// Builds a layer and initializes its weights from `rng`: Glorot-uniform
    /// kernels (fans include the receptive field), zero biases, unit gamma.
    pub fn new(name: &str, kind: LayerKind, rng: &mut Rng) -> Self {
        let weights = match &kind {
            LayerKind::Conv2d {
                filters,
                in_channels,
                kernel,
                ..
            } => {
                let rf = kernel.0 * kernel.1;
                vec![
                    trainable(
                        "kernel",
                        glorot_uniform(
                            &[*filters, *in_channels, kernel.0, kernel.1],
                            in_channels * rf,
                            filters * rf,
                            rng,
                        ),
                    ),
                    trainable("bias", Tensor::zeros(&[*filters])),
                ]
            }
            LayerKind::DepthwiseConv2d {
                in_channels,
                multiplier,
                kernel,
                ..
            } => {
                let rf = kernel.0 * kernel.1;
                let out = in_channels * multiplier;
                vec![
                    trainable(
                        "kernel",
                        glorot_uniform(
                            &[out, 1, kernel.0, kernel.1],
                            in_channels * rf,
                            multiplier * rf,
                            rng,
                        ),
                    ),
                    trainable("bias", Tensor::zeros(&[out])),
                ]
            }
            LayerKind::Dense { inputs, units } => vec![
                trainable(
                    "kernel",
                    glorot_uniform(&[*inputs, *units], *inputs, *units, rng),
                ),
                trainable("bias", Tensor::zeros(&[*units])),
            ],
            LayerKind::BatchNorm { features, .. } => vec![
                trainable("gamma", Tensor::ones(&[*features])),
                trainable("beta", Tensor::zeros(&[*features])),
                Weight {
                    name: "running_mean".into(),
                    value: Tensor::zeros(&[*features]),
                    trainable: false,
                },
                Weight {
                    name: "running_var".into(),
                    value: Tensor::ones(&[*features]),
                    trainable: false,
                },
            ],
            LayerKind::Gru { input_size, hidden } => {
                let mut w = Vec::with_capacity(9);
                for gate in ["z", "r", "h"] {
                    w.push(trainable(
                        &format!("W_{gate}"),
                        glorot_uniform(&[*input_size, *hidden], *input_size, *hidden, rng),
                    ));
                    w.push(trainable(
                        &format!("U_{gate}"),
                        glorot_uniform(&[*hidden, *hidden], *hidden, *hidden, rng),
                    ));
                    w.push(trainable(&format!("b_{gate}"), Tensor::zeros(&[*hidden])));
                }
                w
            }
            LayerKind::MaxPool2d { .. } | LayerKind::Dropout { .. } => Vec::new(),
        };
        Self {
            name: name.to_string(),
            kind,
            weights,
        }
    }

    pub fn weight(&self, name: &str) -> Option<&Tensor<F>> {
        self.weights
            .iter()
            .find(|w| w.name == name)
            .map(|w| &w.value)
    }

    pub fn weight_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.weights
            .iter_mut()
            .find(|w| w.name == name)
            .map(|w| &mut w.value)
    }

    pub fn trainable_count(&self) -> usize {
        self.weights
            .iter()
            .filter(|w| w.trainable)
            .map(|w| w.value.len())
            .sum()
    }

    /// Records trainable weights as gradient leaves (constants when
    /// `frozen`); returns one handle per weight in storage order.
    pub fn bind(&self, tape: &mut Tape<F>, frozen: bool) -> Vec<Var> {
        self.weights
            .iter()
            .map(|w| {
                if w.trainable && !frozen {
                    tape.param(w.value.clone())
                } else {
                    tape.constant(w.value.clone())
                }
            })
            .collect()
    }

    /// Applies the layer to `x` using handles from [`LayerParams::bind`].
    /// Batch-norm statistics of a train-mode pass are returned for the
    /// caller to fold into the running averages.
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        x: Var,
        vars: &[Var],
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Var, Option<BatchStats<F>>)> {
        let y = match &self.kind {
            LayerKind::Conv2d { padding, .. } => conv2d(tape, x, vars[0], vars[1], *padding)?,
            LayerKind::DepthwiseConv2d { padding, .. } => {
                depthwise_conv2d(tape, x, vars[0], vars[1], *padding)?
            }
            LayerKind::Dense { .. } => dense(tape, x, vars[0], vars[1])?,
            LayerKind::BatchNorm { eps, .. } => {
                let running = RunningStats {
                    mean: &self.weights[2].value,
                    var: &self.weights[3].value,
                };
                return batchnorm(tape, x, vars[0], vars[1], mode, running, F::lit(*eps));
            }
            LayerKind::MaxPool2d { window, stride } => maxpool2d(tape, x, *window, *stride)?,
            LayerKind::Dropout { p } => dropout(tape, x, *p, mode, rng)?,
            LayerKind::Gru { .. } => gru_last(tape, x, &GruVars::from_slice(vars))?,
        };
        Ok((y, None))
    }
}
