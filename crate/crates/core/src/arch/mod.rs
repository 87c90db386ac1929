//! The three encoder architectures assembled from [`crate::nn`] layers.
//!
//! Inputs are `(B, C, T)` batches. The conv front end views them as
//! `(B, 1, C, T)`: a `(1,4)` temporal kernel, then a `(C,1)` kernel that
//! collapses the electrodes. Wherever a kernel or pooling window would not
//! fit, the padding fallback of [`Padding2d::valid_or_same`] (or a clipped
//! window) is applied at build time and logged.

mod checkpoint;

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::fmt;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    BatchStats, LayerKind, LayerParams, Mode, Padding2d, RunningStats, BN_EPSILON, BN_MOMENTUM,
};
use crate::rng::{stream, Rng};
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    FourCnn,
    GruEncoder,
    Autoencoder,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::FourCnn, Arch::GruEncoder, Arch::Autoencoder];

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::FourCnn => "four_cnn",
            Arch::GruEncoder => "gru_encoder",
            Arch::Autoencoder => "autoencoder",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arch::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| ModelError::InvalidConfig(format!("unknown architecture {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: (usize, usize),
}

/// Declarative model description. Serialized as canonical JSON inside
/// checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub channels: usize,
    pub timesteps: usize,
    pub num_classes: usize,
    /// Four stages for the CNN and autoencoder; three for the GRU encoder,
    /// whose third stage is depthwise with `filters` as the depth multiplier.
    pub conv_spec: Vec<ConvSpec>,
    pub gru_hidden: usize,
    /// One GRU applied to every feature map (`true`) or one GRU per map.
    pub gru_shared: bool,
    pub embedding_dim: usize,
    pub dropout: f64,
    pub classifier_hidden: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(arch: Arch, channels: usize, timesteps: usize, num_classes: usize) -> Self {
        let mut conv_spec = default_conv_spec(channels);
        if arch == Arch::GruEncoder {
            conv_spec.truncate(3);
        }
        Self {
            arch,
            channels,
            timesteps,
            num_classes,
            conv_spec,
            gru_hidden: 30,
            gru_shared: true,
            embedding_dim: 128,
            dropout: 0.5,
            classifier_hidden: 256,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Canonical JSON: sorted keys, no whitespace.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config is always serializable");
        value.to_string()
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.channels < 1 || self.timesteps < 4 {
            return Err(ModelError::InputTooSmall {
                channels: self.channels,
                timesteps: self.timesteps,
            });
        }
        let stages = if self.arch == Arch::GruEncoder { 3 } else { 4 };
        if self.conv_spec.len() != stages {
            return Err(ModelError::InvalidConfig(format!(
                "{} needs {stages} conv stages, got {}",
                self.arch,
                self.conv_spec.len()
            )));
        }
        let any_zero = self
            .conv_spec
            .iter()
            .any(|c| c.filters == 0 || c.kernel.0 == 0 || c.kernel.1 == 0);
        if any_zero
            || self.num_classes < 2
            || self.gru_hidden == 0
            || self.embedding_dim == 0
            || self.classifier_hidden == 0
        {
            return Err(ModelError::InvalidConfig(
                "sizes must be positive and num_classes >= 2".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout {} outside [0,1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// `(32,(1,4)), (32,(C,1)), (50,(4,25)), (100,(50,2))`.
pub fn default_conv_spec(channels: usize) -> Vec<ConvSpec> {
    vec![
        ConvSpec {
            filters: 32,
            kernel: (1, 4),
        },
        ConvSpec {
            filters: 32,
            kernel: (channels, 1),
        },
        ConvSpec {
            filters: 50,
            kernel: (4, 25),
        },
        ConvSpec {
            filters: 100,
            kernel: (50, 2),
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("input too small: channels {channels}, timesteps {timesteps} (need C >= 1, T >= 4)")]
    InputTooSmall { channels: usize, timesteps: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("{arch} has no softmax classifier head")]
    NoClassifierHead { arch: Arch },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Tape handles produced by one forward pass.
pub struct ForwardPass<F> {
    /// Encoder output: the flattened conv features for the CNN, the dense
    /// embedding for the GRU encoder and the autoencoder.
    pub embedding: Var,
    pub logits: Option<Var>,
    /// Autoencoder output, `(B, C, T)`.
    pub reconstruction: Option<Var>,
    /// Batch statistics of each batch-norm layer (train mode), keyed by
    /// layer index.
    pub bn_stats: Vec<(usize, BatchStats<F>)>,
}

/// An instantiated architecture. Layers are stored in forward order.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    config: ModelConfig,
    layers: Vec<LayerParams<F>>,
}

struct Builder<'a, F> {
    layers: Vec<LayerParams<F>>,
    rng: &'a mut Rng,
}

impl<F: Scalar> Builder<'_, F> {
    fn push(&mut self, name: &str, kind: LayerKind) {
        self.layers.push(LayerParams::new(name, kind, self.rng));
    }

    /// Adds a conv layer for an `(in_channels, h, w)` input and returns the
    /// output geometry.
    fn conv(
        &mut self,
        name: &str,
        input: (usize, usize, usize),
        spec: ConvSpec,
        depthwise: bool,
    ) -> (usize, usize, usize) {
        let (c, h, w) = input;
        let (padding, fallback) = Padding2d::valid_or_same((h, w), spec.kernel);
        if fallback {
            info!(
                "{name}: kernel {:?} exceeds input {:?}, using same padding {:?}",
                spec.kernel,
                (h, w),
                padding
            );
        }
        let (oh, ow) = padding
            .output_size((h, w), spec.kernel)
            .expect("padding makes the kernel fit");
        let kind = if depthwise {
            LayerKind::DepthwiseConv2d {
                in_channels: c,
                multiplier: spec.filters,
                kernel: spec.kernel,
                padding,
            }
        } else {
            LayerKind::Conv2d {
                filters: spec.filters,
                in_channels: c,
                kernel: spec.kernel,
                padding,
            }
        };
        self.push(name, kind);
        let out_c = if depthwise {
            c * spec.filters
        } else {
            spec.filters
        };
        (out_c, oh, ow)
    }

    fn batchnorm(&mut self, name: &str, features: usize) {
        self.push(
            name,
            LayerKind::BatchNorm {
                features,
                momentum: BN_MOMENTUM,
                eps: BN_EPSILON,
            },
        );
    }

    /// `(1,2)` max pool over time, clipped to the input extent.
    fn pool(&mut self, name: &str, input: (usize, usize, usize)) -> (usize, usize, usize) {
        let (c, h, w) = input;
        let window = (1.min(h), 2.min(w));
        if window != (1, 2) {
            info!(
                "{name}: pool window (1, 2) clipped to {window:?} for input {:?}",
                (h, w)
            );
        }
        self.push(
            name,
            LayerKind::MaxPool2d {
                window,
                stride: window,
            },
        );
        (c, h / window.0, w / window.1)
    }

    fn dense(&mut self, name: &str, inputs: usize, units: usize) {
        self.push(name, LayerKind::Dense { inputs, units });
    }

    /// conv1..conv4 with batch norm, pooling after stages 3 and 4; returns
    /// the flattened feature size.
    fn cnn_stack(&mut self, cfg: &ModelConfig) -> usize {
        let s = &cfg.conv_spec;
        let g = self.conv("conv1", (1, cfg.channels, cfg.timesteps), s[0], false);
        self.batchnorm("bn1", g.0);
        let g = self.conv("conv2", g, s[1], false);
        self.batchnorm("bn2", g.0);
        let g = self.conv("conv3", g, s[2], false);
        self.batchnorm("bn3", g.0);
        let g = self.pool("pool3", g);
        // feature maps become the height axis
        let g = self.conv("conv4", (1, g.0 * g.1, g.2), s[3], false);
        self.batchnorm("bn4", g.0);
        let g = self.pool("pool4", g);
        g.0 * g.1 * g.2
    }

    fn head(&mut self, cfg: &ModelConfig, features: usize) {
        self.dense("fc1", features, cfg.classifier_hidden);
        self.push("dropout", LayerKind::Dropout { p: cfg.dropout });
        self.dense("fc2", cfg.classifier_hidden, cfg.num_classes);
    }
}

impl<F: Scalar> Model<F> {
    /// Builds and initializes the architecture named by `config.arch`.
    /// Initialization draws from the `"init"` sub-stream of `config.seed`,
    /// so the `f32` and `f64` builds hold the same values up to rounding.
    pub fn build(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = stream(config.seed, "init");
        let mut b = Builder {
            layers: Vec::new(),
            rng: &mut rng,
        };
        match config.arch {
            Arch::FourCnn => {
                let features = b.cnn_stack(config);
                b.head(config, features);
            }
            Arch::GruEncoder => {
                let s = &config.conv_spec;
                let g = b.conv("conv1", (1, config.channels, config.timesteps), s[0], false);
                let g = b.conv("conv2", g, s[1], false);
                let (maps, height, steps) = b.conv("depthwise", (1, g.0 * g.1, g.2), s[2], true);
                info!("gru: {maps} maps of {steps} steps x {height} features");
                let gru = LayerKind::Gru {
                    input_size: height,
                    hidden: config.gru_hidden,
                };
                if config.gru_shared {
                    b.push("gru", gru);
                } else {
                    for m in 0..maps {
                        b.push(&format!("gru_{m}"), gru.clone());
                    }
                }
                b.dense("embed", maps * config.gru_hidden, config.embedding_dim);
                b.head(config, config.embedding_dim);
            }
            Arch::Autoencoder => {
                let features = b.cnn_stack(config);
                b.dense("embed", features, config.embedding_dim);
                b.dense("dec1", config.embedding_dim, features);
                b.dense("dec2", features, config.channels * config.timesteps);
            }
        }
        Ok(Self {
            config: config.clone(),
            layers: b.layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerParams<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams<F>] {
        &mut self.layers
    }

    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    name: l.name.clone(),
                    kind: l.kind.clone(),
                    weights: l
                        .weights
                        .iter()
                        .map(|w| crate::nn::Weight {
                            name: w.name.clone(),
                            value: w.value.cast(),
                            trainable: w.trainable,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::trainable_count).sum()
    }

    /// Dimension of [`ForwardPass::embedding`].
    pub fn embedding_dim(&self) -> usize {
        match self.config.arch {
            Arch::FourCnn => match &self.layer("fc1").kind {
                LayerKind::Dense { inputs, .. } => *inputs,
                _ => unreachable!("fc1 is dense"),
            },
            _ => self.config.embedding_dim,
        }
    }

    /// `(filters, kernel)` of every convolution, in forward order.
    pub fn conv_kernels(&self) -> Vec<(usize, (usize, usize))> {
        self.layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::Conv2d {
                    filters, kernel, ..
                } => Some((filters, kernel)),
                LayerKind::DepthwiseConv2d {
                    in_channels,
                    multiplier,
                    kernel,
                    ..
                } => Some((in_channels * multiplier, kernel)),
                _ => None,
            })
            .collect()
    }

    fn position(&self, name: &str) -> usize {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .unwrap_or_else(|| panic!("layer {name} missing from {}", self.config.arch))
    }

    fn layer(&self, name: &str) -> &LayerParams<F> {
        &self.layers[self.position(name)]
    }

    /// Trainable tensors in a fixed order (layer order, then weight order).
    pub fn trainable(&self) -> Vec<&Tensor<F>> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().filter(|w| w.trainable).map(|w| &w.value))
            .collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<F>> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                l.weights
                    .iter_mut()
                    .filter(|w| w.trainable)
                    .map(|w| &mut w.value)
            })
            .collect()
    }

    /// Records every trainable tensor as a gradient leaf, in
    /// [`Model::trainable`] order.
    pub fn bind_params(&self, tape: &mut Tape<F>) -> Vec<Var> {
        self.trainable()
            .into_iter()
            .map(|t| tape.param(t.clone()))
            .collect()
    }

    /// Records every trainable tensor as a constant.
    pub fn bind_constants(&self, tape: &mut Tape<F>) -> Vec<Var> {
        self.trainable()
            .into_iter()
            .map(|t| tape.constant(t.clone()))
            .collect()
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[(usize, BatchStats<F>)]) {
        for (idx, batch) in stats {
            let layer = &mut self.layers[*idx];
            let LayerKind::BatchNorm { momentum, .. } = layer.kind else {
                continue;
            };
            let (head, tail) = layer.weights.split_at_mut(3);
            RunningStats::update(
                &mut head[2].value,
                &mut tail[0].value,
                batch,
                F::lit(momentum),
            );
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<(), ModelError> {
        let c = &self.config;
        if shape.len() != 3 || shape[1] != c.channels || shape[2] != c.timesteps {
            return Err(TensorError::ShapeMismatch {
                op: "model input",
                lhs: shape.to_vec(),
                rhs: vec![c.channels, c.timesteps],
            }
            .into());
        }
        Ok(())
    }

    /// Forward pass of `x: (B, C, T)` using `params` (one handle per
    /// trainable tensor, in [`Model::trainable`] order).
    pub fn forward_with(
        &self,
        tape: &mut Tape<F>,
        x: Var,
        params: &[Var],
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<ForwardPass<F>, ModelError> {
        self.check_input(tape.shape(x))?;
        let expected = self.trainable().len();
        if params.len() != expected {
            return Err(ModelError::InvalidConfig(format!(
                "expected {expected} parameter handles, got {}",
                params.len()
            )));
        }
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for l in &self.layers {
            offsets.push(at);
            at += l.weights.iter().filter(|w| w.trainable).count();
        }
        let mut run = Run {
            model: self,
            tape,
            params,
            offsets,
            mode,
            rng,
            bn_stats: Vec::new(),
        };
        let batch = run.tape.shape(x)[0];
        let (c, t) = (self.config.channels, self.config.timesteps);
        let x4 = run.tape.reshape(x, &[batch, 1, c, t])?;
        let mut pass = match self.config.arch {
            Arch::FourCnn => {
                let features = run.cnn_stack(x4)?;
                let logits = run.head(features)?;
                ForwardPass {
                    embedding: features,
                    logits: Some(logits),
                    reconstruction: None,
                    bn_stats: Vec::new(),
                }
            }
            Arch::GruEncoder => {
                let h = run.layer_relu("conv1", x4)?;
                let h = run.layer_relu("conv2", h)?;
                let s = run.tape.shape(h).to_vec();
                let h = run.tape.reshape(h, &[batch, 1, s[1] * s[2], s[3]])?;
                let maps = run.layer_relu("depthwise", h)?;
                let hidden = run.gru_over_maps(maps)?;
                let embedding = run.layer("embed", hidden)?;
                let logits = run.head(embedding)?;
                ForwardPass {
                    embedding,
                    logits: Some(logits),
                    reconstruction: None,
                    bn_stats: Vec::new(),
                }
            }
            Arch::Autoencoder => {
                let features = run.cnn_stack(x4)?;
                let embedding = run.layer("embed", features)?;
                let d = run.layer_relu("dec1", embedding)?;
                let d = run.layer_relu("dec2", d)?;
                let reconstruction = run.tape.reshape(d, &[batch, c, t])?;
                ForwardPass {
                    embedding,
                    logits: None,
                    reconstruction: Some(reconstruction),
                    bn_stats: Vec::new(),
                }
            }
        };
        pass.bn_stats = run.bn_stats;
        Ok(pass)
    }

    /// Forward pass with freshly bound parameters; gradients are tracked
    /// when `track_grads` is set.
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        x: Var,
        mode: Mode,
        rng: &mut Rng,
        track_grads: bool,
    ) -> Result<(ForwardPass<F>, Vec<Var>), ModelError> {
        let params = if track_grads {
            self.bind_params(tape)
        } else {
            self.bind_constants(tape)
        };
        let pass = self.forward_with(tape, x, &params, mode, rng)?;
        Ok((pass, params))
    }

    fn eval(&self, x: &Tensor<F>) -> Result<(Tape<F>, ForwardPass<F>), ModelError> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        // eval mode never draws from the stream
        let mut rng = stream(self.config.seed, "eval");
        let (pass, _) = self.forward(&mut tape, xv, Mode::Eval, &mut rng, false)?;
        Ok((tape, pass))
    }

    /// Eval-mode encoding of `x: (B, C, T)`.
    pub fn encode(&self, x: &Tensor<F>) -> Result<Tensor<F>, ModelError> {
        let (tape, pass) = self.eval(x)?;
        Ok(tape.value(pass.embedding).clone())
    }

    /// Eval-mode class probabilities `(B, K)`.
    pub fn classify(&self, x: &Tensor<F>) -> Result<Tensor<F>, ModelError> {
        let (mut tape, pass) = self.eval(x)?;
        let logits = pass.logits.ok_or(ModelError::NoClassifierHead {
            arch: self.config.arch,
        })?;
        let probs = tape.softmax(logits, 1)?;
        Ok(tape.value(probs).clone())
    }

    /// Eval-mode reconstruction `(B, C, T)` (autoencoder only).
    pub fn reconstruct(&self, x: &Tensor<F>) -> Result<Tensor<F>, ModelError> {
        let (tape, pass) = self.eval(x)?;
        let r = pass.reconstruction.ok_or_else(|| {
            ModelError::InvalidConfig(format!("{} has no decoder", self.config.arch))
        })?;
        Ok(tape.value(r).clone())
    }
}

struct Run<'a, F: Scalar> {
    model: &'a Model<F>,
    tape: &'a mut Tape<F>,
    params: &'a [Var],
    offsets: Vec<usize>,
    mode: Mode,
    rng: &'a mut Rng,
    bn_stats: Vec<(usize, BatchStats<F>)>,
}

impl<F: Scalar> Run<'_, F> {
    fn apply(&mut self, idx: usize, x: Var) -> Result<Var, ModelError> {
        let layer = &self.model.layers[idx];
        let n = layer.weights.iter().filter(|w| w.trainable).count();
        let vars = &self.params[self.offsets[idx]..self.offsets[idx] + n];
        let (y, stats) = layer.forward(self.tape, x, vars, self.mode, self.rng)?;
        if let Some(stats) = stats {
            self.bn_stats.push((idx, stats));
        }
        Ok(y)
    }

    fn layer(&mut self, name: &str, x: Var) -> Result<Var, ModelError> {
        let idx = self.model.position(name);
        self.apply(idx, x)
    }

    fn layer_relu(&mut self, name: &str, x: Var) -> Result<Var, ModelError> {
        let y = self.layer(name, x)?;
        Ok(self.tape.relu(y)?)
    }

    fn conv_bn_relu(&mut self, stage: usize, x: Var) -> Result<Var, ModelError> {
        let y = self.layer(&format!("conv{stage}"), x)?;
        self.layer_relu(&format!("bn{stage}"), y)
    }

    fn cnn_stack(&mut self, x4: Var) -> Result<Var, ModelError> {
        let batch = self.tape.shape(x4)[0];
        let h = self.conv_bn_relu(1, x4)?;
        let h = self.conv_bn_relu(2, h)?;
        let h = self.conv_bn_relu(3, h)?;
        let h = self.layer("pool3", h)?;
        let s = self.tape.shape(h).to_vec();
        let h = self.tape.reshape(h, &[batch, 1, s[1] * s[2], s[3]])?;
        let h = self.conv_bn_relu(4, h)?;
        let h = self.layer("pool4", h)?;
        let len = self.tape.value(h).len();
        Ok(self.tape.reshape(h, &[batch, len / batch])?)
    }

    fn head(&mut self, features: Var) -> Result<Var, ModelError> {
        let h = self.layer_relu("fc1", features)?;
        let h = self.layer("dropout", h)?;
        self.layer("fc2", h)
    }

    /// `(B, M, H, W)` maps → final GRU state of each map read as a `W`-step
    /// sequence of `H` features → `(B, M·hidden)`.
    fn gru_over_maps(&mut self, maps: Var) -> Result<Var, ModelError> {
        let s = self.tape.shape(maps).to_vec();
        let (batch, m, h, w) = (s[0], s[1], s[2], s[3]);
        let seq = self.tape.permute(maps, &[0, 1, 3, 2])?;
        if self.model.config.gru_shared {
            let seq = self.tape.reshape(seq, &[batch * m, w, h])?;
            let last = self.layer("gru", seq)?;
            let hidden = self.tape.shape(last)[1];
            Ok(self.tape.reshape(last, &[batch, m * hidden])?)
        } else {
            let mut parts = Vec::with_capacity(m);
            for map in 0..m {
                let one = self.tape.slice(seq, 1, map, map + 1)?;
                let one = self.tape.reshape(one, &[batch, w, h])?;
                parts.push(self.layer(&format!("gru_{map}"), one)?);
            }
            Ok(self.tape.concat(&parts, 1)?)
        }
    }
}
