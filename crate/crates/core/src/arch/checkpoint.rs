//! Binary checkpoint container.
//!
//! ```text
//! "UEEG" | version u8 | config length u32 LE | canonical config JSON
//! then until EOF, per tensor:
//!   name length u32 LE | name (UTF-8) | rank u32 LE | dims u32 LE × rank | f32 LE data
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{Model, ModelConfig, ModelError};
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UEEG";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint magic {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported checkpoint version {0}")]
    VersionUnsupported(u8),
    #[error(
        "checkpoint truncated at byte {offset}: needed {needed} more bytes, {available} available"
    )]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("invalid checkpoint config at byte {offset}: {detail}")]
    Config { offset: usize, detail: String },
    #[error("invalid tensor {name:?} at byte {offset}: {detail}")]
    BadTensor {
        name: String,
        offset: usize,
        detail: String,
    },
    #[error("checkpoint lacks tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name:?} has shape {found:?}, model expects {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint I/O: {0}")]
    Io(String),
}

/// Model configuration plus named `f32` tensors. Tensors other than model
/// weights (e.g. input normalization statistics) may ride along.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let available = self.bytes.len() - self.at;
        if n > available {
            return Err(CheckpointError::Truncated {
                offset: self.at,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let json = self.config.to_canonical_json();
        let mut out = Vec::with_capacity(
            9 + json.len()
                + self
                    .tensors
                    .iter()
                    .map(|(_, t)| 4 * t.len() + 64)
                    .sum::<usize>(),
        );
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, at: 0 };
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic {
                found: magic.to_vec(),
            });
        }
        let version = r.take(1)?[0];
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionUnsupported(version));
        }
        let len = r.u32()?;
        let at = r.at;
        let json = r.take(len)?;
        let config: ModelConfig =
            serde_json::from_slice(json).map_err(|e| CheckpointError::Config {
                offset: at,
                detail: e.to_string(),
            })?;
        let mut tensors = Vec::new();
        while r.at < bytes.len() {
            let at = r.at;
            let len = r.u32()?;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| CheckpointError::BadTensor {
                    name: String::new(),
                    offset: at,
                    detail: e.to_string(),
                })?
                .to_string();
            let rank = r.u32()?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()?);
            }
            let count: usize = shape.iter().product();
            let raw = r.take(count * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::BadTensor {
                name: name.clone(),
                offset: at,
                detail: e.to_string(),
            })?;
            tensors.push((name, t));
        }
        Ok(Self { config, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())
            .map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        let bytes =
            fs::read(path).map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

impl<F: Scalar> Model<F> {
    /// Every weight (including batch-norm running statistics) as
    /// `"layer.weight"` entries, in layer order.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let tensors = self
            .layers
            .iter()
            .flat_map(|l| {
                l.weights
                    .iter()
                    .map(move |w| (format!("{}.{}", l.name, w.name), w.value.cast::<f32>()))
            })
            .collect();
        Checkpoint {
            config: self.config.clone(),
            tensors,
        }
    }

    /// Rebuilds the architecture from the checkpoint's config and loads
    /// every weight; extra tensors are ignored.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let mut model = Model::<F>::build(&ckpt.config)?;
        for layer in &mut model.layers {
            for w in &mut layer.weights {
                let name = format!("{}.{}", layer.name, w.name);
                let t = ckpt
                    .tensor(&name)
                    .ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
                if t.shape() != w.value.shape() {
                    return Err(CheckpointError::TensorShape {
                        name,
                        expected: w.value.shape().to_vec(),
                        found: t.shape().to_vec(),
                    }
                    .into());
                }
                w.value = t.cast();
            }
        }
        Ok(model)
    }
}
