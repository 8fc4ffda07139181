//! Binary checkpoints, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "CMUDRNCK"
//! version    u32
//! config     u32 length + UTF-8 `key = value` text
//! step       u64
//! count      u32
//! records    count x { u32 name length, name, 4 x u64 dims, f64 payload }
//! ```
//!
//! Records hold the model parameters in [`Layers::parameters`] order,
//! followed by `adam.m.<name>` and `adam.v.<name>` for every parameter once
//! the optimizer has taken a step.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::nets::Layers;
use crate::tensor::{numel, Shape, Tensor};

use super::{AdamState, Moments, TrainConfig, Trainer};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CMUDRNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Shape,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub tensors: Vec<NamedTensor>,
}

const M_PREFIX: &str = "adam.m.";
const V_PREFIX: &str = "adam.v.";

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Checkpoint {
        let mut tensors: Vec<NamedTensor> = t
            .params
            .parameters()
            .into_iter()
            .map(|(name, p)| NamedTensor {
                name,
                shape: p.shape(),
                data: p.data().to_vec(),
            })
            .collect();
        let shapes: Vec<Shape> = tensors.iter().map(|n| n.shape).collect();
        for (prefix, pick) in [(M_PREFIX, 0), (V_PREFIX, 1)] {
            for (mo, shape) in t.adam.moments.iter().zip(&shapes) {
                tensors.push(NamedTensor {
                    name: format!("{prefix}{}", mo.name),
                    shape: *shape,
                    data: if pick == 0 { mo.m.clone() } else { mo.v.clone() },
                });
            }
        }
        Checkpoint {
            config: t.config.clone(),
            step: t.adam.step,
            tensors,
        }
    }

    /// Rebuilds the trainer. Every model parameter must be present with
    /// its expected shape; moments are either all present or all absent.
    pub fn into_trainer(self) -> Result<Trainer, CheckpointError> {
        let fmt = |m: String| CheckpointError::Format(m);
        let mut trainer = Trainer::new(self.config.clone()).map_err(|e| fmt(e.to_string()))?;
        let find = |name: &str| self.tensors.iter().find(|t| t.name == name);
        let mut used = 0;
        for (name, p) in trainer.params.parameters_mut() {
            let rec = find(&name).ok_or_else(|| fmt(format!("missing parameter `{name}`")))?;
            if rec.shape != p.shape() {
                return Err(fmt(format!(
                    "`{name}` has shape {:?}, model expects {:?}",
                    rec.shape,
                    p.shape()
                )));
            }
            *p = Tensor::param(rec.shape, rec.data.clone()).map_err(|e| fmt(e.to_string()))?;
            used += 1;
        }
        let names: Vec<String> = trainer.params.parameters().into_iter().map(|(n, _)| n).collect();
        let mut moments = Vec::new();
        for name in &names {
            let m = find(&format!("{M_PREFIX}{name}"));
            let v = find(&format!("{V_PREFIX}{name}"));
            match (m, v) {
                (Some(m), Some(v)) => {
                    moments.push(Moments {
                        name: name.clone(),
                        m: m.data.clone(),
                        v: v.data.clone(),
                    });
                    used += 2;
                }
                (None, None) => {}
                _ => return Err(fmt(format!("incomplete optimizer moments for `{name}`"))),
            }
        }
        if !moments.is_empty() && moments.len() != names.len() {
            return Err(fmt("optimizer moments cover only some parameters".into()));
        }
        if used != self.tensors.len() {
            return Err(fmt(format!(
                "{} unrecognized tensor records",
                self.tensors.len() - used
            )));
        }
        trainer.adam = AdamState {
            step: self.step,
            moments,
        };
        Ok(trainer)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let config = self.config.to_text();
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            for d in t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Format("config echo is not UTF-8".into()))?;
        let config = TrainConfig::from_text(text)
            .map_err(|e| CheckpointError::Format(format!("config echo: {e}")))?;
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| CheckpointError::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let mut shape = [0usize; 4];
            for d in &mut shape {
                *d = usize::try_from(r.u64()?)
                    .map_err(|_| CheckpointError::Format(format!("`{name}`: dimension overflow")))?;
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n <= bytes.len() / 8)
                .ok_or(CheckpointError::Truncated { offset: bytes.len() })?;
            debug_assert_eq!(n, numel(&shape));
            let payload = r.take(8 * n)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            config,
            step,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated {
                offset: self.bytes.len(),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
