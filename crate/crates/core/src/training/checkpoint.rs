//! Binary checkpoints.
//!
//! ```text
//! "XLNG" | u32 version | u32 header_len | JSON header | f64 LE payloads
//! ```
//!
//! The header lists every tensor as `{name, shape}` in payload order, echoes
//! the model configuration and normalisation statistics, and carries the
//! optimizer state when one was saved.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamConfig};
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::network::{Model, ModelConfig};
use crate::tensor::{ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"XLNG";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    step: u64,
    lr: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<Entry>,
    config: ModelConfig,
    stats: NormStats,
    optimizer: Option<OptimizerHeader>,
}

/// Everything restored from a checkpoint file.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub stats: NormStats,
    pub params: ParamStore,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    /// Rebuilds the model described by the stored configuration.
    pub fn model(&self) -> Result<Model> {
        let mut model = Model::new(self.config.clone(), 0)?;
        self.restore_into(&mut model)?;
        Ok(model)
    }

    /// Copies the stored parameters into `model`, which must have the same
    /// tensor names and shapes.
    pub fn restore_into(&self, model: &mut Model) -> Result<()> {
        let dst = model.params_mut();
        if dst.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} parameter tensors, model expects {}",
                self.params.len(),
                dst.len()
            )));
        }
        for (id, (name, t)) in dst.ids().zip(self.params.iter()) {
            if dst.name(id) != name {
                return Err(Error::Config(format!(
                    "checkpoint tensor {name} where the model expects {}",
                    dst.name(id)
                )));
            }
            if dst.get(id).shape() != t.shape() {
                return Err(Error::shape(
                    "checkpoint",
                    format!(
                        "{name} is {:?} in the checkpoint but {:?} in the model",
                        t.shape(),
                        dst.get(id).shape()
                    ),
                ));
            }
        }
        dst.copy_from(&self.params)
    }
}

pub fn checkpoint_bytes(model: &Model, stats: &NormStats, optimizer: Option<&Adam>) -> Result<Vec<u8>> {
    let params = model.params();
    let mut tensors: Vec<(String, &Tensor)> = params.iter().map(|(n, t)| (n.to_string(), t)).collect();
    if let Some(adam) = optimizer {
        let (m, v) = adam.moments();
        tensors.extend(m.iter().map(|(n, t)| (format!("adam.m.{n}"), t)));
        tensors.extend(v.iter().map(|(n, t)| (format!("adam.v.{n}"), t)));
    }
    let header = Header {
        tensors: tensors
            .iter()
            .map(|(n, t)| Entry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        config: model.config().clone(),
        stats: *stats,
        optimizer: optimizer.map(|a| OptimizerHeader {
            config: a.config.clone(),
            step: a.step_count(),
            lr: a.lr(),
        }),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Invalid(format!("checkpoint header: {e}")))?;
    let payload: usize = tensors.iter().map(|(_, t)| t.len() * 8).sum();
    let mut out = Vec::with_capacity(12 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model,
    stats: &NormStats,
    optimizer: Option<&Adam>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(model, stats, optimizer)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes).map_err(|detail| Error::Checkpoint {
        path: path.to_path_buf(),
        detail,
    })
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8], String> {
    let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| {
        format!(
            "unexpected end of payload reading {what} at byte {pos} ({} bytes in file)",
            bytes.len()
        )
    })?;
    let out = &bytes[*pos..end];
    *pos = end;
    Ok(out)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint, String> {
    let mut pos = 0;
    let magic = take(bytes, &mut pos, 4, "magic")?;
    if magic != MAGIC {
        return Err(format!("bad magic {magic:?}, not an XLNG checkpoint"));
    }
    let u32_at = |pos: &mut usize, what| -> Result<u32, String> {
        Ok(u32::from_le_bytes(take(bytes, pos, 4, what)?.try_into().expect("4 bytes")))
    };
    let version = u32_at(&mut pos, "version")?;
    if version != VERSION {
        return Err(format!("unsupported version {version}, expected {VERSION}"));
    }
    let len = u32_at(&mut pos, "header length")? as usize;
    let header: Header = serde_json::from_slice(take(bytes, &mut pos, len, "header")?)
        .map_err(|e| format!("malformed header: {e}"))?;

    let mut read = |e: &Entry| -> Result<Tensor, String> {
        let n: usize = e.shape.iter().product();
        let raw = take(bytes, &mut pos, n * 8, &e.name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(&e.shape, data).map_err(|err| format!("{}: {err}", e.name))
    };
    let mut params = ParamStore::new();
    let mut m = ParamStore::new();
    let mut v = ParamStore::new();
    for e in &header.tensors {
        let t = read(e)?;
        if let Some(name) = e.name.strip_prefix("adam.m.") {
            m.add(name, t);
        } else if let Some(name) = e.name.strip_prefix("adam.v.") {
            v.add(name, t);
        } else {
            params.add(e.name.clone(), t);
        }
    }
    if pos != bytes.len() {
        return Err(format!("{} trailing bytes after the last tensor", bytes.len() - pos));
    }
    let optimizer = match header.optimizer {
        Some(o) => {
            let names = |s: &ParamStore| s.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect::<Vec<_>>();
            if names(&m) != names(&params) || names(&v) != names(&params) {
                return Err("optimizer moments do not match the parameter list".into());
            }
            Some(Adam::restore(o.config, m, v, o.step, o.lr))
        }
        None => None,
    };
    Ok(Checkpoint {
        config: header.config,
        stats: header.stats,
        params,
        optimizer,
    })
}
