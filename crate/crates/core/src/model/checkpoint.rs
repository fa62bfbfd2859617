//! Checkpoint container: an 8-byte magic, a little-endian `u64` header
//! length, a JSON header, then every tensor's values as little-endian `f64`
//! in header order. Values round-trip bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Letr, ModelConfig, Stage};
use crate::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"LETRCKP1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub stage: Stage,
    pub tensors: Vec<TensorEntry>,
    /// Free-form training state (epoch, RNG state, history, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub data: Vec<Tensor>,
}

impl Checkpoint {
    /// Model parameters only, named as in the model's store.
    pub fn from_model(model: &Letr, stage: Stage) -> Self {
        let mut ck = Checkpoint {
            header: CheckpointHeader { config: model.config.clone(), stage, tensors: Vec::new(), meta: serde_json::Value::Null },
            data: Vec::new(),
        };
        for (_, p) in model.store.iter() {
            ck.push(p.name.clone(), p.value.clone().with_requires_grad(false));
        }
        ck
    }

    pub fn push(&mut self, name: String, tensor: Tensor) {
        self.header.tensors.push(TensorEntry { name, shape: tensor.shape().to_vec() });
        self.data.push(tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.header.tensors.iter().position(|t| t.name == name).map(|i| &self.data[i])
    }

    /// Rebuilds the model; every parameter must be present with its shape.
    pub fn to_model(&self) -> Result<Letr> {
        let mut model = Letr::new(self.header.config.clone(), 0)?;
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let p = model.store.get_mut(id);
            let t = self.get(&p.name).ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Config(format!("parameter {} has shape {:?}, model expects {:?}", p.name, t.shape(), p.value.shape())));
            }
            p.value = t.clone();
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let n: usize = self.data.iter().map(Tensor::len).sum();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.data {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Input(format!("corrupt checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated"))?;
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[..hlen])?;
        let mut rest = &body[hlen..];
        let mut data = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            if rest.len() < 8 * n {
                return Err(bad(&format!("data for {} truncated", e.name)));
            }
            let (chunk, tail) = rest.split_at(8 * n);
            let vals = chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
            data.push(Tensor::new(e.shape.clone(), vals)?);
            rest = tail;
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint { header, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
