//! Binary checkpoint format.
//!
//! Layout: the 8-byte magic `LAHSTCKP`, a little-endian `u64` manifest
//! length, the JSON manifest, then every tensor as little-endian `f64`
//! values in manifest order. Offsets in the manifest are relative to the
//! start of the tensor data.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{Lahst, ModelConfig, Params};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 8] = b"LAHSTCKP";
pub const FORMAT_VERSION: u32 = 1;

/// Tensor name under which the training-corpus label prior is stored.
pub const PRIOR_TENSOR: &str = "meta.label_prior";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub hyperparameters: ModelConfig,
    pub metadata: BTreeMap<String, Value>,
    pub tensors: Vec<TensorEntry>,
}

/// Model hyperparameters, free-form metadata and named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub hyperparameters: ModelConfig,
    pub metadata: BTreeMap<String, Value>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(hyperparameters: ModelConfig) -> Self {
        Self {
            hyperparameters,
            metadata: BTreeMap::new(),
            tensors: BTreeMap::new(),
        }
    }

    /// Model parameters plus the label prior used for empty cutoffs.
    pub fn from_model<E: crate::encoder::ChunkEncoder>(model: &Lahst<E>, prior: &[f64]) -> Self {
        let mut ck = Self::new(model.config.clone());
        ck.add_params("", &model.params);
        ck.tensors.insert(PRIOR_TENSOR.into(), Tensor::new(vec![prior.len()], prior.to_vec()).unwrap());
        ck
    }

    /// Inserts every tensor of `params` under `prefix` + name.
    pub fn add_params(&mut self, prefix: &str, params: &Params) {
        for (k, t) in params.iter() {
            self.tensors.insert(format!("{prefix}{k}"), t.clone());
        }
    }

    /// Tensors whose names start with `prefix`, with the prefix removed.
    /// An empty prefix selects the model parameters, i.e. names outside the
    /// `meta.` and `state.` namespaces.
    pub fn params(&self, prefix: &str) -> Params {
        let mut p = Params::new();
        for (k, t) in &self.tensors {
            let keep = if prefix.is_empty() {
                !k.starts_with("meta.") && !k.starts_with("state.")
            } else {
                k.starts_with(prefix)
            };
            if keep {
                p.insert(&k[prefix.len()..], t.clone());
            }
        }
        p
    }

    /// Rebuilds the default-encoder model stored in this checkpoint.
    pub fn model(&self) -> Result<Lahst> {
        let mut m = Lahst::new(self.hyperparameters.clone(), 0)?;
        m.set_params(self.params(""))?;
        Ok(m)
    }

    pub fn prior(&self) -> Result<Vec<f64>> {
        let t = self
            .tensors
            .get(PRIOR_TENSOR)
            .ok_or_else(|| Error::Checkpoint("checkpoint has no label prior".into()))?;
        if t.len() != self.hyperparameters.num_labels {
            return Err(Error::Checkpoint(format!(
                "label prior has {} entries for {} labels",
                t.len(),
                self.hyperparameters.num_labels
            )));
        }
        Ok(t.data().to_vec())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            let nbytes = (t.len() * 8) as u64;
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                nbytes,
            });
            offset += nbytes;
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            hyperparameters: self.hyperparameters.clone(),
            metadata: self.metadata.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let data_start = 16usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad(format!("manifest length {len} exceeds file size")))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..data_start])?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let data = &bytes[data_start..];
        let mut tensors = BTreeMap::new();
        let mut expected = 0u64;
        for e in &manifest.tensors {
            let count: usize = e.shape.iter().product();
            if e.nbytes != (count * 8) as u64 || e.offset != expected {
                return Err(bad(format!("tensor {} has inconsistent offset or size", e.name)));
            }
            let end = (e.offset + e.nbytes) as usize;
            if end > data.len() {
                return Err(bad(format!("tensor {} runs past end of file", e.name)));
            }
            let values = data[e.offset as usize..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if tensors.insert(e.name.clone(), Tensor::new(e.shape.clone(), values)?).is_some() {
                return Err(bad(format!("duplicate tensor {}", e.name)));
            }
            expected = e.offset + e.nbytes;
        }
        if expected as usize != data.len() {
            return Err(bad("trailing bytes after last tensor".into()));
        }
        Ok(Self {
            hyperparameters: manifest.hyperparameters,
            metadata: manifest.metadata,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
