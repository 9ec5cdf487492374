use std::collections::HashMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::container;
use crate::error::{Error, Result};
use crate::rng::Rng;

const PARAM_MAGIC: &[u8; 4] = b"EEGP";
const PARAM_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    params: Vec<(String, Vec<usize>)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::config("params", format!("duplicate parameter {name}")));
        }
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// SHA-256 over names, shapes and values, in insertion order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.names.iter().zip(&self.values) {
            h.update(name.as_bytes());
            for d in &t.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            params: self.names.iter().cloned().zip(self.values.iter().map(|t| t.shape.clone())).collect(),
        };
        let payload = container::f64_payload(self.values.iter().flat_map(|t| t.data.iter().copied()));
        container::encode(PARAM_MAGIC, PARAM_SCHEMA, &header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload): (CheckpointHeader, _) = container::decode(PARAM_MAGIC, PARAM_SCHEMA, bytes)?;
        let total: usize = header.params.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        let values = container::read_f64s(payload, total)?;
        if payload.len() != total * 8 {
            return Err(Error::MalformedHeader("trailing bytes after parameters".into()));
        }
        let mut store = Self::new();
        let mut off = 0;
        for (name, shape) in header.params {
            let n: usize = shape.iter().product();
            store.add(name, Tensor::new(shape, values[off..off + n].to_vec())?)?;
            off += n;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::write_file(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&container::read_file(path.as_ref())?)
    }

    /// Copies values from `other`, which must hold the same names and shapes.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::config("params", "checkpoint parameter names differ"));
        }
        for (mine, theirs) in self.values.iter_mut().zip(&other.values) {
            if mine.shape != theirs.shape {
                return Err(Error::shape(
                    "load_values_from",
                    format!("{:?} vs {:?}", mine.shape, theirs.shape),
                ));
            }
            mine.data.clone_from(&theirs.data);
        }
        Ok(())
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rng: &mut Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-a..a))
}
