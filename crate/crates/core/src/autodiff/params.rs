use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Version written into every checkpoint container.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub frozen: bool,
}

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

/// Graph handles for every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.params.push(Parameter {
            name: name.into(),
            tensor,
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    /// Uniform `±sqrt(6 / (fan_in + fan_out))` initialization for a `[in, out]` weight.
    pub fn add_glorot(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let u = Uniform::new_inclusive(-a, a);
        let data = (0..fan_in * fan_out).map(|_| u.sample(rng)).collect();
        self.add(name, Tensor { shape: vec![fan_in, fan_out], data })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.params.iter_mut().for_each(|p| p.frozen = frozen);
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Places every parameter in `g`: trainable ones as variables, frozen
    /// ones as constants.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if p.frozen {
                    g.constant(p.tensor.clone())
                } else {
                    g.variable(p.tensor.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Places every parameter in `g` as a constant, regardless of its
    /// frozen flag.
    pub fn bind_constant(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| g.constant(p.tensor.clone())).collect(),
        }
    }

    /// Per-parameter gradients in store order; `None` for frozen parameters.
    pub fn collect_grads(&self, bound: &Bound, grads: &mut Gradients) -> Vec<Option<Tensor>> {
        self.params
            .iter()
            .zip(&bound.vars)
            .map(|(p, v)| if p.frozen { None } else { grads.take(*v) })
            .collect()
    }

    pub fn to_map(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.tensor.clone()))
            .collect()
    }

    /// Overwrites values from `map`, requiring every name with a matching shape.
    pub fn load_map(&mut self, map: &BTreeMap<String, Tensor>) -> Result<()> {
        for p in &mut self.params {
            let t = map
                .get(&p.name)
                .ok_or_else(|| Error::IncompatibleCheckpoint(format!("missing tensor `{}`", p.name)))?;
            if t.shape != p.tensor.shape {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    p.name, t.shape, p.tensor.shape
                )));
            }
            p.tensor = t.clone();
        }
        Ok(())
    }
}

/// JSON container of named tensors plus free-form metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub metadata: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value, tensors: BTreeMap<String, Tensor>) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            metadata,
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let c: Checkpoint = serde_json::from_slice(bytes)
            .map_err(|e| Error::Checkpoint(format!("unreadable checkpoint: {e}")))?;
        if c.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::IncompatibleCheckpoint(format!(
                "format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                c.format_version
            )));
        }
        for (name, t) in &c.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Checkpoint(format!("tensor `{name}` shape does not match its data")));
            }
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }

    /// Hex SHA-256 of the serialized form.
    pub fn hash(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}
