//! Named parameter storage with frozen/trainable flags.

use indexmap::IndexMap;
use lseg_autograd::{Tape, Tensor, Var};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub trainable: bool,
}

/// Insertion-ordered map from parameter name to tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) {
        self.entries.insert(name.into(), Param { value, trainable });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Lookup(format!("parameter {name}")))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Lookup(format!("parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.iter()
            .filter(|(_, p)| p.trainable)
            .map(|(n, _)| n.to_string())
            .collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.value.len()).sum()
    }

    pub fn frozen_count(&self) -> usize {
        self.iter().filter(|(_, p)| !p.trainable).map(|(_, p)| p.value.len()).sum()
    }

    /// SHA-256 over name, shape and little-endian bytes of every frozen buffer.
    pub fn frozen_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, p) in self.iter().filter(|(_, p)| !p.trainable) {
            h.update(name.as_bytes());
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Records every parameter on `tape`. Trainable entries become
    /// gradient-tracking leaves when `track_grads` is set.
    pub fn bind(&self, tape: &mut Tape, track_grads: bool) -> Binding {
        let vars = self
            .iter()
            .map(|(name, p)| {
                let v = tape.leaf(p.value.clone(), track_grads && p.trainable);
                (name.to_string(), v)
            })
            .collect();
        Binding { vars }
    }
}

/// Tape handles for the parameters of one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Binding {
    vars: IndexMap<String, Var>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("bound parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
