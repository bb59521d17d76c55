use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub value: Tensor,
    /// `None` until a backward pass has populated it.
    pub grad: Option<Tensor>,
    pub trainable: bool,
}

/// Named learnable tensors, kept in name order so iteration is deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(
            name,
            ParamEntry {
                value,
                grad: None,
                trainable,
            },
        );
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::NotFound(format!("parameter {name}")))
    }

    /// Replaces a value, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::NotFound(format!("parameter {name}")))?;
        if entry.value.shape() != value.shape() {
            return Err(shape_err(format!(
                "parameter {name}: shape {:?} cannot take {:?}",
                entry.value.shape(),
                value.shape()
            )));
        }
        entry.value = value;
        Ok(())
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub(crate) fn entry_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.entries
            .get_mut(name)
            .map(|e| e.trainable = trainable)
            .ok_or_else(|| Error::NotFound(format!("parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Installs gradients for every trainable entry; entries absent from
    /// `grads` receive zeros.
    pub fn set_grads(&mut self, grads: &Grads) -> Result<()> {
        for (name, entry) in self.entries.iter_mut() {
            if !entry.trainable {
                entry.grad = None;
                continue;
            }
            let g = match grads.get(name) {
                Some(g) => {
                    if g.shape() != entry.value.shape() {
                        return Err(shape_err(format!(
                            "gradient for {name} has shape {:?}, parameter {:?}",
                            g.shape(),
                            entry.value.shape()
                        )));
                    }
                    g.clone()
                }
                None => Tensor::zeros(entry.value.shape()),
            };
            entry.grad = Some(g);
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        self.entries.values_mut().for_each(|e| e.grad = None);
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, entry) in &self.entries {
            h.update(name.as_bytes());
            h.update([0u8]);
            for s in entry.value.shape() {
                h.update((*s as u64).to_le_bytes());
            }
            for v in entry.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Moves every entry of `other` into this store.
    pub fn absorb(&mut self, other: ParamStore) -> Result<()> {
        for (name, entry) in other.entries {
            if self.entries.contains_key(&name) {
                return Err(Error::Contract(format!("duplicate parameter name {name}")));
            }
            self.entries.insert(name, entry);
        }
        Ok(())
    }
}

/// Gradient accumulator keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct Grads {
    map: BTreeMap<String, Tensor>,
}

impl Grads {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, name: &str, g: Tensor) {
        match self.map.get_mut(name) {
            Some(acc) => acc.add_assign(&g).expect("gradient shapes agree"),
            None => {
                self.map.insert(name.to_string(), g);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn merge(&mut self, other: Grads) {
        for (name, g) in other.map {
            self.accumulate(&name, g);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.map.values_mut().for_each(|g| g.scale_in_place(s));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
