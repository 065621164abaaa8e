//! Named parameter storage.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Matrix;
use crate::error::{Error, Result};
use crate::rng::BfRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Matrix,
    pub trainable: bool,
}

/// Name → matrix map with a per-entry trainable flag.
///
/// Iteration order is the sorted name order, which keeps optimizer updates
/// and checkpoint layouts deterministic.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        self.entries.insert(name, Param { value, trainable });
        Ok(())
    }

    /// Inserts a trainable parameter drawn uniformly from ±1/√fan_in.
    pub fn insert_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut BfRng,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
        self.insert(name, Matrix::new(rows, cols, data)?, true)
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    /// Replaces a value; the shape must stay the same.
    pub fn set(&mut self, name: &str, value: Matrix) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter `{name}` is {:?}, new value {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|p| p.trainable)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.entries
            .get_mut(name)
            .map(|p| p.trainable = trainable)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    /// Freezes every entry whose name does not start with `keep_prefix`.
    pub fn freeze_all_except(&mut self, keep_prefix: &str) {
        for (name, p) in &mut self.entries {
            p.trainable = name.starts_with(keep_prefix);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(k, _)| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Name and shape inventory, sorted by name.
    pub fn inventory(&self) -> Vec<(String, (usize, usize))> {
        self.entries
            .iter()
            .map(|(k, v)| (k.clone(), v.value.shape()))
            .collect()
    }

    pub fn remove_prefix(&mut self, prefix: &str) {
        self.entries.retain(|k, _| !k.starts_with(prefix));
    }

    /// SHA-256 over names, shapes and raw bits of the entries selected by `filter`.
    pub fn hash_where(&self, filter: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for (name, p) in self.entries.iter().filter(|(k, _)| filter(k)) {
            h.update(name.as_bytes());
            h.update([0]);
            h.update((p.value.rows() as u64).to_le_bytes());
            h.update((p.value.cols() as u64).to_le_bytes());
            for v in p.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
