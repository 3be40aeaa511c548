//! Trainable parameter storage, separate from any single tape.
//!
//! Parameters live here between tape executions; tapes copy values in at
//! emit time and gradients are accumulated back by [`ParamId`]. Updates
//! happen only between tape runs (bulk-synchronous contract).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stable handle for a registered parameter (registration order).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("parameter `{0}` is already registered")]
    Duplicate(String),
    #[error("parameter `{name}`: shape {shape:?} does not match {len} values")]
    ShapeMismatch {
        name: String,
        shape: Vec<usize>,
        len: usize,
    },
    #[error("parameter `{0}` contains a non-finite value")]
    NonFinite(String),
    #[error("unknown parameter `{0}`")]
    Unknown(String),
    #[error("checkpoint version {0} is not supported (expected {CHECKPOINT_VERSION})")]
    BadVersion(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    value: Vec<f64>,
}

/// Registry of named, trainable numeric vectors. Shapes are fixed at
/// registration; values must stay finite.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, ParamId>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        value: Vec<f64>,
    ) -> Result<ParamId, StoreError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(StoreError::Duplicate(name));
        }
        let expected: usize = shape.iter().product();
        if expected != value.len() {
            return Err(StoreError::ShapeMismatch {
                name,
                shape,
                len: value.len(),
            });
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite(name));
        }
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, shape, value });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].value
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total scalar component count across all parameters.
    pub fn component_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        assert_eq!(snapshot.len(), self.entries.len(), "snapshot size mismatch");
        for (entry, saved) in self.entries.iter_mut().zip(snapshot) {
            assert_eq!(entry.value.len(), saved.len(), "snapshot shape mismatch");
            entry.value.copy_from_slice(saved);
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            params: self
                .entries
                .iter()
                .map(|e| CheckpointParam {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    values: e.value.clone(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, StoreError> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(StoreError::BadVersion(ckpt.version));
        }
        let mut store = Self::new();
        for p in &ckpt.params {
            store.register(p.name.clone(), p.shape.clone(), p.values.clone())?;
        }
        Ok(store)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized form of a [`ParameterStore`]: a versioned dump with a shape
/// header per parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub params: Vec<CheckpointParam>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Dense per-parameter gradient accumulator, shaped like a store.
#[derive(Debug, Clone)]
pub struct GradientSet {
    grads: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Self {
            grads: store
                .entries
                .iter()
                .map(|e| vec![0.0; e.value.len()])
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            for x in g.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.grads
            .iter()
            .enumerate()
            .map(|(i, g)| (ParamId(i), g.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_and_lookup() {
        let mut store = ParameterStore::new();
        let id = store.register("w", vec![2, 3], vec![1.0; 6]).unwrap();
        assert_eq!(store.name(id), "w");
        assert_eq!(store.shape(id), &[2, 3]);
        assert_eq!(store.id("w"), Some(id));
        assert_eq!(store.component_count(), 6);
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut store = ParameterStore::new();
        store.register("w", vec![1], vec![0.0]).unwrap();
        assert!(matches!(
            store.register("w", vec![1], vec![0.0]),
            Err(StoreError::Duplicate(_))
        ));
    }

    #[test]
    fn shape_must_match_values() {
        let mut store = ParameterStore::new();
        assert!(matches!(
            store.register("w", vec![4], vec![0.0; 3]),
            Err(StoreError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_values_rejected() {
        let mut store = ParameterStore::new();
        assert!(matches!(
            store.register("w", vec![1], vec![f64::NAN]),
            Err(StoreError::NonFinite(_))
        ));
    }

    #[test]
    fn snapshot_restore_roundtrip() {
        let mut store = ParameterStore::new();
        let id = store.register("w", vec![2], vec![1.0, 2.0]).unwrap();
        let snap = store.snapshot();
        store.value_mut(id)[0] = 99.0;
        store.restore(&snap);
        assert_eq!(store.value(id), &[1.0, 2.0]);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut store = ParameterStore::new();
        store.register("a", vec![2], vec![0.5, -0.5]).unwrap();
        store.register("b", vec![1], vec![3.0]).unwrap();
        let json = serde_json::to_string(&store.to_checkpoint()).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        let restored = ParameterStore::from_checkpoint(&back).unwrap();
        assert_eq!(restored.len(), 2);
        assert_eq!(restored.value(restored.id("a").unwrap()), &[0.5, -0.5]);
        assert_eq!(restored.shape(restored.id("b").unwrap()), &[1]);
    }

    #[test]
    fn checkpoint_bad_version_rejected() {
        let ckpt = Checkpoint {
            version: 99,
            params: vec![],
        };
        assert!(matches!(
            ParameterStore::from_checkpoint(&ckpt),
            Err(StoreError::BadVersion(99))
        ));
    }
}
