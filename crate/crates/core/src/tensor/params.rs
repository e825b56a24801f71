use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Flat owner of every trainable tensor of a model. Layers refer to their
/// weights by [`ParamId`]; names are dotted layer paths used for checkpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics if the name is taken or `values` does not
    /// match `shape`; both are construction bugs.
    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> ParamId {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), values.len(), "param {name}: shape/value mismatch");
        assert!(self.find(&name).is_none(), "duplicate param name {name}");
        self.entries.push(Entry { name, shape, values });
        ParamId(self.entries.len() - 1)
    }

    /// Uniform He initialisation, `U(-√(6/fan_in), √(6/fan_in))`.
    pub fn add_kaiming<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, shape, values)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].values
    }

    pub fn set_values(&mut self, id: ParamId, values: &[f64]) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.values.len() != values.len() {
            return Err(Error::shape(format!(
                "param {} holds {} values, got {}",
                entry.name,
                entry.values.len(),
                values.len()
            )));
        }
        entry.values.copy_from_slice(values);
        Ok(())
    }

    pub fn fill(&mut self, id: ParamId, value: f64) {
        self.entries[id.0].values.iter_mut().for_each(|v| *v = value);
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    /// Scalar count over tensors whose path starts with `prefix`.
    pub fn scalar_count_with_prefix(&self, prefix: &str) -> usize {
        self.entries.iter().filter(|e| e.name.starts_with(prefix)).map(|e| e.values.len()).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint(
            self.entries
                .iter()
                .map(|e| (e.name.clone(), CheckpointEntry { shape: e.shape.clone(), values: e.values.clone() }))
                .collect(),
        )
    }

    /// Overwrites every tensor from a checkpoint holding exactly the same paths and shapes.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.0.len() != self.entries.len() {
            return Err(Error::shape(format!(
                "checkpoint has {} tensors, model has {}",
                ckpt.0.len(),
                self.entries.len()
            )));
        }
        for entry in &mut self.entries {
            let saved = ckpt
                .0
                .get(&entry.name)
                .ok_or_else(|| Error::shape(format!("checkpoint is missing {}", entry.name)))?;
            if saved.shape != entry.shape || saved.values.len() != entry.values.len() {
                return Err(Error::shape(format!("checkpoint shape mismatch for {}", entry.name)));
            }
            entry.values.copy_from_slice(&saved.values);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// JSON parameter checkpoint: layer path → `{shape, values}` (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Checkpoint(pub BTreeMap<String, CheckpointEntry>);

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kaiming_bounds_and_determinism() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        let id = a.add_kaiming("w", vec![4, 3, 3], 9, &mut ChaCha8Rng::seed_from_u64(3));
        b.add_kaiming("w", vec![4, 3, 3], 9, &mut ChaCha8Rng::seed_from_u64(3));
        let bound = (6.0f64 / 9.0).sqrt();
        assert!(a.values(id).iter().all(|v| v.abs() < bound));
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut store = ParamStore::new();
        let w = store.add("enc.w", vec![2, 2], vec![1.0, -2.5, 3.25, 0.1]);
        store.add_zeros("enc.b", vec![2]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        store.to_checkpoint().save(&path).unwrap();

        let mut other = store.clone();
        other.fill(w, 9.0);
        other.load_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(other, store);

        let text = std::fs::read_to_string(&path).unwrap();
        let json: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(json["enc.w"]["shape"], serde_json::json!([2, 2]));
    }

    #[test]
    fn checkpoint_rejects_mismatch() {
        let mut store = ParamStore::new();
        store.add_zeros("a", vec![3]);
        let mut other = ParamStore::new();
        other.add_zeros("a", vec![4]);
        assert!(store.load_checkpoint(&other.to_checkpoint()).is_err());
    }
}
