use std::collections::{BTreeMap, HashMap};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub frozen: bool,
    /// Seed of the generator stream that produced the initial values, if random.
    pub seed: Option<u64>,
}

/// Named parameter registry with an explicit frozen/trainable partition.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, frozen: bool, seed: Option<u64>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id.0);
        self.entries.push(ParamEntry {
            name,
            tensor,
            frozen,
            seed,
        });
        id
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[id.0].frozen
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries[id.0].frozen = frozen;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| !self.is_frozen(id)).collect()
    }

    /// Overwrites values, keeping the shape.
    pub fn set(&mut self, id: ParamId, tensor: Tensor) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.tensor.shape() != tensor.shape() {
            return Err(Error::Shape {
                op: "param_set",
                lhs: entry.tensor.shape().to_vec(),
                rhs: tensor.shape().to_vec(),
            });
        }
        entry.tensor = tensor;
        Ok(())
    }

    pub(crate) fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }
}

/// Gradients for trainable parameters only.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub(crate) fn insert(&mut self, id: ParamId, g: Tensor) {
        match self.grads.get_mut(&id) {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            None => {
                self.grads.insert(id, g);
            }
        }
    }

    /// Adds `other` into `self` entry by entry.
    pub fn accumulate(&mut self, other: Gradients) {
        for (id, g) in other.grads {
            self.insert(id, g);
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|t| t.data().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.grads.values_mut() {
            for g in t.data_mut() {
                *g *= factor;
            }
        }
    }

    /// Rescales to `max_norm` when the global norm exceeds it. Returns whether it did.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> bool {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
            true
        } else {
            false
        }
    }
}

/// Plain SGD: `θ ← θ − lr·g` for every unfrozen parameter that has a gradient.
pub fn sgd_step(params: &mut ParamStore, grads: &Gradients, lr: f64) {
    if lr == 0.0 {
        return;
    }
    for (id, g) in grads.iter() {
        if params.is_frozen(id) {
            continue;
        }
        let t = params.tensor_mut(id);
        for (p, d) in t.data_mut().iter_mut().zip(g.data()) {
            *p -= lr * d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> (ParamStore, ParamId, ParamId) {
        let mut ps = ParamStore::new();
        let a = ps.add("a", Tensor::scalar(1.0), false, None);
        let b = ps.add("b", Tensor::scalar(1.0), true, None);
        (ps, a, b)
    }

    #[test]
    fn sgd_updates_only_trainable() {
        let (mut ps, a, b) = store();
        let mut g = Gradients::default();
        g.insert(a, Tensor::scalar(2.0));
        g.insert(b, Tensor::scalar(2.0));
        sgd_step(&mut ps, &g, 0.1);
        assert!((ps.get(a).item() - 0.8).abs() < 1e-15);
        assert_eq!(ps.get(b).item(), 1.0);
    }

    #[test]
    fn zero_lr_is_identity() {
        let (mut ps, a, _) = store();
        let mut g = Gradients::default();
        g.insert(a, Tensor::scalar(123.0));
        sgd_step(&mut ps, &g, 0.0);
        assert_eq!(ps.get(a).item(), 1.0);
    }

    #[test]
    fn clipping_caps_norm() {
        let (_, a, _) = store();
        let mut g = Gradients::default();
        g.insert(a, Tensor::vector(vec![3.0, 4.0]));
        assert!(g.clip_global_norm(1.0));
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        assert!(!g.clip_global_norm(5.0));
    }
}
