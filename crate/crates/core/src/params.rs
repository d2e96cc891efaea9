//! Named, ordered collections of trainable tensors and their gradients.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::tape::{NetTag, Tape, TensorId};
use crate::tensor::{Scalar, Tensor};

/// Ordered map of trainable tensors. Names are hierarchical, e.g.
/// `gen/enc1/conv/kernel`; iteration order is insertion order and therefore
/// deterministic for a fixed build procedure.
#[derive(Clone, Debug)]
pub struct ParameterStore<E: Scalar> {
    entries: IndexMap<String, Tensor<E>>,
}

impl<E: Scalar> Default for ParameterStore<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> ParameterStore<E> {
    pub fn new() -> Self {
        ParameterStore {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<E>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::contract(format!(
                "duplicate parameter name '{name}'"
            )));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<E>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<E>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter '{name}'")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar elements across all parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|t| t.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<E>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<E>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn cast<F: Scalar>(&self) -> ParameterStore<F> {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Register every parameter on `tape` as a tagged leaf. Every tensor in
    /// the store requires grad; pass `trainable = false` to lease values for
    /// a phase that must not accumulate gradients into this network.
    pub fn lease(&self, tape: &mut Tape<E>, tag: Option<NetTag>, trainable: bool) -> Lease {
        let mut ids = IndexMap::with_capacity(self.entries.len());
        for (name, tensor) in &self.entries {
            let id = match tag {
                Some(tag) => tape.leaf_tagged(tensor.clone(), trainable, tag),
                None => tape.leaf(tensor.clone(), trainable),
            };
            ids.insert(name.clone(), id);
        }
        Lease { ids }
    }
}

/// Tape handles for one leased ParameterStore.
pub struct Lease {
    ids: IndexMap<String, TensorId>,
}

impl Lease {
    pub fn id(&self, name: &str) -> Result<TensorId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("no leased parameter named '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, TensorId)> {
        self.ids.iter().map(|(n, &id)| (n, id))
    }
}

/// Gradients extracted from a tape after backward, keyed like the store.
#[derive(Clone, Debug)]
pub struct Gradients<E: Scalar> {
    entries: IndexMap<String, Tensor<E>>,
}

impl<E: Scalar> Gradients<E> {
    /// Collect one gradient tensor per leased parameter; parameters not on
    /// the loss path yield zeros.
    pub fn collect(tape: &Tape<E>, lease: &Lease) -> Self {
        let entries = lease
            .iter()
            .map(|(name, id)| (name.clone(), tape.grad_tensor(id)))
            .collect();
        Gradients { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<E>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|t| t.all_finite())
    }

    /// Largest |g| across all parameters (diagnostics).
    pub fn max_abs(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|t| t.data().iter())
            .fold(0.0f64, |m, v| m.max(v.as_f64().abs()))
    }
}

/// Batch-norm running statistics, one mean/var pair per normalized layer.
/// Not trainable, but serialized into checkpoints alongside parameters.
#[derive(Clone, Debug)]
pub struct RunningStats<E: Scalar> {
    mean: IndexMap<String, Tensor<E>>,
    var: IndexMap<String, Tensor<E>>,
}

impl<E: Scalar> Default for RunningStats<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> RunningStats<E> {
    pub fn new() -> Self {
        RunningStats {
            mean: IndexMap::new(),
            var: IndexMap::new(),
        }
    }

    /// Register a layer with `channels` channels: mean 0, var 1.
    pub fn register(&mut self, layer: impl Into<String>, channels: usize) -> Result<()> {
        let layer = layer.into();
        if self.mean.contains_key(&layer) {
            return Err(Error::contract(format!("duplicate norm layer '{layer}'")));
        }
        let shape = crate::tensor::Shape::new(1, channels, 1, 1);
        self.mean.insert(layer.clone(), Tensor::zeros(shape));
        self.var.insert(layer, Tensor::full(shape, E::one()));
        Ok(())
    }

    pub fn pair_mut(&mut self, layer: &str) -> Result<(&mut Tensor<E>, &mut Tensor<E>)> {
        let mean = self
            .mean
            .get_mut(layer)
            .ok_or_else(|| Error::contract(format!("unknown norm layer '{layer}'")))?;
        let var = self
            .var
            .get_mut(layer)
            .ok_or_else(|| Error::contract(format!("unknown norm layer '{layer}'")))?;
        Ok((mean, var))
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<E>, &Tensor<E>)> {
        self.mean.iter().map(|(k, m)| (k, m, &self.var[k]))
    }

    pub fn cast<F: Scalar>(&self) -> RunningStats<F> {
        RunningStats {
            mean: self
                .mean
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
            var: self
                .var
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}
