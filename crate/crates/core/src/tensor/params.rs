use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use super::{Gradients, Graph, Tensor, Var};
use crate::error::{contract_err, Result};

/// Ordered, uniquely named collection of tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

/// Graph handles for every parameter of a store, in store order.
pub type Bound = IndexMap<String, Var>;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(contract_err!("duplicate parameter name {name}"));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.shift_remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Records every tensor as a leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        self.tensors
            .iter()
            .map(|(name, t)| (name.clone(), graph.leaf(t)))
            .collect()
    }

    /// Like [`ParamStore::bind`] but as constants: no gradients are tracked.
    pub fn bind_frozen(&self, graph: &mut Graph) -> Bound {
        self.tensors
            .iter()
            .map(|(name, t)| (name.clone(), graph.constant(t.clone())))
            .collect()
    }

    /// Stores the gradients of a backward pass into the tensors that asked for them.
    pub fn absorb(&mut self, bound: &Bound, grads: &mut Gradients) -> Result<()> {
        for (name, var) in bound {
            let tensor = self
                .tensors
                .get_mut(name)
                .ok_or_else(|| contract_err!("bound parameter {name} not in store"))?;
            if !tensor.requires_grad() {
                continue;
            }
            let grad = grads
                .take(*var)
                .ok_or_else(|| contract_err!("no gradient recorded for {name}"))?;
            tensor.set_grad(grad)?;
        }
        Ok(())
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.tensors.values_mut().for_each(|t| t.set_requires_grad(on));
    }

    pub fn clear_grads(&mut self) {
        self.tensors.values_mut().for_each(Tensor::clear_grad);
    }

    /// SHA-256 over names, extents and the exact bit patterns of every value.
    pub fn checksum(&self) -> String {
        checksum_of(self.iter())
    }
}

pub(crate) fn checksum_of<'a>(items: impl Iterator<Item = (&'a str, &'a Tensor)>) -> String {
    let mut hasher = Sha256::new();
    for (name, t) in items {
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update((t.rank() as u64).to_le_bytes());
        for d in t.shape() {
            hasher.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl FromIterator<(String, Tensor)> for ParamStore {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamStore {
            tensors: iter.into_iter().collect(),
        }
    }
}
