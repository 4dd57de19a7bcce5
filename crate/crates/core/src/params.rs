//! Named parameter collections and their binding onto a [`Graph`].

use std::collections::BTreeMap;

use crate::graph::{Graph, Gradients, Var};
use crate::tensor::Tensor;

/// Ordered `name -> tensor` map. Iteration order is lexicographic, which
/// keeps optimizer updates and checkpoint layout deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Put every tensor on the tape.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| (k.clone(), g.leaf(t.clone(), requires_grad)))
            .collect();
        Bound { vars }
    }

    /// Collect the gradient of every bound parameter (zeros where none flowed).
    pub fn gradients(&self, bound: &Bound, grads: &mut Gradients) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, t) in &self.tensors {
            let g = bound
                .vars
                .get(name)
                .and_then(|v| grads.take(*v))
                .unwrap_or_else(|| Tensor::zeros(t.shape()));
            out.insert(name.clone(), g);
        }
        out
    }

    /// Bitwise fingerprint over names, shapes and values.
    pub fn bits_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (k, t) in &self.tensors {
            h.update(k.as_bytes());
            h.update(t.bits_hash().as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Parameters placed on one graph.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }

    pub fn vars_with_prefix(&self, prefix: &str, names: &[String]) -> Vec<Var> {
        names.iter().map(|n| self.var(&format!("{prefix}{n}"))).collect()
    }
}
