//! Named parameter storage. Parameters live outside any graph; each forward
//! pass binds them as gradient-tracked leaves in registration order.

use std::collections::HashMap;

use super::graph::{Graph, TensorId};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter. Names must be unique; duplicates are programmer
    /// errors in model construction and panic.
    pub fn register(&mut self, name: &str, tensor: Tensor) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name `{name}`"
        );
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(tensor.with_grad());
        self.index.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    /// Ordered mutable access to every parameter tensor (optimizer updates).
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Insert every parameter into `g` as a gradient-tracked leaf.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let ids = self.tensors.iter().map(|t| g.leaf(t)).collect();
        BoundParams { ids }
    }

    /// Pull gradients for every parameter out of a backward-completed graph,
    /// in registration order. Parameters not on any path to the loss get zeros.
    pub fn collect_grads(&self, g: &Graph, bound: &BoundParams) -> Vec<Vec<f64>> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| {
                g.grad(bound.ids[i])
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; t.numel()])
            })
            .collect()
    }

    /// Replace stored values with `loaded`, requiring the exact same set of
    /// names with matching shapes.
    pub fn load(&mut self, loaded: Vec<(String, Tensor)>) -> Result<()> {
        if loaded.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, checkpoint has {}",
                self.tensors.len(),
                loaded.len()
            )));
        }
        for (name, t) in loaded {
            let Some(&i) = self.index.get(&name) else {
                return Err(Error::Checkpoint(format!(
                    "checkpoint tensor `{name}` has no matching parameter"
                )));
            };
            if t.shape() != self.tensors[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for `{name}`: model {:?}, checkpoint {:?}",
                    self.tensors[i].shape(),
                    t.shape()
                )));
            }
            self.tensors[i] = t.with_grad();
        }
        Ok(())
    }
}

/// Graph leaf ids for one bound pass, positionally aligned with the store.
pub struct BoundParams {
    ids: Vec<TensorId>,
}

impl BoundParams {
    pub fn id(&self, p: ParamId) -> TensorId {
        self.ids[p.0]
    }

    /// Build a binding from externally created leaf ids (e.g. a gradient
    /// checker's own leaves). Order must match registration order.
    pub fn from_ids(ids: Vec<TensorId>) -> Self {
        BoundParams { ids }
    }
}
