use std::collections::{BTreeMap, HashMap};

use super::{Scalar, Tensor};
use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors, kept in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(config_err!("duplicate parameter name {name}"));
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    pub fn total_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// Gradient of one parameter. Embedding tables receive row-sparse gradients.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamGrad<T> {
    Dense(Tensor<T>),
    Rows {
        shape: Vec<usize>,
        rows: BTreeMap<usize, Vec<T>>,
    },
}

impl<T: Scalar> ParamGrad<T> {
    pub fn to_dense(&self) -> Tensor<T> {
        match self {
            ParamGrad::Dense(t) => t.clone(),
            ParamGrad::Rows { shape, rows } => {
                let mut t = Tensor::zeros(shape);
                let cols = shape[1];
                for (&r, vals) in rows {
                    t.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(vals);
                }
                t
            }
        }
    }

    fn add_into(&self, dst: &mut Tensor<T>) {
        match self {
            ParamGrad::Dense(t) => dst.add_assign(t),
            ParamGrad::Rows { shape, rows } => {
                let cols = shape[1];
                for (&r, vals) in rows {
                    for (d, &v) in dst.data_mut()[r * cols..(r + 1) * cols].iter_mut().zip(vals) {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

/// Gradients produced by one backward pass, keyed by parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub(crate) grads: BTreeMap<ParamId, ParamGrad<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&ParamGrad<T>> {
        self.grads.get(&id)
    }

    /// Dense gradient for `id`; zeros when the parameter was unreachable.
    pub fn dense(&self, id: ParamId, store: &ParamStore<T>) -> Tensor<T> {
        match self.grads.get(&id) {
            Some(g) => g.to_dense(),
            None => Tensor::zeros(store.get(id).shape()),
        }
    }

    /// One `(name, gradient)` entry per parameter in the store.
    pub fn named(&self, store: &ParamStore<T>) -> Vec<(String, Tensor<T>)> {
        store
            .ids()
            .map(|id| (store.name(id).to_string(), self.dense(id, store)))
            .collect()
    }
}

/// Dense running sum of gradients over many backward passes, one tensor per
/// parameter. Additions happen in call order, so a fixed call order gives a
/// bitwise-reproducible total.
#[derive(Debug, Clone, PartialEq)]
pub struct GradAccumulator<T> {
    totals: Vec<Tensor<T>>,
}

impl<T: Scalar> GradAccumulator<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        GradAccumulator {
            totals: store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn add(&mut self, grads: &Gradients<T>) {
        for (id, g) in &grads.grads {
            g.add_into(&mut self.totals[id.0]);
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.totals {
            for x in t.data_mut() {
                *x = *x * factor;
            }
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.totals[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.totals[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.totals
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.totals
    }

    pub fn into_tensors(self) -> Vec<Tensor<T>> {
        self.totals
    }
}
