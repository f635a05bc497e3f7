use std::collections::HashMap;

use super::{DenseMatrix, Real};
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable matrices with their gradients and Adadelta accumulators.
///
/// The four matrices of an entry always share one shape. Entries keep
/// insertion order, which is the canonical order used for checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore<F> {
    names: Vec<String>,
    index: HashMap<String, usize>,
    values: Vec<DenseMatrix<F>>,
    grads: Vec<DenseMatrix<F>>,
    sq_grad_avg: Vec<DenseMatrix<F>>,
    sq_update_avg: Vec<DenseMatrix<F>>,
}

/// Mutable view of every matrix belonging to one parameter.
pub struct EntryMut<'a, F> {
    pub value: &'a mut DenseMatrix<F>,
    pub grad: &'a mut DenseMatrix<F>,
    pub sq_grad_avg: &'a mut DenseMatrix<F>,
    pub sq_update_avg: &'a mut DenseMatrix<F>,
}

impl<F: Real> ParameterStore<F> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            index: HashMap::new(),
            values: Vec::new(),
            grads: Vec::new(),
            sq_grad_avg: Vec::new(),
            sq_update_avg: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: DenseMatrix<F>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidInput(format!("duplicate parameter {name}")));
        }
        let (r, c) = value.shape();
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        self.grads.push(DenseMatrix::zeros(r, c));
        self.sq_grad_avg.push(DenseMatrix::zeros(r, c));
        self.sq_update_avg.push(DenseMatrix::zeros(r, c));
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(DenseMatrix::len).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::InvalidInput(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &DenseMatrix<F> {
        &self.values[id.0]
    }

    #[inline]
    pub fn value_mut(&mut self, id: ParamId) -> &mut DenseMatrix<F> {
        &mut self.values[id.0]
    }

    #[inline]
    pub fn grad(&self, id: ParamId) -> &DenseMatrix<F> {
        &self.grads[id.0]
    }

    #[inline]
    pub fn grad_mut(&mut self, id: ParamId) -> &mut DenseMatrix<F> {
        &mut self.grads[id.0]
    }

    pub fn sq_grad_avg(&self, id: ParamId) -> &DenseMatrix<F> {
        &self.sq_grad_avg[id.0]
    }

    pub fn sq_update_avg(&self, id: ParamId) -> &DenseMatrix<F> {
        &self.sq_update_avg[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> EntryMut<'_, F> {
        EntryMut {
            value: &mut self.values[id.0],
            grad: &mut self.grads[id.0],
            sq_grad_avg: &mut self.sq_grad_avg[id.0],
            sq_update_avg: &mut self.sq_update_avg[id.0],
        }
    }

    /// Values for reading alongside gradients for writing.
    pub fn split_mut(&mut self) -> (&[DenseMatrix<F>], &mut [DenseMatrix<F>]) {
        (&self.values, &mut self.grads)
    }

    pub fn values(&self) -> &[DenseMatrix<F>] {
        &self.values
    }

    pub fn grads(&self) -> &[DenseMatrix<F>] {
        &self.grads
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(F::zero()));
    }

    pub fn grad_norm(&self) -> F {
        self.grads
            .iter()
            .flat_map(|g| g.as_slice())
            .fold(F::zero(), |s, &g| s + g * g)
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: F) {
        for g in &mut self.grads {
            g.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Copies values for every name present in both stores.
    pub fn copy_shared_from(&mut self, other: &ParameterStore<F>) -> Result<usize> {
        let mut copied = 0;
        for (i, name) in self.names.iter().enumerate() {
            if let Some(j) = other.index.get(name) {
                if self.values[i].shape() != other.values[*j].shape() {
                    return Err(Error::shape(format!("parameter {name} differs in shape")));
                }
                self.values[i] = other.values[*j].clone();
                copied += 1;
            }
        }
        Ok(copied)
    }

    /// Same parameters converted to another element type. Accumulators and
    /// gradients start at zero.
    pub fn cast<G: Real>(&self) -> ParameterStore<G> {
        let mut out = ParameterStore::new();
        for (name, v) in self.names.iter().zip(&self.values) {
            out.insert(name.clone(), v.cast())
                .expect("names are unique in the source store");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_are_shared_and_names_unique() {
        let mut s = ParameterStore::<f64>::new();
        let id = s.insert("w", DenseMatrix::zeros(2, 3)).unwrap();
        assert!(s.insert("w", DenseMatrix::zeros(1, 1)).is_err());
        let e = s.entry_mut(id);
        assert_eq!(e.value.shape(), e.grad.shape());
        assert_eq!(e.sq_grad_avg.shape(), e.sq_update_avg.shape());
        assert_eq!(s.require("w").unwrap(), id);
        assert!(s.require("nope").is_err());
    }
}
