use indexmap::IndexMap;

use super::{Real, Tensor};
use crate::error::{ensure, Error, Result};

/// Position of a parameter in its store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Role of a tensor; decides weight-decay exemption.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormGain,
    NormBias,
}

impl ParamKind {
    pub fn decay_exempt(self) -> bool {
        !matches!(self, ParamKind::Weight)
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub kind: ParamKind,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Named parameters with gradient accumulators, iterated in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: IndexMap<String, Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, kind: ParamKind, value: Tensor<T>) -> Result<ParamId> {
        ensure!(!self.params.contains_key(name), "duplicate parameter name {name:?}");
        let grad = Tensor::zeros(value.shape());
        let (idx, _) = self.params.insert_full(name.to_string(), Param { kind, value, grad });
        Ok(ParamId(idx))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.get_index_of(name).map(ParamId)
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.params.get_index(id.0).map(|(k, _)| k.as_str()).unwrap_or("")
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &[T] {
        self.params[id.0].value.data()
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [T] {
        self.params[id.0].value.data_mut()
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        self.params[id.0].grad.data()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(T::ZERO);
        }
    }

    /// Adds `buf` into the gradient accumulators.
    pub fn accumulate(&mut self, buf: &GradBuffer<T>) {
        for (p, g) in self.params.values_mut().zip(&buf.grads) {
            for (a, b) in p.grad.data_mut().iter_mut().zip(g) {
                *a += *b;
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Copies every parameter into another precision. Gradients reset.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, p) in self.iter() {
            out.insert(name, p.kind, p.value.cast())
                .expect("names unique in source store");
        }
        out
    }
}

/// Gradient scratch space aligned with a [`ParamStore`]; one per worker.
#[derive(Clone, Debug)]
pub struct GradBuffer<T> {
    pub grads: Vec<Vec<T>>,
}

impl<T: Real> GradBuffer<T> {
    pub fn for_store(store: &ParamStore<T>) -> Self {
        Self {
            grads: store.params.values().map(|p| vec![T::ZERO; p.value.len()]).collect(),
        }
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.grads[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.grads[id.0]
    }

    /// Two distinct gradient slices at once.
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut [T], &mut [T]) {
        assert_ne!(a, b, "pair_mut needs two distinct parameters");
        if a.0 < b.0 {
            let (lo, hi) = self.grads.split_at_mut(b.0);
            (&mut lo[a.0], &mut hi[0])
        } else {
            let (lo, hi) = self.grads.split_at_mut(a.0);
            (&mut hi[0], &mut lo[b.0])
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = T::ZERO);
        }
    }

    pub fn add(&mut self, other: &GradBuffer<T>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
}
