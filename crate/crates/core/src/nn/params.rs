//! Named parameter storage shared between graphs and the optimizer.
//!
//! Values live behind `Arc` so forward passes (including concurrent
//! rollout workers holding `&ParamStore`) can reference them without
//! copying; gradients are accumulated in plain buffers owned here.

use std::collections::HashMap;
use std::sync::Arc;

use crate::scalar::Scalar;

/// Index of a parameter within its store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param<F> {
    pub name: String,
    pub value: Arc<Vec<F>>,
    pub grad: Vec<F>,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), index: HashMap::new() }
    }

    /// Register a parameter. Names must be unique; `data` is row-major.
    pub fn add(&mut self, name: &str, rows: usize, cols: usize, data: Vec<F>) -> ParamId {
        assert_eq!(data.len(), rows * cols, "shape mismatch for {name}");
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = self.params.len();
        self.index.insert(name.to_string(), id);
        self.params.push(Param {
            name: name.to_string(),
            value: Arc::new(data),
            grad: vec![F::zero(); rows * cols],
            rows,
            cols,
        });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Mutable view of a parameter's values. Clones the buffer if a graph
    /// still holds the old version (copy-on-write), so updates never alter
    /// tensors captured by live tapes.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Vec<F> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn grad(&self, id: ParamId) -> &[F] {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Vec<F> {
        &mut self.params[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            for g in &mut p.grad {
                *g = F::zero();
            }
        }
    }

    /// Euclidean norm over all gradients together.
    pub fn global_grad_norm(&self) -> F {
        let mut sum = F::zero();
        for p in &self.params {
            for &g in &p.grad {
                sum += g * g;
            }
        }
        sum.sqrt()
    }

    /// Scale all gradients so their global norm is at most `max_norm`.
    pub fn clip_global_grad_norm(&mut self, max_norm: F) -> F {
        let norm = self.global_grad_norm();
        if norm > max_norm {
            let s = max_norm / norm;
            for p in &mut self.params {
                for g in &mut p.grad {
                    *g *= s;
                }
            }
        }
        norm
    }

    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.rows * p.cols).sum()
    }
}
