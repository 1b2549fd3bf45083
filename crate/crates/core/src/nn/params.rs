//! Named parameter storage shared across forward passes.
//!
//! A fresh tape is built per sample; parameters live here and are bound onto
//! the tape as leaves. After `backward`, leaf gradients are accumulated back
//! in a fixed order, keeping serial runs bitwise reproducible.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{Tape, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct Param {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    grad: Vec<f64>,
    velocity: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, values: Vec<f64>) -> ParamId {
        assert_eq!(values.len(), rows * cols);
        let len = values.len();
        self.params.push(Param {
            name: name.into(),
            rows,
            cols,
            values,
            grad: vec![0.0; len],
            velocity: vec![0.0; len],
        });
        ParamId(self.params.len() - 1)
    }

    /// Xavier-uniform initialized matrix parameter.
    pub fn add_xavier(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let values = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.add(name, rows, cols, values)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, rows, cols, vec![0.0; rows * cols])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> (usize, usize) {
        (self.params[id.0].rows, self.params[id.0].cols)
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].values
    }

    pub fn grad_of(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    /// Parameter ids in insertion order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Iterate `(name, rows, cols, values)` in insertion order.
    pub fn iter_named(&self) -> impl Iterator<Item = (&str, usize, usize, &[f64])> {
        self.params
            .iter()
            .map(|p| (p.name.as_str(), p.rows, p.cols, p.values.as_slice()))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in &mut p.grad {
                *g = 0.0;
            }
        }
    }

    /// Number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    /// SGD with momentum on the accumulated gradients (after scaling them by
    /// `grad_scale`, typically 1/batch).
    pub fn sgd_step(&mut self, lr: f64, momentum: f64, grad_scale: f64) {
        for p in &mut self.params {
            for i in 0..p.values.len() {
                let g = p.grad[i] * grad_scale;
                p.velocity[i] = momentum * p.velocity[i] + g;
                p.values[i] -= lr * p.velocity[i];
            }
        }
    }
}

/// Tape-side record of which leaf belongs to which parameter.
#[derive(Debug, Default)]
pub struct Bindings {
    list: Vec<(ParamId, TensorId)>,
}

impl Bindings {
    pub fn new() -> Self {
        Bindings::default()
    }

    /// Bind a parameter onto the tape as a leaf.
    pub fn bind(&mut self, tape: &mut Tape, store: &ParamStore, id: ParamId) -> TensorId {
        let (r, c) = store.shape(id);
        let leaf = tape.leaf(r, c, store.values(id).to_vec());
        self.list.push((id, leaf));
        leaf
    }

    /// Accumulate leaf gradients back into the store (fixed order).
    pub fn accumulate(&self, tape: &Tape, store: &mut ParamStore) {
        for &(pid, tid) in &self.list {
            let g = tape.grad(tid);
            let dst = &mut store.params[pid.0].grad;
            for (d, s) in dst.iter_mut().zip(g) {
                *d += s;
            }
        }
    }
}
