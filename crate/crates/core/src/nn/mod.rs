//! Parameterized layers on top of the graph engine.
//!
//! Parameters live in a [`ParamStore`] outside any graph. A forward pass opens
//! a [`Session`], which binds each parameter into a fresh [`Graph`] the first
//! time a layer touches it. After `backward`, [`Session::grads`] hands the
//! gradients back indexed by [`ParamId`].

mod checkpoint;
mod convlstm;
mod layers;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use convlstm::{BConvLstm, CellState, CellStep, ConvLstmCell, GATE_NAMES};
pub use layers::{BatchNorm, Conv2d, ConvBlock, DenseBottleneck};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Train or inference behaviour for layers that differ (batch norm).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
    /// Buffers (batch-norm running statistics) are stored and checkpointed
    /// but never optimized.
    pub trainable: bool,
}

/// Ordered, named collection of every tensor a model owns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Real> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    fn push(&mut self, name: String, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if self.find(&name).is_some() {
            return Err(Error::usage(format!("duplicate parameter name {name}")));
        }
        self.entries.push(ParamEntry {
            name,
            value,
            trainable,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        self.push(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        self.push(name.into(), value, false)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    /// Number of trainable scalars.
    pub fn count_params(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    trainable: e.trainable,
                })
                .collect(),
        }
    }

    /// Replaces every value with the same-named tensor from `other`.
    ///
    /// Fails on the first entry whose name or shape differs.
    pub fn copy_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        let n = self.len().max(other.len());
        for i in 0..n {
            match (self.entries.get(i), other.entries.get(i)) {
                (Some(mine), Some(theirs))
                    if mine.name == theirs.name && mine.value.shape() == theirs.value.shape() => {}
                (Some(mine), Some(theirs)) => {
                    return Err(Error::dim(format!(
                        "tensor {} {:?} does not match {} {:?}",
                        mine.name,
                        mine.value.shape(),
                        theirs.name,
                        theirs.value.shape()
                    )))
                }
                (Some(mine), None) => {
                    return Err(Error::dim(format!("tensor {} is missing", mine.name)))
                }
                (None, Some(theirs)) => {
                    return Err(Error::dim(format!("unexpected tensor {}", theirs.name)))
                }
                (None, None) => unreachable!(),
            }
        }
        for (mine, theirs) in self.entries.iter_mut().zip(&other.entries) {
            mine.value = theirs.value.clone();
        }
        Ok(())
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate<T>]) {
        for u in updates {
            let m = T::from_f64_lossy(u.momentum);
            let keep = T::one() - m;
            let n = u.count as f64;
            let bessel = T::from_f64_lossy(if u.count > 1 { n / (n - 1.0) } else { 1.0 });
            for (r, &b) in self.get_mut(u.running_mean).data_mut().iter_mut().zip(&u.mean) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in self.get_mut(u.running_var).data_mut().iter_mut().zip(&u.var) {
                *r = keep * *r + m * b * bessel;
            }
        }
    }
}

/// Pending running-statistics update produced by a train-mode forward pass.
#[derive(Clone, Debug)]
pub struct StatUpdate<T> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
    pub momentum: f64,
}

/// One forward (and optionally backward) pass over a parameter store.
pub struct Session<'s, T: Real> {
    pub graph: Graph<T>,
    store: &'s ParamStore<T>,
    bound: Vec<Option<Var>>,
    mode: Mode,
    updates: Vec<StatUpdate<T>>,
}

impl<'s, T: Real> Session<'s, T> {
    pub fn new(store: &'s ParamStore<T>, mode: Mode) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bound: vec![None; store.len()],
            mode,
            updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    /// Graph handle of a parameter, recording it on first use.
    pub fn var(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = if self.store.is_trainable(id) {
            self.graph.param(t)
        } else {
            self.graph.constant(t)
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.graph.constant(t)
    }

    pub(crate) fn push_update(&mut self, u: StatUpdate<T>) {
        self.updates.push(u);
    }

    pub fn stat_updates(&self) -> &[StatUpdate<T>] {
        &self.updates
    }

    pub fn into_stat_updates(self) -> Vec<StatUpdate<T>> {
        self.updates
    }

    /// Gradient of every store entry, in store order. Entries that were not
    /// bound, are not trainable, or do not reach the loss are `None`.
    pub fn grads(&self) -> Vec<Option<Tensor<T>>> {
        self.bound
            .iter()
            .map(|b| b.and_then(|v| self.graph.grad(v).cloned()))
            .collect()
    }
}

/// Uniform Glorot initialisation for a `[c_out, c_in, kh, kw]` kernel.
pub fn glorot_kernel<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: [usize; 4]) -> Tensor<T> {
    let [c_out, c_in, kh, kw] = shape;
    let fan_in = (c_in * kh * kw) as f64;
    let fan_out = (c_out * kh * kw) as f64;
    let limit = (6.0 / (fan_in + fan_out)).sqrt();
    let data = (0..c_out * c_in * kh * kw)
        .map(|_| T::from_f64_lossy(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::from_vec(&shape, data).expect("shape")
}
