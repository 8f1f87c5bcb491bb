//! Dense double-precision reverse-mode differentiation, the layers the agents
//! are built from, and the AdamW optimizer.

mod check;
mod checkpoint;
mod graph;
mod matrix;
mod nn;
mod optim;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use sha2::{Digest, Sha256};

pub use check::{finite_difference_check, FdReport};
pub use checkpoint::{Checkpoint, CheckpointError, NamedParam, CHECKPOINT_FORMAT_VERSION};
pub use graph::{argmax_rows, Gradients, Graph, Var};
pub use matrix::Matrix;
pub use nn::{Embedding, GruCell, Linear};
pub use optim::{adamw_step, AdamW, AdamWConfig, OptimizerState};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GradError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("index out of range in {0}")]
    Index(&'static str),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("numeric error: {0}")]
    Numeric(String),
}

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

fn fresh_uid() -> u64 {
    NEXT_STORE.fetch_add(1, Ordering::Relaxed)
}

/// Named parameter matrices. Names are unique and `/`-separated by module.
#[derive(Debug)]
pub struct ParamStore {
    uid: u64,
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    /// Clones get their own identity so one graph can bind both.
    fn clone(&self) -> Self {
        Self {
            uid: fresh_uid(),
            names: self.names.clone(),
            values: self.values.clone(),
        }
    }
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.values == other.values
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            uid: fresh_uid(),
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Panics on a duplicate name; parameter layout is fixed at construction.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(self.id(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform in ±1/√fan_in.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Matrix::from_vec(rows, cols, data))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Gradient of each parameter the graph used; `None` for the rest.
    pub fn collect_grads(&self, graph: &Graph, grads: &Gradients) -> Vec<Option<Matrix>> {
        self.ids()
            .map(|id| {
                graph
                    .bound_param(self, id)
                    .and_then(|v| grads.get(v).cloned())
            })
            .collect()
    }

    /// SHA-256 over names, shapes and little-endian values of every
    /// parameter whose name starts with `prefix`.
    pub fn hash_prefix(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (name, m) in self.names.iter().zip(&self.values) {
            if !name.starts_with(prefix) {
                continue;
            }
            h.update(name.as_bytes());
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.cols() as u64).to_le_bytes());
            for x in m.data() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn hash(&self) -> String {
        self.hash_prefix("")
    }

    /// Copies every parameter of `other` whose name starts with `prefix`;
    /// returns how many were copied.
    pub fn copy_prefix_from(&mut self, other: &ParamStore, prefix: &str) -> Result<usize, GradError> {
        let mut copied = 0;
        for (name, m) in other.names.iter().zip(&other.values) {
            if !name.starts_with(prefix) {
                continue;
            }
            let id = self
                .id(name)
                .ok_or_else(|| GradError::Numeric(format!("no parameter named {name}")))?;
            if self.values[id.0].shape() != m.shape() {
                return Err(GradError::Shape {
                    op: "copy_prefix_from",
                    left: self.values[id.0].shape(),
                    right: m.shape(),
                });
            }
            self.values[id.0] = m.clone();
            copied += 1;
        }
        Ok(copied)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::all_finite)
    }
}
