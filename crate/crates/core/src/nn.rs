//! Named parameter storage, initialization and small layer helpers.

use std::collections::BTreeMap;
use std::hash::Hasher;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// All learnable tensors of a model, ordered by name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::arg(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::arg(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries.
    pub fn n_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Moves every tensor of `other` into `self`, replacing name clashes.
    pub fn extend(&mut self, other: ParamStore) {
        self.tensors.extend(other.tensors);
    }

    /// Concatenation of all entries in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .values()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Inverse of [`ParamStore::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_scalars() {
            return Err(Error::shape(
                "assign_flat",
                format!("{} values for {} parameters", flat.len(), self.n_scalars()),
            ));
        }
        let mut off = 0;
        for t in self.tensors.values_mut() {
            let len = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(())
    }

    /// Registers every tensor as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
            .collect();
        Bound { vars }
    }

    /// Binds parameters as slices of one flat `1 x n_scalars` variable, so a
    /// gradient check can perturb all of them through a single input.
    pub fn bind_flat(&self, tape: &mut Tape, flat: Var) -> Result<Bound> {
        let mut vars = BTreeMap::new();
        let mut off = 0;
        for (k, v) in &self.tensors {
            let s = tape.slice_cols(flat, off, v.len())?;
            let r = tape.reshape(s, v.rows(), v.cols())?;
            vars.insert(k.clone(), r);
            off += v.len();
        }
        Ok(Bound { vars })
    }

    /// FNV-1a hash of names, shapes and little-endian values.
    pub fn content_hash(&self) -> u64 {
        let mut h = fnv::FnvHasher::default();
        for (k, v) in &self.tensors {
            h.write(k.as_bytes());
            h.write(&(v.rows() as u64).to_le_bytes());
            h.write(&(v.cols() as u64).to_le_bytes());
            for x in v.data() {
                h.write(&x.to_le_bytes());
            }
        }
        h.finish()
    }
}

/// Tape variables for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::arg(format!("missing parameter {name}")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    /// Gradient for every bound parameter; unreached ones are zero.
    pub fn collect(&self, grads: &Gradients, store: &ParamStore) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for (k, &v) in &self.vars {
            out.insert(k.clone(), grads.wrt(v, store.get(k)?.shape()));
        }
        Ok(out)
    }
}

/// Uniform entries on `[-bound, bound]`.
pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}

/// Weight `fan_in x fan_out` and bias `1 x fan_out`, both uniform on `+-1/sqrt(fan_in)`.
pub fn init_linear(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> (Tensor, Tensor) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (
        uniform(rng, fan_in, fan_out, bound),
        uniform(rng, 1, fan_out, bound),
    )
}

/// Inserts `{prefix}.w` and `{prefix}.b` for a dense layer.
pub fn add_linear(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, fan_in: usize, fan_out: usize) {
    let (w, b) = init_linear(rng, fan_in, fan_out);
    store.insert(format!("{prefix}.w"), w);
    store.insert(format!("{prefix}.b"), b);
}

/// `x W + b` using `{prefix}.w` and `{prefix}.b`.
pub fn linear(tape: &mut Tape, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let y = tape.matmul(x, p.var(&format!("{prefix}.w"))?)?;
    tape.add_row(y, p.var(&format!("{prefix}.b"))?)
}
