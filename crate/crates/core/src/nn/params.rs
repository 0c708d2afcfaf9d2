//! Named trainable tensors with gradient and RMSProp accumulators, plus the
//! checkpoint format.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub sq_avg: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    /// Number of optimizer steps applied.
    pub steps: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let (r, c) = value.shape();
        self.params.push(Param {
            name: name.into(),
            value,
            grad: Tensor::zeros(r, c),
            sq_avg: Tensor::zeros(r, c),
        });
        ParamId(self.params.len() - 1)
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.add(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        self.params[id.0].grad.add_assign(g);
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            optimizer_steps: self.steps,
            tensors: self
                .params
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    rows: p.value.rows,
                    cols: p.value.cols,
                    values: p.value.data.clone(),
                    rmsprop_sq_avg: p.sq_avg.data.clone(),
                })
                .collect(),
        }
    }

    /// Overwrites values and optimizer state from a checkpoint; names and
    /// shapes must match this store.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.tensors.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model has {}",
                ckpt.tensors.len(),
                self.params.len()
            )));
        }
        for (p, t) in self.params.iter_mut().zip(&ckpt.tensors) {
            if p.name != t.name {
                return Err(Error::UnknownParam(t.name.clone()));
            }
            if p.value.shape() != (t.rows, t.cols)
                || t.values.len() != t.rows * t.cols
                || t.rmsprop_sq_avg.len() != t.rows * t.cols
            {
                return Err(Error::Shape {
                    op: "load_checkpoint",
                    lhs: p.value.shape(),
                    rhs: (t.rows, t.cols),
                });
            }
            p.value.data.clone_from(&t.values);
            p.sq_avg.data.clone_from(&t.rmsprop_sq_avg);
            p.grad.fill(0.0);
        }
        self.steps = ckpt.optimizer_steps;
        Ok(())
    }
}

pub const CHECKPOINT_FORMAT: &str = "gbe-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub rmsprop_sq_avg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub optimizer_steps: u64,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unknown checkpoint format {}", c.format)));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn checkpoint_roundtrip_is_bit_exact(
            vals in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 6),
            sq in proptest::collection::vec(0.0f64..1e300, 6),
        ) {
            let mut store = ParamStore::new();
            let id = store.add("w", Tensor::from_vec(2, 3, vals.clone()));
            store.get_mut(id).sq_avg = Tensor::from_vec(2, 3, sq.clone());
            store.steps = 17;
            let json = store.to_checkpoint().to_json().unwrap();
            let ckpt = Checkpoint::from_json(&json).unwrap();
            let mut other = ParamStore::new();
            other.add("w", Tensor::zeros(2, 3));
            other.load_checkpoint(&ckpt).unwrap();
            for (a, b) in other.value(id).data.iter().zip(&vals) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            for (a, b) in other.get(id).sq_avg.data.iter().zip(&sq) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(other.steps, 17);
        }
    }

    #[test]
    fn load_rejects_mismatch() {
        let mut a = ParamStore::new();
        a.add("w", Tensor::zeros(2, 2));
        let ckpt = a.to_checkpoint();
        let mut b = ParamStore::new();
        b.add("v", Tensor::zeros(2, 2));
        assert!(b.load_checkpoint(&ckpt).is_err());
        let mut c = ParamStore::new();
        c.add("w", Tensor::zeros(1, 2));
        assert!(c.load_checkpoint(&ckpt).is_err());
    }
}
