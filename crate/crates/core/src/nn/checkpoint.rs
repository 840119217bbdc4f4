//! Versioned JSON parameter checkpoints: an ordered list of
//! (name, shape, values). Floats round-trip bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;

pub const CHECKPOINT_FORMAT: &str = "leosat-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Model family, e.g. "dlpdn", "dlpcn", "vae".
    pub kind: String,
    /// Architecture and training metadata needed to rebuild the model.
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_store(kind: &str, meta: serde_json::Value, store: &ParamStore) -> Self {
        let tensors = store
            .entries()
            .iter()
            .map(|e| NamedTensor {
                name: e.name.clone(),
                shape: e.tensor.shape().to_vec(),
                values: e.tensor.data().to_vec(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            meta,
            tensors,
        }
    }

    /// Copy values into a store built with the same architecture.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for (t, e) in self.tensors.iter().zip(store.entries_mut()) {
            if t.name != e.name || t.shape != e.tensor.shape() {
                return Err(Error::Format(format!(
                    "tensor `{}` {:?} does not match model tensor `{}` {:?}",
                    t.name,
                    t.shape,
                    e.name,
                    e.tensor.shape()
                )));
            }
            if t.values.len() != e.tensor.len() {
                return Err(Error::Format(format!("tensor `{}` has wrong value count", t.name)));
            }
            e.tensor.data_mut().copy_from_slice(&t.values);
        }
        Ok(())
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!("expected a `{kind}` checkpoint, found `{}`", self.kind)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        if self.tensors.iter().any(|t| t.values.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("checkpoint tensors".into()));
        }
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("not a checkpoint (format `{}`)", c.format)));
        }
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", c.version)));
        }
        for t in &c.tensors {
            if t.shape.iter().product::<usize>() != t.values.len() {
                return Err(Error::Format(format!("tensor `{}` shape/value mismatch", t.name)));
            }
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
    use crate::nn::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let vals: Vec<f64> = (0..64).map(|_| rng.gen::<f64>() * 1e-7 - 3e5 * rng.gen::<f64>()).collect();
        store.add("a", Tensor::new(vec![8, 8], vals.clone()).unwrap());
        store.add_buffer("b", Tensor::new(vec![2], vec![f64::MIN_POSITIVE, -0.1 + 0.2]).unwrap());
        let ck = Checkpoint::from_store("test", serde_json::json!({"m": 8}), &store);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        let mut other = store.clone();
        other.entries_mut()[0].tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        back.load_into(&mut other).unwrap();
        for (x, y) in store.entries().iter().zip(other.entries()) {
            let bx: Vec<u64> = x.tensor.data().iter().map(|v| v.to_bits()).collect();
            let by: Vec<u64> = y.tensor.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bx, by);
        }
    }

    #[test]
    fn mismatched_architecture_rejected() {
        let mut a = ParamStore::new();
        a.add("w", Tensor::zeros(&[2, 2]));
        let ck = Checkpoint::from_store("x", serde_json::Value::Null, &a);
        let mut b = ParamStore::new();
        b.add("w", Tensor::zeros(&[4]));
        assert!(ck.load_into(&mut b).is_err());
    }
}
