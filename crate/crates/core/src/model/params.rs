use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::checkpoint::{read_container, write_container, NamedTensors};
use crate::numerics::{Graph, Scalar, Tensor, Var};

/// Named parameter tensors. Names are `/`-separated paths whose first
/// component is the subnetwork (`backbone`, `fpn`, `fusion`, `head`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

/// Outcome of mapping a checkpoint onto a parameter store.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// In the file but not in the model.
    pub unexpected: Vec<String>,
    /// In the model but not in the file; these keep their current values.
    pub missing: Vec<String>,
    /// Present in both with different shapes; not loaded.
    pub shape_mismatch: Vec<String>,
}

impl LoadReport {
    pub fn is_complete(&self) -> bool {
        self.unexpected.is_empty() && self.missing.is_empty() && self.shape_mismatch.is_empty()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn as_named(&self) -> &NamedTensors<T> {
        &self.tensors
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_container(path, &self.tensors)
    }

    /// Copies every tensor of `other` whose name and shape match.
    pub fn load_from(&mut self, other: &NamedTensors<T>) -> LoadReport {
        let mut report = LoadReport::default();
        for (name, t) in other {
            match self.tensors.get_mut(name) {
                None => report.unexpected.push(name.clone()),
                Some(dst) if dst.shape() != t.shape() => report.shape_mismatch.push(name.clone()),
                Some(dst) => {
                    *dst = t.clone();
                    report.loaded.push(name.clone());
                }
            }
        }
        report.missing = self.tensors.keys().filter(|k| !other.contains_key(*k)).cloned().collect();
        report
    }

    pub fn load(&mut self, path: &Path) -> Result<LoadReport> {
        let file = read_container::<T>(path)?;
        Ok(self.load_from(&file))
    }

    /// Registers every tensor as a differentiable leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|(k, t)| (k.clone(), g.param(t.clone()))).collect(),
        }
    }

    /// Registers every tensor as a constant leaf, for inference.
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|(k, t)| (k.clone(), g.input(t.clone()))).collect(),
        }
    }

    /// Subset whose names start with `prefix`.
    pub fn filter_prefix(&self, prefix: &str) -> NamedTensors<T> {
        self.tensors
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

/// Graph leaves of a [`ParamStore`], looked up by name.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter {name:?} is not part of the model")))
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Deterministic parameter initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// He-normal conv kernel `[out, in, k, k]` scaled by `gain`.
    pub fn conv<T: Scalar>(&mut self, out: usize, inp: usize, k: usize, gain: f64) -> Tensor<T> {
        let fan_in = (inp * k * k) as f64;
        self.normal(&[out, inp, k, k], gain * (2.0 / fan_in).sqrt())
    }

    pub fn normal<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let shape = shape.to_vec();
        if std == 0.0 {
            return Tensor::zeros(&shape);
        }
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(&shape, |_| T::lit(dist.sample(&mut self.rng)))
    }
}
