use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// A named trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub gradient: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> ParamId {
        let gradient = Tensor::zeros(tensor.shape());
        self.params.push(Parameter { name: name.to_string(), tensor, gradient });
        ParamId(self.params.len() - 1)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn filled(&mut self, name: &str, shape: &[usize], v: f64) -> ParamId {
        let mut t = Tensor::zeros(shape);
        t.data_mut().iter_mut().for_each(|x| *x = v);
        self.add(name, t)
    }

    /// Normal(0, std) initialization.
    pub fn normal<R: Rng>(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut R) -> ParamId {
        let dist = Normal::new(0.0, std).expect("finite std");
        let mut t = Tensor::zeros(shape);
        t.data_mut().iter_mut().for_each(|x| *x = dist.sample(rng));
        self.add(name, t)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].gradient
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Id of parameter `name`, which must have exactly `shape`.
    pub fn lookup(&self, name: &str, shape: &[usize]) -> crate::Result<ParamId> {
        let id = self.find(name).ok_or_else(|| crate::Error::Config(alloc::format!("missing parameter {name}")))?;
        let found = self.value(id).shape();
        if found != shape {
            return Err(crate::Error::Config(alloc::format!("parameter {name} has shape {found:?}, expected {shape:?}")));
        }
        Ok(id)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.gradient.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        let sq: f64 = self.params.iter().flat_map(|p| p.gradient.data()).map(|g| g * g).sum();
        crate::math::sqrt(sq)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }
}
