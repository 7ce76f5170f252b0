use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// A trainable tensor plus its Adam moment estimates.
#[derive(Clone, Debug)]
pub struct Param {
    pub tensor: Tensor,
    pub(crate) m: Vec<f32>,
    pub(crate) v: Vec<f32>,
}

impl Param {
    fn new(tensor: Tensor) -> Self {
        let n = tensor.numel();
        Self {
            tensor,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn first_moment(&self) -> &[f32] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f32] {
        &self.v
    }
}

/// Named parameters in a stable (sorted) order, with optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.params.insert(name.into(), Param::new(tensor));
    }

    pub(crate) fn insert_with_state(
        &mut self,
        name: String,
        tensor: Tensor,
        m: Vec<f32>,
        v: Vec<f32>,
    ) -> Result<()> {
        if m.len() != tensor.numel() || v.len() != tensor.numel() {
            return Err(Error::Format(format!(
                "optimizer state for `{name}` does not match its shape"
            )));
        }
        self.params.insert(name, Param { tensor, m, v });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|p| &mut p.tensor)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.tensor.numel()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn set_grad(&mut self, name: &str, grad: Vec<f32>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| invalid(format!("unknown parameter `{name}`")))?;
        p.tensor.set_grad(grad)
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.tensor.clear_grad();
        }
    }

    /// One bias-corrected Adam update over every parameter. Every parameter
    /// must carry a gradient; gradients are cleared afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some((name, _)) = self.params.iter().find(|(_, p)| p.tensor.grad().is_none()) {
            return Err(Error::MissingGrad(name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for p in self.params.values_mut() {
            let grad = p.tensor.grad.take().expect("checked above");
            let data = p.tensor.data_mut();
            for i in 0..data.len() {
                let g = grad[i];
                p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
                p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
                let mhat = p.m[i] / bc1;
                let vhat = p.v[i] / bc2;
                data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
