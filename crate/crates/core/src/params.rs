//! Named parameters, initialization, and the Adam optimizer.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F = f32> {
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
}

/// Named parameters with matching gradient accumulators. Iteration order is
/// by name, which keeps checkpoints and optimizer updates deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<F = f32> {
    params: BTreeMap<String, Param<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self { params: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Shape(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.insert(name, Param { value, grad });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param<F>> {
        self.params.get(name).ok_or_else(|| Error::UnknownId(format!("parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<F>> {
        self.params.get_mut(name).ok_or_else(|| Error::UnknownId(format!("parameter {name}")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<F>> {
        Ok(&self.get(name)?.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<F>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<F>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = F::zero());
        }
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| (k.clone(), Param { value: p.value.cast(), grad: p.grad.cast() }))
                .collect(),
        }
    }
}

/// Glorot-uniform initialization for a dense `fan_in x fan_out` weight.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut impl rand::Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    Tensor::from_fn(vec![fan_in, fan_out], |_| rng.gen_range(-a..=a))
}

/// Normal(0, std) initialization for embedding tables.
pub fn normal_table(rows: usize, cols: usize, std: f32, rng: &mut impl rand::Rng) -> Tensor {
    let dist = Normal::new(0.0f32, std).expect("std must be finite and non-negative");
    Tensor::from_fn(vec![rows, cols], |_| dist.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment buffers are keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u32,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: BTreeMap::new() }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    /// Apply one update from the accumulated gradients, then zero them.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - (beta1 as f64).powi(self.step as i32);
        let bc2 = 1.0 - (beta2 as f64).powi(self.step as i32);
        let step_size = (lr as f64 / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        for (name, p) in store.iter_mut() {
            let n = p.value.len();
            let (m, v) = self.moments.entry(name.to_string()).or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let grads = p.grad.data_mut();
            for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(grads.iter_mut()).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * *g;
                *v = beta2 * *v + (1.0 - beta2) * *g * *g;
                *w -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
                *g = 0.0;
            }
        }
    }
}
