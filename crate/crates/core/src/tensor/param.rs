use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Gradients, Graph, Tensor, TensorError};
use crate::seed::derive_seed_str;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal(0, std) resampled until within two standard deviations.
    TruncatedNormal {
        std: f64,
    },
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    XavierUniform {
        fan_in: usize,
        fan_out: usize,
    },
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub init: Init,
}

/// Named parameter storage with unique names.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

fn sample_init(init: Init, len: usize, seed: u64) -> Vec<f64> {
    match init {
        Init::Zeros => vec![0.0; len],
        Init::Ones => vec![1.0; len],
        Init::TruncatedNormal { std } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..len)
                .map(|_| loop {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    if z.abs() <= 2.0 {
                        break z * std;
                    }
                })
                .collect()
        }
        Init::XavierUniform { fan_in, fan_out } => {
            let a = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..len).map(|_| rng.random_range(-a..=a)).collect()
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter, seeding its initializer from `(seed, name)`.
    pub fn register(&mut self, name: &str, shape: &[usize], init: Init, seed: u64) -> Result<ParamId, TensorError> {
        if self.by_name.contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        let len = shape.iter().product();
        let values = sample_init(init, len, derive_seed_str(seed, name));
        let tensor = Tensor::from_vec(shape, values)?.with_requires_grad(true);
        let id = ParamId(self.params.len());
        self.params.push(Parameter { name: name.to_string(), tensor, init });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.tensor(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    /// Adds `scale *` the graph gradient of every parameter leaf into storage.
    pub fn accumulate(&mut self, graph: &Graph, grads: &Gradients, scale: f64) {
        for (id, var) in graph.param_nodes() {
            if let Some(g) = grads.get(var) {
                self.params[id.0].tensor.accumulate_grad(g, scale);
            }
        }
    }

    /// Overwrites a parameter's values; shapes must agree.
    pub fn set_values(&mut self, name: &str, shape: &[usize], values: &[f64]) -> Result<(), TensorError> {
        let id = self.id(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        let t = &mut self.params[id.0].tensor;
        if t.shape() != shape {
            return Err(TensorError::ShapeMismatch { op: "set_values", lhs: t.shape().to_vec(), rhs: shape.to_vec() });
        }
        t.values_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.iter().filter_map(|p| p.tensor.grad()).flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }
}
