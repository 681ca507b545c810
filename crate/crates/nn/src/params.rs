use rand::Rng;

use fusestrata_core::seed;

use crate::ops::BnRunning;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    BnGamma,
    BnBeta,
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub role: ParamRole,
    pub value: Tensor<T>,
}

/// Trainable tensors in declaration order. Weights are drawn from
/// `U(−√(6/fan_in), √(6/fan_in))` with a stream keyed by the parameter
/// name, so initial values do not depend on declaration order or on the
/// scalar type.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    seed: u64,
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            params: Vec::new(),
        }
    }

    fn push(&mut self, name: String, role: ParamRole, value: Tensor<T>) -> ParamId {
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.params.push(Param { name, role, value });
        ParamId(self.params.len() - 1)
    }

    pub fn weight(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize) -> ParamId {
        let name = name.into();
        let limit = (6.0 / fan_in as f64).sqrt();
        let mut rng = seed::stream(self.seed, &format!("init:{name}"), 0);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(rng.random_range(-limit..limit))).collect();
        let value = Tensor::from_vec(shape, data).expect("shape product");
        self.push(name, ParamRole::Weight, value)
    }

    pub fn constant(&mut self, name: impl Into<String>, role: ParamRole, shape: &[usize], v: f64) -> ParamId {
        self.push(name.into(), role, Tensor::full(shape, T::from_f64(v)))
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

/// Batch-norm running statistics, one entry per layer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Buffers<T> {
    pub entries: Vec<(String, BnRunning<T>)>,
}

impl<T: Scalar> Buffers<T> {
    pub fn add(&mut self, name: impl Into<String>, c: usize) -> BufferId {
        self.entries.push((name.into(), BnRunning::new(c)));
        BufferId(self.entries.len() - 1)
    }

    pub fn get(&self, id: BufferId) -> &BnRunning<T> {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: BufferId) -> &mut BnRunning<T> {
        &mut self.entries[id.0].1
    }

    /// Number of stored scalars (mean and variance per channel).
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, b)| 2 * b.mean.len()).sum()
    }
}
