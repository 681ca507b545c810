use serde::{Deserialize, Serialize};

use fusestrata_core::Registry;

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub kind: String,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Momentum of `sgd`.
    pub momentum: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            kind: "adam".into(),
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            momentum: 0.0,
        }
    }
}

pub trait Optimizer<T: Scalar> {
    fn name(&self) -> &'static str;

    /// Applies one update from `(parameter, gradient)` pairs.
    fn step(&mut self, params: &mut ParamStore<T>, grads: &[(ParamId, &Tensor<T>)]);
}

/// Adaptive moments with the bias correction folded into the step size.
pub struct Adam<T> {
    cfg: OptimConfig,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: &OptimConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl<T: Scalar> Optimizer<T> for Adam<T> {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, params: &mut ParamStore<T>, grads: &[(ParamId, &Tensor<T>)]) {
        if self.m.len() < params.len() {
            self.m.resize(params.len(), Vec::new());
            self.v.resize(params.len(), Vec::new());
        }
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let lr_t = self.cfg.lr * (1.0 - b2.powi(self.t)).sqrt() / (1.0 - b1.powi(self.t));
        let (b1, b2, lr_t, eps) = (T::from_f64(b1), T::from_f64(b2), T::from_f64(lr_t), T::from_f64(self.cfg.eps));
        for &(id, g) in grads {
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            if m.is_empty() {
                *m = vec![T::zero(); g.numel()];
                *v = vec![T::zero(); g.numel()];
            }
            let p = params.value_mut(id);
            for i in 0..g.numel() {
                let gi = g.data[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                p.data[i] = p.data[i] - lr_t * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

/// Gradient descent with optional heavy-ball momentum.
pub struct Sgd<T> {
    lr: f64,
    momentum: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(cfg: &OptimConfig) -> Self {
        Self {
            lr: cfg.lr,
            momentum: cfg.momentum,
            velocity: Vec::new(),
        }
    }
}

impl<T: Scalar> Optimizer<T> for Sgd<T> {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn step(&mut self, params: &mut ParamStore<T>, grads: &[(ParamId, &Tensor<T>)]) {
        if self.velocity.len() < params.len() {
            self.velocity.resize(params.len(), Vec::new());
        }
        let (lr, mu) = (T::from_f64(self.lr), T::from_f64(self.momentum));
        for &(id, g) in grads {
            let vel = &mut self.velocity[id.0];
            if vel.is_empty() {
                *vel = vec![T::zero(); g.numel()];
            }
            let p = params.value_mut(id);
            for i in 0..g.numel() {
                vel[i] = mu * vel[i] - lr * g.data[i];
                p.data[i] = p.data[i] + vel[i];
            }
        }
    }
}

pub type OptimizerCtor<T> = fn(&OptimConfig) -> Box<dyn Optimizer<T>>;

fn adam<T: Scalar>(cfg: &OptimConfig) -> Box<dyn Optimizer<T>> {
    Box::new(Adam::<T>::new(cfg))
}

fn sgd<T: Scalar>(cfg: &OptimConfig) -> Box<dyn Optimizer<T>> {
    Box::new(Sgd::<T>::new(cfg))
}

pub fn optimizers<T: Scalar>() -> Registry<OptimizerCtor<T>> {
    Registry::new("optimizer")
        .with("adam", adam::<T> as OptimizerCtor<T>)
        .with("sgd", sgd::<T> as OptimizerCtor<T>)
}

pub fn build_optimizer<T: Scalar>(cfg: &OptimConfig) -> Result<Box<dyn Optimizer<T>>> {
    Ok(optimizers::<T>().get(&cfg.kind)?(cfg))
}
