//! Execution backends. The network is written once against [`Backend`];
//! [`Graph`] records a tape for training, [`Eager`] computes values only
//! and frees each intermediate as soon as its last handle is dropped.

use std::rc::Rc;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::Graph;
use crate::ops::{self, BnRunning, PoolSpec, BN_EPS, BN_MOMENTUM};
use crate::params::ParamId;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value held by a backend.
#[derive(Debug)]
pub struct Val<T>(Repr<T>);

#[derive(Debug)]
enum Repr<T> {
    Node(usize),
    Owned(Rc<Tensor<T>>),
}

impl<T> Clone for Val<T> {
    fn clone(&self) -> Self {
        match &self.0 {
            Repr::Node(i) => Val(Repr::Node(*i)),
            Repr::Owned(t) => Val(Repr::Owned(t.clone())),
        }
    }
}

impl<T> Val<T> {
    pub(crate) fn node(i: usize) -> Self {
        Val(Repr::Node(i))
    }

    pub(crate) fn node_index(&self) -> Option<usize> {
        match self.0 {
            Repr::Node(i) => Some(i),
            Repr::Owned(_) => None,
        }
    }

    fn owned(t: Tensor<T>) -> Self {
        Val(Repr::Owned(Rc::new(t)))
    }

    fn tensor(&self) -> &Tensor<T> {
        match &self.0 {
            Repr::Owned(t) => t,
            Repr::Node(_) => panic!("graph value used with the eager backend"),
        }
    }
}

pub trait Backend<T: Scalar> {
    fn training(&self) -> bool;

    /// Labels subsequently created values (used in diagnostics).
    fn set_scope(&mut self, scope: &str);

    fn constant(&mut self, t: Tensor<T>) -> Val<T>;
    fn param(&mut self, id: ParamId, name: &str, value: &Tensor<T>) -> Val<T>;
    fn value<'a>(&'a self, v: &'a Val<T>) -> &'a Tensor<T>;

    fn conv3d(&mut self, x: &Val<T>, w: &Val<T>, b: Option<&Val<T>>) -> Result<Val<T>>;
    fn depthwise_conv3d(&mut self, x: &Val<T>, w: &Val<T>, b: Option<&Val<T>>) -> Result<Val<T>>;

    /// Batch statistics (updating `running`) in training mode, running
    /// statistics otherwise.
    fn batchnorm3d(&mut self, x: &Val<T>, gamma: &Val<T>, beta: &Val<T>, running: &mut BnRunning<T>)
        -> Result<Val<T>>;

    fn elu(&mut self, x: &Val<T>) -> Val<T>;
    fn sigmoid(&mut self, x: &Val<T>) -> Val<T>;

    /// Inverted dropout in training mode, identity otherwise.
    fn dropout(&mut self, x: &Val<T>, rate: f64, rng: &mut ChaCha8Rng) -> Result<Val<T>>;

    fn maxpool3d(&mut self, x: &Val<T>, spec: PoolSpec) -> Result<Val<T>>;
    fn upsample3d(&mut self, x: &Val<T>) -> Result<Val<T>>;
    fn add(&mut self, a: &Val<T>, b: &Val<T>) -> Result<Val<T>>;
    fn concat(&mut self, parts: &[Val<T>]) -> Result<Val<T>>;

    /// Mean binary cross-entropy as a scalar value.
    fn bce(&mut self, pred: &Val<T>, target: &Val<T>) -> Result<Val<T>>;
    /// Sum of scalar values.
    fn sum(&mut self, xs: &[Val<T>]) -> Result<Val<T>>;
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(crate::error::NnError::DropoutRate(rate))
    }
}

fn scalar_sum<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if let Some(p) = parts.iter().find(|p| p.numel() != 1) {
        return crate::error::shape_err(format!("sum of non-scalar {:?}", p.shape));
    }
    Ok(Tensor::scalar(parts.iter().map(|p| p.data[0]).sum()))
}

impl<T: Scalar> Backend<T> for Graph<T> {
    fn training(&self) -> bool {
        self.training
    }

    fn set_scope(&mut self, scope: &str) {
        self.scope = Arc::from(scope);
    }

    fn constant(&mut self, t: Tensor<T>) -> Val<T> {
        self.leaf(t, false)
    }

    fn param(&mut self, id: ParamId, name: &str, value: &Tensor<T>) -> Val<T> {
        self.param_leaf(id, name, value)
    }

    fn value<'a>(&'a self, v: &'a Val<T>) -> &'a Tensor<T> {
        Graph::value(self, v)
    }

    fn conv3d(&mut self, x: &Val<T>, w: &Val<T>, b: Option<&Val<T>>) -> Result<Val<T>> {
        let out = ops::conv3d(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let inputs: Vec<&Val<T>> = [x, w].into_iter().chain(b).collect();
        Ok(self.record(Box::new(ops::Conv3dOp), &inputs, out))
    }

    fn depthwise_conv3d(&mut self, x: &Val<T>, w: &Val<T>, b: Option<&Val<T>>) -> Result<Val<T>> {
        let out = ops::depthwise_conv3d(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let inputs: Vec<&Val<T>> = [x, w].into_iter().chain(b).collect();
        Ok(self.record(Box::new(ops::DepthwiseConv3dOp), &inputs, out))
    }

    fn batchnorm3d(
        &mut self,
        x: &Val<T>,
        gamma: &Val<T>,
        beta: &Val<T>,
        running: &mut BnRunning<T>,
    ) -> Result<Val<T>> {
        let (xt, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let (out, op) = if self.training {
            let (out, xhat, inv_std) = ops::batchnorm3d_train(xt, g, b, running, BN_EPS, BN_MOMENTUM)?;
            (
                out,
                ops::BatchNorm3dOp {
                    xhat,
                    inv_std,
                    batch_stats: true,
                },
            )
        } else {
            let out = ops::batchnorm3d_infer(xt, g, b, running, BN_EPS)?;
            let (xhat, inv_std) = ops::bn_infer_saved(xt, running, BN_EPS);
            (
                out,
                ops::BatchNorm3dOp {
                    xhat,
                    inv_std,
                    batch_stats: false,
                },
            )
        };
        Ok(self.record(Box::new(op), &[x, gamma, beta], out))
    }

    fn elu(&mut self, x: &Val<T>) -> Val<T> {
        let out = ops::elu(self.value(x));
        self.record(Box::new(ops::EluOp), &[x], out)
    }

    fn sigmoid(&mut self, x: &Val<T>) -> Val<T> {
        let out = ops::sigmoid(self.value(x));
        self.record(Box::new(ops::SigmoidOp), &[x], out)
    }

    fn dropout(&mut self, x: &Val<T>, rate: f64, rng: &mut ChaCha8Rng) -> Result<Val<T>> {
        check_rate(rate)?;
        if !self.training || rate == 0.0 {
            return Ok(x.clone());
        }
        let (out, mask) = ops::dropout(self.value(x), rate, rng)?;
        Ok(self.record(Box::new(ops::DropoutOp { mask }), &[x], out))
    }

    fn maxpool3d(&mut self, x: &Val<T>, spec: PoolSpec) -> Result<Val<T>> {
        let (out, argmax) = ops::maxpool3d(self.value(x), spec)?;
        Ok(self.record(Box::new(ops::MaxPool3dOp { argmax }), &[x], out))
    }

    fn upsample3d(&mut self, x: &Val<T>) -> Result<Val<T>> {
        let out = ops::upsample3d(self.value(x))?;
        Ok(self.record(Box::new(ops::Upsample3dOp), &[x], out))
    }

    fn add(&mut self, a: &Val<T>, b: &Val<T>) -> Result<Val<T>> {
        let out = ops::add(self.value(a), self.value(b))?;
        Ok(self.record(Box::new(ops::AddOp), &[a, b], out))
    }

    fn concat(&mut self, parts: &[Val<T>]) -> Result<Val<T>> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|p| self.value(p)).collect();
        let out = ops::concat_channels(&tensors)?;
        let inputs: Vec<&Val<T>> = parts.iter().collect();
        Ok(self.record(Box::new(ops::ConcatOp), &inputs, out))
    }

    fn bce(&mut self, pred: &Val<T>, target: &Val<T>) -> Result<Val<T>> {
        let v = ops::bce(self.value(pred), self.value(target))?;
        Ok(self.record(Box::new(ops::BceOp), &[pred, target], Tensor::scalar(v)))
    }

    fn sum(&mut self, xs: &[Val<T>]) -> Result<Val<T>> {
        let out = scalar_sum(&xs.iter().map(|x| self.value(x)).collect::<Vec<_>>())?;
        let inputs: Vec<&Val<T>> = xs.iter().collect();
        Ok(self.record(Box::new(ops::SumOp), &inputs, out))
    }
}

/// Forward-only backend.
pub struct Eager {
    batch_stats: bool,
    dropout: bool,
    momentum: f64,
}

impl Eager {
    /// Training mode (batch statistics and dropout) or inference mode.
    pub fn new(training: bool) -> Self {
        Self {
            batch_stats: training,
            dropout: training,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn inference() -> Self {
        Self::new(false)
    }

    /// Batch statistics without dropout; running statistics are updated
    /// with the given momentum.
    pub fn recalibration(momentum: f64) -> Self {
        Self {
            batch_stats: true,
            dropout: false,
            momentum,
        }
    }
}

impl<T: Scalar> Backend<T> for Eager {
    fn training(&self) -> bool {
        self.batch_stats
    }

    fn set_scope(&mut self, _scope: &str) {}

    fn constant(&mut self, t: Tensor<T>) -> Val<T> {
        Val::owned(t)
    }

    fn param(&mut self, _id: ParamId, _name: &str, value: &Tensor<T>) -> Val<T> {
        Val::owned(value.clone())
    }

    fn value<'a>(&'a self, v: &'a Val<T>) -> &'a Tensor<T> {
        v.tensor()
    }

    fn conv3d(&mut self, x: &Val<T>, w: &Val<T>, b: Option<&Val<T>>) -> Result<Val<T>> {
        ops::conv3d(x.tensor(), w.tensor(), b.map(|b| b.tensor())).map(Val::owned)
    }

    fn depthwise_conv3d(&mut self, x: &Val<T>, w: &Val<T>, b: Option<&Val<T>>) -> Result<Val<T>> {
        ops::depthwise_conv3d(x.tensor(), w.tensor(), b.map(|b| b.tensor())).map(Val::owned)
    }

    fn batchnorm3d(
        &mut self,
        x: &Val<T>,
        gamma: &Val<T>,
        beta: &Val<T>,
        running: &mut BnRunning<T>,
    ) -> Result<Val<T>> {
        let out = if self.batch_stats {
            ops::batchnorm3d_train(x.tensor(), gamma.tensor(), beta.tensor(), running, BN_EPS, self.momentum)?.0
        } else {
            ops::batchnorm3d_infer(x.tensor(), gamma.tensor(), beta.tensor(), running, BN_EPS)?
        };
        Ok(Val::owned(out))
    }

    fn elu(&mut self, x: &Val<T>) -> Val<T> {
        Val::owned(ops::elu(x.tensor()))
    }

    fn sigmoid(&mut self, x: &Val<T>) -> Val<T> {
        Val::owned(ops::sigmoid(x.tensor()))
    }

    fn dropout(&mut self, x: &Val<T>, rate: f64, rng: &mut ChaCha8Rng) -> Result<Val<T>> {
        check_rate(rate)?;
        if !self.dropout || rate == 0.0 {
            return Ok(x.clone());
        }
        Ok(Val::owned(ops::dropout(x.tensor(), rate, rng)?.0))
    }

    fn maxpool3d(&mut self, x: &Val<T>, spec: PoolSpec) -> Result<Val<T>> {
        Ok(Val::owned(ops::maxpool3d(x.tensor(), spec)?.0))
    }

    fn upsample3d(&mut self, x: &Val<T>) -> Result<Val<T>> {
        ops::upsample3d(x.tensor()).map(Val::owned)
    }

    fn add(&mut self, a: &Val<T>, b: &Val<T>) -> Result<Val<T>> {
        ops::add(a.tensor(), b.tensor()).map(Val::owned)
    }

    fn concat(&mut self, parts: &[Val<T>]) -> Result<Val<T>> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|p| p.tensor()).collect();
        ops::concat_channels(&tensors).map(Val::owned)
    }

    fn bce(&mut self, pred: &Val<T>, target: &Val<T>) -> Result<Val<T>> {
        Ok(Val::owned(Tensor::scalar(ops::bce(pred.tensor(), target.tensor())?)))
    }

    fn sum(&mut self, xs: &[Val<T>]) -> Result<Val<T>> {
        scalar_sum(&xs.iter().map(|x| x.tensor()).collect::<Vec<_>>()).map(Val::owned)
    }
}
