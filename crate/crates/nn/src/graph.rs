//! Reverse-mode tape.

use std::collections::HashMap;
use std::sync::Arc;

use crate::backend::Val;
use crate::error::{shape_err, Result};
use crate::ops::{self, Operator};
use crate::params::ParamId;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct Node<T> {
    value: Tensor<T>,
    inputs: Vec<usize>,
    op: Option<Box<dyn Operator<T>>>,
    requires_grad: bool,
    scope: Arc<str>,
}

/// Records every operation in execution order; `backward` walks the
/// nodes in reverse, which is a reverse topological order because inputs
/// always precede their consumers.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    pub(crate) training: bool,
    pub(crate) scope: Arc<str>,
    params: HashMap<ParamId, usize>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new(training: bool) -> Self {
        Self {
            nodes: Vec::new(),
            training,
            scope: Arc::from(""),
            params: HashMap::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn idx(v: &Val<T>) -> usize {
        v.node_index().expect("value was not produced by this graph")
    }

    /// Adds an input tensor. Leaves that require gradients keep them after
    /// `backward`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Val<T> {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            op: None,
            requires_grad,
            scope: self.scope.clone(),
        });
        Val::node(self.nodes.len() - 1)
    }

    pub(crate) fn param_leaf(&mut self, id: ParamId, name: &str, value: &Tensor<T>) -> Val<T> {
        if let Some(&i) = self.params.get(&id) {
            return Val::node(i);
        }
        let saved = std::mem::replace(&mut self.scope, Arc::from(name));
        let v = self.leaf(value.clone(), true);
        self.scope = saved;
        self.params.insert(id, Self::idx(&v));
        v
    }

    /// Makes later uses of parameter `id` resolve to `v` instead of a new
    /// leaf (used to differentiate with respect to supplied values).
    pub fn bind_param(&mut self, id: ParamId, v: &Val<T>) {
        self.params.insert(id, Self::idx(v));
    }

    pub fn record(&mut self, op: Box<dyn Operator<T>>, inputs: &[&Val<T>], value: Tensor<T>) -> Val<T> {
        let inputs: Vec<usize> = inputs.iter().map(|v| Self::idx(v)).collect();
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            inputs,
            op: Some(op),
            requires_grad,
            scope: self.scope.clone(),
        });
        Val::node(self.nodes.len() - 1)
    }

    pub fn value(&self, v: &Val<T>) -> &Tensor<T> {
        &self.nodes[Self::idx(v)].value
    }

    /// Runs the backward pass from a scalar node. Gradients of
    /// intermediate nodes are released once propagated; leaf gradients
    /// stay available through [`Graph::grad`].
    pub fn backward(&mut self, loss: &Val<T>) -> Result<()> {
        let root = Self::idx(loss);
        if self.nodes[root].value.numel() != 1 {
            return shape_err(format!("backward from non-scalar {:?}", self.nodes[root].value.shape));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root] = Some(Tensor::full(&self.nodes[root].value.shape, T::one()));
        for i in (0..=root).rev() {
            let node = &self.nodes[i];
            let Some(op) = &node.op else { continue };
            let Some(gout) = self.grads[i].take() else { continue };
            if !node.requires_grad {
                continue;
            }
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let gin = op.backward(&inputs, &node.value, &gout);
            for (&j, g) in node.inputs.iter().zip(gin) {
                let Some(g) = g else { continue };
                if !self.nodes[j].requires_grad {
                    continue;
                }
                match &mut self.grads[j] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    pub fn grad(&self, v: &Val<T>) -> Option<&Tensor<T>> {
        self.grads.get(Self::idx(v)).and_then(|g| g.as_ref())
    }

    /// Gradients of every parameter used in the forward pass, ordered by
    /// parameter id.
    pub fn param_grads(&self) -> Vec<(ParamId, &Tensor<T>)> {
        let mut out: Vec<_> = self
            .params
            .iter()
            .filter_map(|(&id, &i)| self.grads.get(i).and_then(|g| g.as_ref()).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    /// Scope of the first recorded value containing NaN or ±∞.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.nodes.iter().find(|n| !n.value.is_finite()).map(|n| &*n.scope)
    }

    pub fn weighted_sum(&mut self, x: &Val<T>, weights: Vec<T>) -> Result<Val<T>> {
        let v = ops::weighted_sum(self.value(x), &weights)?;
        Ok(self.record(Box::new(ops::WeightedSumOp { weights }), &[x], Tensor::scalar(v)))
    }
}
