//! Operational blocks: (sep)conv, mid-flow, "down"conv and "up"conv.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use fusestrata_core::Registry;

use crate::backend::{Backend, Val};
use crate::error::{shape_err, NnError, Result};
use crate::ops::PoolSpec;
use crate::params::{BufferId, Buffers, ParamId, ParamRole, ParamStore};
use crate::scalar::Scalar;

/// A convolution flavour. Declares its parameters under a name prefix
/// and applies them.
pub trait ConvKind<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    fn declare(&self, store: &mut ParamStore<T>, prefix: &str, c_in: usize, c_out: usize, k: usize) -> Vec<ParamId>;

    fn apply(&self, be: &mut dyn Backend<T>, store: &ParamStore<T>, ids: &[ParamId], x: &Val<T>) -> Result<Val<T>>;

    fn weight_count(&self, c_in: usize, c_out: usize, k: usize) -> usize;

    fn bias_count(&self, c_in: usize, c_out: usize) -> usize;
}

pub(crate) fn param<T: Scalar>(be: &mut dyn Backend<T>, store: &ParamStore<T>, id: ParamId) -> Val<T> {
    let p = store.get(id);
    be.param(id, &p.name, &p.value)
}

/// Dense `k³` convolution with bias.
pub struct StandardConv;

impl<T: Scalar> ConvKind<T> for StandardConv {
    fn name(&self) -> &'static str {
        "standard"
    }

    fn declare(&self, store: &mut ParamStore<T>, prefix: &str, c_in: usize, c_out: usize, k: usize) -> Vec<ParamId> {
        vec![
            store.weight(format!("{prefix}.conv.w"), &[c_out, c_in, k, k, k], c_in * k * k * k),
            store.constant(format!("{prefix}.conv.b"), ParamRole::Bias, &[c_out], 0.0),
        ]
    }

    fn apply(&self, be: &mut dyn Backend<T>, store: &ParamStore<T>, ids: &[ParamId], x: &Val<T>) -> Result<Val<T>> {
        let w = param(be, store, ids[0]);
        let b = param(be, store, ids[1]);
        be.conv3d(x, &w, Some(&b))
    }

    fn weight_count(&self, c_in: usize, c_out: usize, k: usize) -> usize {
        c_out * c_in * k * k * k
    }

    fn bias_count(&self, _c_in: usize, c_out: usize) -> usize {
        c_out
    }
}

/// Depthwise `k³` convolution followed by a pointwise `1³` convolution;
/// a single bias after the pointwise step.
pub struct SeparableConv;

impl<T: Scalar> ConvKind<T> for SeparableConv {
    fn name(&self) -> &'static str {
        "separable"
    }

    fn declare(&self, store: &mut ParamStore<T>, prefix: &str, c_in: usize, c_out: usize, k: usize) -> Vec<ParamId> {
        vec![
            store.weight(format!("{prefix}.dw.w"), &[c_in, k, k, k], k * k * k),
            store.weight(format!("{prefix}.pw.w"), &[c_out, c_in, 1, 1, 1], c_in),
            store.constant(format!("{prefix}.pw.b"), ParamRole::Bias, &[c_out], 0.0),
        ]
    }

    fn apply(&self, be: &mut dyn Backend<T>, store: &ParamStore<T>, ids: &[ParamId], x: &Val<T>) -> Result<Val<T>> {
        let dw = param(be, store, ids[0]);
        let h = be.depthwise_conv3d(x, &dw, None)?;
        let pw = param(be, store, ids[1]);
        let b = param(be, store, ids[2]);
        be.conv3d(&h, &pw, Some(&b))
    }

    fn weight_count(&self, c_in: usize, c_out: usize, k: usize) -> usize {
        c_in * k * k * k + c_out * c_in
    }

    fn bias_count(&self, _c_in: usize, c_out: usize) -> usize {
        c_out
    }
}

pub type ConvKindCtor<T> = fn() -> Box<dyn ConvKind<T>>;

fn standard<T: Scalar>() -> Box<dyn ConvKind<T>> {
    Box::new(StandardConv)
}

fn separable<T: Scalar>() -> Box<dyn ConvKind<T>> {
    Box::new(SeparableConv)
}

pub fn conv_kinds<T: Scalar>() -> Registry<ConvKindCtor<T>> {
    Registry::new("conv kind")
        .with("standard", standard::<T> as ConvKindCtor<T>)
        .with("separable", separable::<T> as ConvKindCtor<T>)
}

pub fn conv_kind<T: Scalar>(name: &str) -> Result<Box<dyn ConvKind<T>>> {
    Ok(conv_kinds::<T>().get(name)?())
}

/// Parameter tally of one block.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BlockCount {
    pub block: String,
    pub weights: usize,
    pub biases: usize,
    /// Batch-norm scale and shift.
    pub bn: usize,
    /// Batch-norm running mean and variance (not trainable).
    pub buffers: usize,
}

impl BlockCount {
    pub fn trainable(&self) -> usize {
        self.weights + self.biases + self.bn
    }

    pub fn merge(block: impl Into<String>, parts: &[BlockCount]) -> Self {
        let mut out = BlockCount {
            block: block.into(),
            ..Default::default()
        };
        for p in parts {
            out.weights += p.weights;
            out.biases += p.biases;
            out.bn += p.bn;
            out.buffers += p.buffers;
        }
        out
    }
}

/// conv → batch norm → ELU → optional dropout.
pub struct ConvBlock<T: Scalar> {
    pub name: String,
    kind: Box<dyn ConvKind<T>>,
    conv: Vec<ParamId>,
    gamma: ParamId,
    beta: ParamId,
    running: BufferId,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub dropout: f64,
}

impl<T: Scalar> ConvBlock<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore<T>,
        buffers: &mut Buffers<T>,
        name: impl Into<String>,
        kind: Box<dyn ConvKind<T>>,
        c_in: usize,
        c_out: usize,
        k: usize,
        dropout: f64,
    ) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(NnError::EvenKernel(k));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(NnError::DropoutRate(dropout));
        }
        let name = name.into();
        let conv = kind.declare(store, &name, c_in, c_out, k);
        let gamma = store.constant(format!("{name}.bn.gamma"), ParamRole::BnGamma, &[c_out], 1.0);
        let beta = store.constant(format!("{name}.bn.beta"), ParamRole::BnBeta, &[c_out], 0.0);
        let running = buffers.add(format!("{name}.bn.running"), c_out);
        Ok(Self {
            name,
            kind,
            conv,
            gamma,
            beta,
            running,
            c_in,
            c_out,
            k,
            dropout,
        })
    }

    pub fn kind(&self) -> &str {
        self.kind.name()
    }

    pub fn conv_params(&self) -> &[ParamId] {
        &self.conv
    }

    pub fn bn_params(&self) -> (ParamId, ParamId) {
        (self.gamma, self.beta)
    }

    pub fn running(&self) -> BufferId {
        self.running
    }

    pub fn forward(
        &self,
        be: &mut dyn Backend<T>,
        store: &ParamStore<T>,
        buffers: &mut Buffers<T>,
        x: &Val<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Val<T>> {
        be.set_scope(&self.name);
        let h = self.kind.apply(be, store, &self.conv, x)?;
        let gamma = param(be, store, self.gamma);
        let beta = param(be, store, self.beta);
        let h = be.batchnorm3d(&h, &gamma, &beta, buffers.get_mut(self.running))?;
        let h = be.elu(&h);
        be.dropout(&h, self.dropout, rng)
    }

    pub fn count(&self) -> BlockCount {
        BlockCount {
            block: self.name.clone(),
            weights: self.kind.weight_count(self.c_in, self.c_out, self.k),
            biases: self.kind.bias_count(self.c_in, self.c_out),
            bn: 2 * self.c_out,
            buffers: 2 * self.c_out,
        }
    }
}

/// `x + block₃(block₂(block₁(x)))` with three channel-preserving conv
/// blocks (separable unless built otherwise).
pub struct MidFlow<T: Scalar> {
    pub name: String,
    pub blocks: Vec<ConvBlock<T>>,
    pub channels: usize,
}

impl<T: Scalar> MidFlow<T> {
    pub fn new(
        store: &mut ParamStore<T>,
        buffers: &mut Buffers<T>,
        name: impl Into<String>,
        kind: &str,
        channels: usize,
        k: usize,
    ) -> Result<Self> {
        let name = name.into();
        let blocks = (1..=3)
            .map(|j| ConvBlock::new(store, buffers, format!("{name}.sep{j}"), conv_kind(kind)?, channels, channels, k, 0.0))
            .collect::<Result<_>>()?;
        Ok(Self { name, blocks, channels })
    }

    pub fn forward(
        &self,
        be: &mut dyn Backend<T>,
        store: &ParamStore<T>,
        buffers: &mut Buffers<T>,
        x: &Val<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Val<T>> {
        let (c, _) = be.value(x).map_dims()?;
        if c != self.channels {
            return Err(NnError::Channels {
                expected: self.channels,
                found: c,
            });
        }
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.forward(be, store, buffers, &h, rng)?;
        }
        be.set_scope(&self.name);
        be.add(x, &h)
    }

    pub fn count(&self) -> BlockCount {
        let parts: Vec<BlockCount> = self.blocks.iter().map(|b| b.count()).collect();
        BlockCount::merge(self.name.clone(), &parts)
    }
}

/// Conv block followed by max pooling (window 3, stride 2).
pub struct DownConv<T: Scalar> {
    pub block: ConvBlock<T>,
    pub pool: PoolSpec,
}

impl<T: Scalar> DownConv<T> {
    pub fn new(block: ConvBlock<T>) -> Self {
        Self {
            block,
            pool: PoolSpec::default(),
        }
    }

    pub fn forward(
        &self,
        be: &mut dyn Backend<T>,
        store: &ParamStore<T>,
        buffers: &mut Buffers<T>,
        x: &Val<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Val<T>> {
        let (_, dims) = be.value(x).map_dims()?;
        if dims.iter().any(|d| d % 2 != 0) {
            return shape_err(format!("\"down\"conv needs even dims, got {dims:?}"));
        }
        let h = self.block.forward(be, store, buffers, x, rng)?;
        be.maxpool3d(&h, self.pool)
    }
}

/// Nearest 2× upsampling followed by a conv block.
pub struct UpConv<T: Scalar> {
    pub block: ConvBlock<T>,
}

impl<T: Scalar> UpConv<T> {
    pub fn forward(
        &self,
        be: &mut dyn Backend<T>,
        store: &ParamStore<T>,
        buffers: &mut Buffers<T>,
        x: &Val<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Val<T>> {
        be.set_scope(&self.block.name);
        let h = be.upsample3d(x)?;
        self.block.forward(be, store, buffers, &h, rng)
    }
}

/// Weight counts of a standard and a separable mid-flow block at `c`
/// channels, taken from constructed parameters.
pub fn midflow_counts(c: usize, k: usize) -> Result<(BlockCount, BlockCount)> {
    let build = |kind: &str| -> Result<BlockCount> {
        let mut store = ParamStore::<f32>::new(0);
        let mut buffers = Buffers::default();
        let mid = MidFlow::new(&mut store, &mut buffers, format!("mid.{kind}"), kind, c, k)?;
        let count = mid.count();
        let weights: usize = store
            .iter()
            .filter(|(_, p)| p.role == ParamRole::Weight)
            .map(|(_, p)| p.value.numel())
            .sum();
        debug_assert_eq!(weights, count.weights);
        Ok(count)
    };
    Ok((build("standard")?, build("separable")?))
}
