//! The multimodal encoder/decoder with intra-modality U-Net skips and a
//! fused bottleneck embedding.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, Val};
use crate::blocks::{conv_kind, param, BlockCount, ConvBlock, DownConv, MidFlow, UpConv};
use crate::error::{NnError, Result};
use crate::params::{Buffers, ParamId, ParamRole, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_modalities: usize,
    pub input_dims: [usize; 3],
    pub depth: usize,
    pub base_channels: usize,
    pub kernel: usize,
    pub dropout_rate: f64,
    pub embedding_channels: usize,
    /// Conv kind inside mid-flow blocks.
    pub midflow_kind: String,
    /// Conv kind of the conv, "down"conv and "up"conv blocks.
    pub block_kind: String,
    /// Seed of the parameter initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_modalities: 2,
            input_dims: [128, 128, 96],
            depth: 5,
            base_channels: 2,
            kernel: 5,
            dropout_rate: 0.1,
            embedding_channels: 32,
            midflow_kind: "separable".into(),
            block_kind: "standard".into(),
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Laptop-scale configuration: 32×32×24 inputs, three levels, an
    /// 8-channel fused bottleneck (embedding length 384).
    pub fn desk() -> Self {
        Self {
            input_dims: [32, 32, 24],
            depth: 3,
            embedding_channels: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NnError::Config(m));
        if self.n_modalities == 0 {
            return bad("n_modalities must be ≥ 1".into());
        }
        if self.depth == 0 || self.depth > 16 {
            return bad(format!("depth {} outside 1..=16", self.depth));
        }
        if self.base_channels == 0 || self.embedding_channels == 0 {
            return bad("channel counts must be ≥ 1".into());
        }
        if self.kernel.is_multiple_of(2) {
            return Err(NnError::EvenKernel(self.kernel));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NnError::DropoutRate(self.dropout_rate));
        }
        let unit = 1usize << self.depth;
        if self.input_dims.iter().any(|&d| d == 0 || d % unit != 0) {
            return bad(format!(
                "input dims {:?} must be positive multiples of 2^{} = {unit}",
                self.input_dims, self.depth
            ));
        }
        conv_kind::<f32>(&self.midflow_kind)?;
        conv_kind::<f32>(&self.block_kind)?;
        Ok(())
    }

    /// Channels after encoder step `level` (1-based); level 0 maps to the
    /// level-1 width.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << (level.max(1) - 1)
    }

    pub fn level_dims(&self, level: usize) -> [usize; 3] {
        self.input_dims.map(|d| d >> level)
    }

    pub fn bottleneck_shape(&self) -> [usize; 4] {
        let [x, y, z] = self.level_dims(self.depth);
        [self.channels(self.depth), x, y, z]
    }

    pub fn embedding_shape(&self) -> [usize; 4] {
        let [x, y, z] = self.level_dims(self.depth);
        [self.embedding_channels, x, y, z]
    }

    pub fn embedding_len(&self) -> usize {
        self.embedding_shape().iter().product()
    }
}

struct EncoderStep<T: Scalar> {
    conv: ConvBlock<T>,
    mid: MidFlow<T>,
    down: DownConv<T>,
}

struct DecoderStep<T: Scalar> {
    up: UpConv<T>,
    mid: MidFlow<T>,
    conv: ConvBlock<T>,
}

struct Stream<T: Scalar> {
    encoder: Vec<EncoderStep<T>>,
    /// Index `ℓ − 1` holds decoder level `ℓ`; run from the deepest.
    decoder: Vec<DecoderStep<T>>,
    out_w: ParamId,
    out_b: ParamId,
}

/// Per-modality encoder output.
pub struct Encoded<T> {
    pub bottleneck: Val<T>,
    /// Full-resolution mid-flow output of step 1, then the output of
    /// every encoder level but the deepest.
    pub skips: Vec<Val<T>>,
}

pub struct Forward<T> {
    /// Fused map `[embedding_channels, bx, by, bz]`.
    pub embedding: Val<T>,
    pub reconstructions: Vec<Val<T>>,
}

pub struct FuseModel<T: Scalar> {
    config: ModelConfig,
    pub params: ParamStore<T>,
    pub buffers: Buffers<T>,
    streams: Vec<Stream<T>>,
    fusion_w: ParamId,
    fusion_b: ParamId,
}

impl<T: Scalar> FuseModel<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new(config.init_seed);
        let mut buffers = Buffers::default();
        let (k, rate, d) = (config.kernel, config.dropout_rate, config.depth);
        let block = |p: &mut ParamStore<T>, b: &mut Buffers<T>, name: String, ci, co, rate| {
            ConvBlock::new(p, b, name, conv_kind(&config.block_kind)?, ci, co, k, rate)
        };
        let mut streams = Vec::with_capacity(config.n_modalities);
        for m in 1..=config.n_modalities {
            let mut encoder = Vec::with_capacity(d);
            for l in 1..=d {
                let (ci, c) = (if l == 1 { 1 } else { config.channels(l - 1) }, config.channels(l));
                let pre = format!("m{m}.enc{l}");
                encoder.push(EncoderStep {
                    conv: block(&mut params, &mut buffers, format!("{pre}.conv"), ci, c, rate)?,
                    mid: MidFlow::new(&mut params, &mut buffers, format!("{pre}.mid"), &config.midflow_kind, c, k)?,
                    down: DownConv::new(block(&mut params, &mut buffers, format!("{pre}.down"), c, c, rate)?),
                });
            }
            let mut decoder = Vec::with_capacity(d);
            for l in 1..=d {
                let ci = if l == d { config.embedding_channels } else { config.channels(l) };
                let c = config.channels(l - 1);
                let pre = format!("m{m}.dec{l}");
                decoder.push(DecoderStep {
                    up: UpConv {
                        block: block(&mut params, &mut buffers, format!("{pre}.up"), ci, c, 0.0)?,
                    },
                    mid: MidFlow::new(&mut params, &mut buffers, format!("{pre}.mid"), &config.midflow_kind, 2 * c, k)?,
                    conv: block(&mut params, &mut buffers, format!("{pre}.conv"), 2 * c, c, 0.0)?,
                });
            }
            let c1 = config.channels(1);
            let out_w = params.weight(format!("m{m}.out.conv.w"), &[1, c1, k, k, k], c1 * k * k * k);
            let out_b = params.constant(format!("m{m}.out.conv.b"), ParamRole::Bias, &[1], 0.0);
            streams.push(Stream {
                encoder,
                decoder,
                out_w,
                out_b,
            });
        }
        let cin = config.n_modalities * config.channels(d);
        let fusion_w = params.weight("fusion.conv.w", &[config.embedding_channels, cin, 1, 1, 1], cin);
        let fusion_b = params.constant("fusion.conv.b", ParamRole::Bias, &[config.embedding_channels], 0.0);
        Ok(Self {
            config,
            params,
            buffers,
            streams,
            fusion_w,
            fusion_b,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_input(&self, t: &Tensor<T>) -> Result<()> {
        let [x, y, z] = self.config.input_dims;
        if t.shape != [1, x, y, z] {
            return Err(NnError::Shape(format!("input {:?}, expected [1, {x}, {y}, {z}]", t.shape)));
        }
        Ok(())
    }

    /// Runs encoder `m` on one `[1, nx, ny, nz]` volume.
    pub fn encode_one(
        &mut self,
        be: &mut dyn Backend<T>,
        m: usize,
        x: &Val<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Encoded<T>> {
        self.check_input(be.value(x))?;
        let Self {
            params,
            buffers,
            streams,
            ..
        } = self;
        let stream = streams
            .get(m)
            .ok_or_else(|| NnError::Config(format!("no modality {m}")))?;
        let mut skips = Vec::with_capacity(stream.encoder.len());
        let mut h = x.clone();
        for step in &stream.encoder {
            h = step.conv.forward(be, params, buffers, &h, rng)?;
            h = step.mid.forward(be, params, buffers, &h, rng)?;
            if skips.is_empty() {
                skips.push(h.clone());
            }
            h = step.down.forward(be, params, buffers, &h, rng)?;
            skips.push(h.clone());
        }
        let bottleneck = skips.pop().expect("depth ≥ 1");
        Ok(Encoded { bottleneck, skips })
    }

    pub fn encode(&mut self, be: &mut dyn Backend<T>, inputs: &[Val<T>], rng: &mut ChaCha8Rng) -> Result<Vec<Encoded<T>>> {
        if inputs.len() != self.config.n_modalities {
            return Err(NnError::Config(format!(
                "{} input volumes for {} modalities",
                inputs.len(),
                self.config.n_modalities
            )));
        }
        inputs
            .iter()
            .enumerate()
            .map(|(m, x)| self.encode_one(be, m, x, rng))
            .collect()
    }

    /// Channel-concatenates the bottlenecks (in modality order) and mixes
    /// them with a 1×1×1 convolution.
    pub fn fuse(&self, be: &mut dyn Backend<T>, bottlenecks: &[Val<T>]) -> Result<Val<T>> {
        if bottlenecks.len() != self.config.n_modalities {
            return Err(NnError::Config(format!(
                "{} bottlenecks for {} modalities",
                bottlenecks.len(),
                self.config.n_modalities
            )));
        }
        be.set_scope("fusion");
        let cat = be.concat(bottlenecks)?;
        let w = param(be, &self.params, self.fusion_w);
        let b = param(be, &self.params, self.fusion_b);
        be.conv3d(&cat, &w, Some(&b))
    }

    /// Decoder `m` from the fused map and that modality's skip stack.
    pub fn decode_one(
        &mut self,
        be: &mut dyn Backend<T>,
        m: usize,
        embedding: &Val<T>,
        skips: &[Val<T>],
        rng: &mut ChaCha8Rng,
    ) -> Result<Val<T>> {
        let Self {
            params,
            buffers,
            streams,
            config,
            ..
        } = self;
        let stream = streams
            .get(m)
            .ok_or_else(|| NnError::Config(format!("no modality {m}")))?;
        if skips.len() != config.depth {
            return Err(NnError::Config(format!(
                "skip stack has {} levels, expected {}",
                skips.len(),
                config.depth
            )));
        }
        let mut h = embedding.clone();
        for (l, step) in stream.decoder.iter().enumerate().rev() {
            h = step.up.forward(be, params, buffers, &h, rng)?;
            be.set_scope(&step.mid.name);
            h = be.concat(&[h, skips[l].clone()])?;
            h = step.mid.forward(be, params, buffers, &h, rng)?;
            h = step.conv.forward(be, params, buffers, &h, rng)?;
        }
        be.set_scope(&format!("m{}.out", m + 1));
        let w = param(be, params, stream.out_w);
        let b = param(be, params, stream.out_b);
        let h = be.conv3d(&h, &w, Some(&b))?;
        Ok(be.sigmoid(&h))
    }

    pub fn forward(&mut self, be: &mut dyn Backend<T>, inputs: &[Val<T>], rng: &mut ChaCha8Rng) -> Result<Forward<T>> {
        let encoded = self.encode(be, inputs, rng)?;
        let (bottlenecks, skips): (Vec<_>, Vec<_>) = encoded.into_iter().map(|e| (e.bottleneck, e.skips)).unzip();
        let embedding = self.fuse(be, &bottlenecks)?;
        drop(bottlenecks);
        let reconstructions = skips
            .iter()
            .enumerate()
            .map(|(m, s)| self.decode_one(be, m, &embedding, s, rng))
            .collect::<Result<_>>()?;
        Ok(Forward {
            embedding,
            reconstructions,
        })
    }

    /// Embedding only (encoders and fusion).
    pub fn embed(&mut self, be: &mut dyn Backend<T>, inputs: &[Val<T>], rng: &mut ChaCha8Rng) -> Result<Val<T>> {
        let bottlenecks: Vec<Val<T>> = self.encode(be, inputs, rng)?.into_iter().map(|e| e.bottleneck).collect();
        self.fuse(be, &bottlenecks)
    }

    /// Per-block parameter tallies in construction order.
    pub fn count_params(&self) -> ParamReport {
        let mut blocks = Vec::new();
        for (m, s) in self.streams.iter().enumerate() {
            for step in &s.encoder {
                blocks.push(step.conv.count());
                blocks.push(step.mid.count());
                blocks.push(step.down.block.count());
            }
            for step in s.decoder.iter().rev() {
                blocks.push(step.up.block.count());
                blocks.push(step.mid.count());
                blocks.push(step.conv.count());
            }
            let w = self.params.value(s.out_w).numel();
            blocks.push(BlockCount {
                block: format!("m{}.out", m + 1),
                weights: w,
                biases: 1,
                ..Default::default()
            });
        }
        blocks.push(BlockCount {
            block: "fusion".into(),
            weights: self.params.value(self.fusion_w).numel(),
            biases: self.params.value(self.fusion_b).numel(),
            ..Default::default()
        });
        let total = BlockCount::merge("total", &blocks);
        debug_assert_eq!(total.trainable(), self.params.numel());
        debug_assert_eq!(total.buffers, self.buffers.numel());
        ParamReport { blocks, total }
    }

    /// Swaps this model's parameter values and running statistics for
    /// those of `other`, which must share the architecture.
    pub fn load_state(&mut self, params: &ParamStore<T>, buffers: &Buffers<T>) -> Result<()> {
        if params.len() != self.params.len() || buffers.entries.len() != self.buffers.entries.len() {
            return Err(NnError::Checkpoint("parameter layout differs".into()));
        }
        for ((_, a), (_, b)) in self.params.iter().zip(params.iter()) {
            if a.name != b.name || a.value.shape != b.value.shape {
                return Err(NnError::Checkpoint(format!("parameter {} does not match {}", a.name, b.name)));
            }
        }
        self.params = params.clone();
        self.buffers = buffers.clone();
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamReport {
    pub blocks: Vec<BlockCount>,
    pub total: BlockCount,
}
