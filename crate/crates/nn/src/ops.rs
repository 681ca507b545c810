//! Forward functions for every operator and the tape operators that hold
//! what their backward passes need.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, NnError, Result};
use crate::kernels::{self, Geom};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A differentiable operation recorded on the tape.
pub trait Operator<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Input gradients (`None` for inputs without one) given the output
    /// value and its gradient.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>>;
}

pub const BN_EPS: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;
pub const BCE_CLAMP: f64 = 1e-7;

fn kernel_size(w: &Tensor<impl Scalar>, lead: usize) -> Result<usize> {
    if w.shape.len() != lead + 3 {
        return shape_err(format!("kernel shape {:?}", w.shape));
    }
    let k = w.shape[lead];
    if w.shape[lead + 1] != k || w.shape[lead + 2] != k {
        return shape_err(format!("kernel must be cubic, got {:?}", w.shape));
    }
    if k.is_multiple_of(2) {
        return Err(NnError::EvenKernel(k));
    }
    Ok(k)
}

fn check_bias<T: Scalar>(b: Option<&Tensor<T>>, c: usize) -> Result<()> {
    match b {
        Some(b) if b.shape != [c] => shape_err(format!("bias shape {:?}, expected [{c}]", b.shape)),
        _ => Ok(()),
    }
}

fn geom(dims: [usize; 3], k: usize) -> Geom {
    Geom {
        nx: dims[0],
        ny: dims[1],
        nz: dims[2],
        k,
    }
}

// ---------------------------------------------------------------- conv3d

pub fn conv3d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (ci, dims) = x.map_dims()?;
    let k = kernel_size(w, 2)?;
    let co = w.shape[0];
    if w.shape[1] != ci {
        return Err(NnError::Channels {
            expected: w.shape[1],
            found: ci,
        });
    }
    check_bias(b, co)?;
    let data = kernels::conv_forward(&x.data, &w.data, b.map(|b| &b.data[..]), ci, co, geom(dims, k));
    Tensor::from_vec(&[co, dims[0], dims[1], dims[2]], data)
}

pub struct Conv3dOp;

impl<T: Scalar> Operator<T> for Conv3dOp {
    fn name(&self) -> &'static str {
        "conv3d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (ci, dims) = x.map_dims().expect("validated in forward");
        let (co, k) = (w.shape[0], w.shape[2]);
        let g = geom(dims, k);
        let dx = kernels::conv_input_grad(&gout.data, &w.data, ci, co, g);
        let dw = kernels::conv_weight_grad(&gout.data, &x.data, ci, co, g);
        let mut out = vec![
            Some(Tensor::from_vec(&x.shape, dx).unwrap()),
            Some(Tensor::from_vec(&w.shape, dw).unwrap()),
        ];
        if inputs.len() > 2 {
            out.push(Some(Tensor::from_vec(&[co], kernels::channel_sums(&gout.data, co)).unwrap()));
        }
        out
    }
}

// ------------------------------------------------------- depthwise conv3d

pub fn depthwise_conv3d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (c, dims) = x.map_dims()?;
    let k = kernel_size(w, 1)?;
    if w.shape[0] != c {
        return Err(NnError::Channels {
            expected: w.shape[0],
            found: c,
        });
    }
    check_bias(b, c)?;
    let data = kernels::depthwise_forward(&x.data, &w.data, b.map(|b| &b.data[..]), c, geom(dims, k));
    Tensor::from_vec(&x.shape, data)
}

pub struct DepthwiseConv3dOp;

impl<T: Scalar> Operator<T> for DepthwiseConv3dOp {
    fn name(&self) -> &'static str {
        "depthwise_conv3d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (c, dims) = x.map_dims().expect("validated in forward");
        let g = geom(dims, w.shape[1]);
        let dx = kernels::depthwise_input_grad(&gout.data, &w.data, c, g);
        let dw = kernels::depthwise_weight_grad(&gout.data, &x.data, c, g);
        let mut out = vec![
            Some(Tensor::from_vec(&x.shape, dx).unwrap()),
            Some(Tensor::from_vec(&w.shape, dw).unwrap()),
        ];
        if inputs.len() > 2 {
            out.push(Some(Tensor::from_vec(&[c], kernels::channel_sums(&gout.data, c)).unwrap()));
        }
        out
    }
}

// ------------------------------------------------------------- maxpool3d

/// Pooling window and stride. Padding follows the "same" rule: output
/// length `ceil(n / stride)`, padding split with the smaller half first,
/// padded positions never win.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
}

impl Default for PoolSpec {
    fn default() -> Self {
        Self { window: 3, stride: 2 }
    }
}

impl PoolSpec {
    pub fn out_len(&self, n: usize) -> usize {
        n.div_ceil(self.stride)
    }

    /// Leading pad for an axis of length `n`.
    pub fn pad_lo(&self, n: usize) -> usize {
        let total = ((self.out_len(n) - 1) * self.stride + self.window).saturating_sub(n);
        total / 2
    }
}

/// Returns the pooled map and, per output element, the flat input index
/// of the winning element (first maximum in z, y, x scan order; a NaN
/// beats every number).
pub fn maxpool3d<T: Scalar>(x: &Tensor<T>, spec: PoolSpec) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, [nx, ny, nz]) = x.map_dims()?;
    let (ox, oy, oz) = (spec.out_len(nx), spec.out_len(ny), spec.out_len(nz));
    let (px, py, pz) = (spec.pad_lo(nx) as isize, spec.pad_lo(ny) as isize, spec.pad_lo(nz) as isize);
    let win = |o: usize, pad: isize, n: usize| {
        let start = (o * spec.stride) as isize - pad;
        let lo = start.max(0) as usize;
        let hi = ((start + spec.window as isize).min(n as isize)).max(0) as usize;
        lo..hi
    };
    let mut out = Vec::with_capacity(c * ox * oy * oz);
    let mut arg = Vec::with_capacity(out.capacity());
    for ch in 0..c {
        for zo in 0..oz {
            for yo in 0..oy {
                for xo in 0..ox {
                    let mut best = T::neg_infinity();
                    let mut best_i = usize::MAX;
                    for z in win(zo, pz, nz) {
                        for y in win(yo, py, ny) {
                            for xx in win(xo, px, nx) {
                                let i = ((ch * nz + z) * ny + y) * nx + xx;
                                let v = x.data[i];
                                if best_i == usize::MAX || v > best || (v.is_nan() && !best.is_nan()) {
                                    best = x.data[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[c, ox, oy, oz], out)?, arg))
}

pub struct MaxPool3dOp {
    pub argmax: Vec<usize>,
}

impl<T: Scalar> Operator<T> for MaxPool3dOp {
    fn name(&self) -> &'static str {
        "maxpool3d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let mut dx = Tensor::zeros(&inputs[0].shape);
        for (&i, &g) in self.argmax.iter().zip(&gout.data) {
            dx.data[i] = dx.data[i] + g;
        }
        vec![Some(dx)]
    }
}

// ------------------------------------------------------------ upsample3d

/// Nearest-neighbour 2× upsampling along every spatial axis.
pub fn upsample3d<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, [nx, ny, nz]) = x.map_dims()?;
    let (ux, uy, uz) = (2 * nx, 2 * ny, 2 * nz);
    let mut out = Vec::with_capacity(c * ux * uy * uz);
    for ch in 0..c {
        for z in 0..uz {
            for y in 0..uy {
                let row = &x.data[((ch * nz + z / 2) * ny + y / 2) * nx..][..nx];
                for &v in row {
                    out.push(v);
                    out.push(v);
                }
            }
        }
    }
    Tensor::from_vec(&[c, ux, uy, uz], out)
}

pub struct Upsample3dOp;

impl<T: Scalar> Operator<T> for Upsample3dOp {
    fn name(&self) -> &'static str {
        "upsample3d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = inputs[0];
        let (c, [nx, ny, nz]) = x.map_dims().unwrap();
        let (ux, uy) = (2 * nx, 2 * ny);
        let mut dx = Tensor::zeros(&x.shape);
        for ch in 0..c {
            for z in 0..2 * nz {
                for y in 0..uy {
                    let src = &gout.data[((ch * 2 * nz + z) * uy + y) * ux..][..ux];
                    let dst = &mut dx.data[((ch * nz + z / 2) * ny + y / 2) * nx..][..nx];
                    for (xx, d) in dst.iter_mut().enumerate() {
                        *d = *d + src[2 * xx] + src[2 * xx + 1];
                    }
                }
            }
        }
        vec![Some(dx)]
    }
}

// ----------------------------------------------------------- batchnorm3d

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnRunning<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BnRunning<T> {
    pub fn new(c: usize) -> Self {
        Self {
            mean: vec![T::zero(); c],
            var: vec![T::one(); c],
        }
    }
}

fn check_affine<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<usize> {
    let (c, _) = x.map_dims()?;
    if gamma.shape != [c] || beta.shape != [c] {
        return shape_err(format!(
            "batch-norm affine shapes {:?}/{:?} for {c} channels",
            gamma.shape, beta.shape
        ));
    }
    Ok(c)
}

/// Training-mode batch norm over the spatial positions of each channel
/// (batch size 1). Returns the output, the normalized input and the
/// per-channel inverse standard deviation; `running` is updated with the
/// batch mean and unbiased variance.
pub fn batchnorm3d_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &mut BnRunning<T>,
    eps: f64,
    momentum: f64,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let c = check_affine(x, gamma, beta)?;
    let n = x.numel() / c;
    let mut out = Tensor::zeros(&x.shape);
    let mut xhat = vec![T::zero(); x.numel()];
    let mut inv_std = Vec::with_capacity(c);
    for ch in 0..c {
        let src = x.channel(ch);
        let mean = src.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
        let var = src.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n as f64;
        let is = 1.0 / (var + eps).sqrt();
        let (g, b) = (gamma.data[ch].as_f64(), beta.data[ch].as_f64());
        for (i, &v) in src.iter().enumerate() {
            let h = (v.as_f64() - mean) * is;
            xhat[ch * n + i] = T::from_f64(h);
            out.data[ch * n + i] = T::from_f64(g * h + b);
        }
        inv_std.push(T::from_f64(is));
        let unbiased = if n > 1 { var * n as f64 / (n - 1) as f64 } else { var };
        running.mean[ch] = T::from_f64(momentum * running.mean[ch].as_f64() + (1.0 - momentum) * mean);
        running.var[ch] = T::from_f64(momentum * running.var[ch].as_f64() + (1.0 - momentum) * unbiased);
    }
    Ok((out, xhat, inv_std))
}

/// Inference-mode batch norm with running statistics.
pub fn batchnorm3d_infer<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &BnRunning<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let c = check_affine(x, gamma, beta)?;
    let n = x.numel() / c;
    let mut out = Tensor::zeros(&x.shape);
    for ch in 0..c {
        let is = 1.0 / (running.var[ch].as_f64() + eps).sqrt();
        let mean = running.mean[ch].as_f64();
        let (g, b) = (gamma.data[ch].as_f64(), beta.data[ch].as_f64());
        for (o, &v) in out.data[ch * n..(ch + 1) * n].iter_mut().zip(x.channel(ch)) {
            *o = T::from_f64(g * (v.as_f64() - mean) * is + b);
        }
    }
    Ok(out)
}

/// Batch-norm backward. With `batch_stats` the mean and variance depend
/// on the input; otherwise they are constants (running statistics).
pub struct BatchNorm3dOp<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub batch_stats: bool,
}

impl<T: Scalar> Operator<T> for BatchNorm3dOp<T> {
    fn name(&self) -> &'static str {
        "batchnorm3d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let c = gamma.numel();
        let n = x.numel() / c;
        let mut dx = Tensor::zeros(&x.shape);
        let mut dgamma = Tensor::zeros(&[c]);
        let mut dbeta = Tensor::zeros(&[c]);
        for ch in 0..c {
            let g = &gout.data[ch * n..(ch + 1) * n];
            let h = &self.xhat[ch * n..(ch + 1) * n];
            let sum_g: f64 = g.iter().map(|v| v.as_f64()).sum();
            let sum_gh: f64 = g.iter().zip(h).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
            dbeta.data[ch] = T::from_f64(sum_g);
            dgamma.data[ch] = T::from_f64(sum_gh);
            let scale = gamma.data[ch].as_f64() * self.inv_std[ch].as_f64();
            let dst = &mut dx.data[ch * n..(ch + 1) * n];
            if self.batch_stats {
                let nf = n as f64;
                for ((d, gv), hv) in dst.iter_mut().zip(g).zip(h) {
                    *d = T::from_f64(scale * (gv.as_f64() - sum_g / nf - hv.as_f64() * sum_gh / nf));
                }
            } else {
                for (d, gv) in dst.iter_mut().zip(g) {
                    *d = T::from_f64(scale * gv.as_f64());
                }
            }
        }
        vec![Some(dx), Some(dgamma), Some(dbeta)]
    }
}

/// Normalized input under running statistics, for the inference-mode
/// backward.
pub fn bn_infer_saved<T: Scalar>(x: &Tensor<T>, running: &BnRunning<T>, eps: f64) -> (Vec<T>, Vec<T>) {
    let c = running.mean.len();
    let n = x.numel() / c;
    let inv: Vec<f64> = running.var.iter().map(|v| 1.0 / (v.as_f64() + eps).sqrt()).collect();
    let xhat = x
        .data
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let ch = i / n;
            T::from_f64((v.as_f64() - running.mean[ch].as_f64()) * inv[ch])
        })
        .collect();
    (xhat, inv.into_iter().map(T::from_f64).collect())
}

// ------------------------------------------------------ pointwise maps

pub fn elu_scalar<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        v.exp_m1()
    }
}

/// Logistic function, kept strictly inside (0, 1) at the precision of `T`.
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        let cap = T::one() - T::epsilon() / T::from_f64(2.0);
        let y = T::one() / (T::one() + (-v).exp());
        if y > cap {
            cap
        } else {
            y
        }
    } else {
        let e = v.exp();
        let y = e / (T::one() + e);
        if y < T::min_positive_value() {
            T::min_positive_value()
        } else {
            y
        }
    }
}

pub fn elu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| elu_scalar(v)).collect(),
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| sigmoid_scalar(v)).collect(),
    }
}

pub struct EluOp;

impl<T: Scalar> Operator<T> for EluOp {
    fn name(&self) -> &'static str {
        "elu"
    }

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let data = inputs[0]
            .data
            .iter()
            .zip(&output.data)
            .zip(&gout.data)
            .map(|((&x, &y), &g)| if x > T::zero() { g } else { g * (y + T::one()) })
            .collect();
        vec![Some(Tensor {
            shape: output.shape.clone(),
            data,
        })]
    }
}

pub struct SigmoidOp;

impl<T: Scalar> Operator<T> for SigmoidOp {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn backward(&self, _inputs: &[&Tensor<T>], output: &Tensor<T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let data = output
            .data
            .iter()
            .zip(&gout.data)
            .map(|(&y, &g)| g * y * (T::one() - y))
            .collect();
        vec![Some(Tensor {
            shape: output.shape.clone(),
            data,
        })]
    }
}

// ---------------------------------------------------------------- dropout

/// Inverted dropout: each element is zeroed with probability `rate` and
/// survivors are scaled by `1 / (1 − rate)`. Returns the output and the
/// per-element multiplier.
pub fn dropout<T: Scalar>(x: &Tensor<T>, rate: f64, rng: &mut ChaCha8Rng) -> Result<(Tensor<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::DropoutRate(rate));
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.numel())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let data = x.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((
        Tensor {
            shape: x.shape.clone(),
            data,
        },
        mask,
    ))
}

pub struct DropoutOp<T> {
    pub mask: Vec<T>,
}

impl<T: Scalar> Operator<T> for DropoutOp<T> {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn backward(&self, _inputs: &[&Tensor<T>], output: &Tensor<T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let data = gout.data.iter().zip(&self.mask).map(|(&g, &m)| g * m).collect();
        vec![Some(Tensor {
            shape: output.shape.clone(),
            data,
        })]
    }
}

// ------------------------------------------------------ add and concat

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape != b.shape {
        return shape_err(format!("add {:?} + {:?}", a.shape, b.shape));
    }
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect(),
    })
}

pub struct AddOp;

impl<T: Scalar> Operator<T> for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(gout.clone()), Some(gout.clone())]
    }
}

/// Concatenates feature maps along the channel axis.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = parts.first() else {
        return shape_err("concat of zero tensors");
    };
    let (_, dims) = first.map_dims()?;
    let mut c = 0;
    let mut data = Vec::new();
    for p in parts {
        let (pc, pd) = p.map_dims()?;
        if pd != dims {
            return shape_err(format!("concat spatial dims {pd:?} vs {dims:?}"));
        }
        c += pc;
        data.extend_from_slice(&p.data);
    }
    Tensor::from_vec(&[c, dims[0], dims[1], dims[2]], data)
}

pub struct ConcatOp;

impl<T: Scalar> Operator<T> for ConcatOp {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let mut offset = 0;
        inputs
            .iter()
            .map(|t| {
                let g = Tensor {
                    shape: t.shape.clone(),
                    data: gout.data[offset..offset + t.numel()].to_vec(),
                };
                offset += t.numel();
                Some(g)
            })
            .collect()
    }
}

// ---------------------------------------------------------------- losses

/// Mean binary cross-entropy with predictions clamped to
/// `[1e-7, 1 − 1e-7]`.
pub fn bce<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape != target.shape {
        return shape_err(format!("bce {:?} vs {:?}", pred.shape, target.shape));
    }
    let n = pred.numel() as f64;
    let total: f64 = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(&p, &t)| {
            let p = p.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let t = t.as_f64();
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(T::from_f64(total / n))
}

pub struct BceOp;

impl<T: Scalar> Operator<T> for BceOp {
    fn name(&self) -> &'static str {
        "bce"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (pred, target) = (inputs[0], inputs[1]);
        let scale = gout.data[0].as_f64() / pred.numel() as f64;
        let data = pred
            .data
            .iter()
            .zip(&target.data)
            .map(|(&p, &t)| {
                let p = p.as_f64();
                if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                    return T::zero();
                }
                T::from_f64(scale * (p - t.as_f64()) / (p * (1.0 - p)))
            })
            .collect();
        vec![
            Some(Tensor {
                shape: pred.shape.clone(),
                data,
            }),
            None,
        ]
    }
}

/// `Σ wᵢ xᵢ` with fixed weights; reduces a tensor to a scalar for
/// gradient checks.
pub struct WeightedSumOp<T> {
    pub weights: Vec<T>,
}

pub fn weighted_sum<T: Scalar>(x: &Tensor<T>, weights: &[T]) -> Result<T> {
    if x.numel() != weights.len() {
        return shape_err(format!("{} weights for {} elements", weights.len(), x.numel()));
    }
    Ok(T::from_f64(
        x.data.iter().zip(weights).map(|(a, b)| a.as_f64() * b.as_f64()).sum(),
    ))
}

impl<T: Scalar> Operator<T> for WeightedSumOp<T> {
    fn name(&self) -> &'static str {
        "weighted_sum"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let g = gout.data[0];
        vec![Some(Tensor {
            shape: inputs[0].shape.clone(),
            data: self.weights.iter().map(|&w| w * g).collect(),
        })]
    }
}

/// Sum of scalars.
pub struct SumOp;

impl<T: Scalar> Operator<T> for SumOp {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        inputs.iter().map(|_| Some(gout.clone())).collect()
    }
}
