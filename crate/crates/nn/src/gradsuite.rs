//! Randomized gradient checks over every operator and the composed
//! blocks, at 64-bit precision.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use fusestrata_core::seed;

use crate::backend::{Backend, Val};
use crate::blocks::{conv_kind, ConvBlock, DownConv, MidFlow, UpConv};
use crate::error::Result;
use crate::gradcheck::{check_gradients, GradCheck, GradCheckOptions};
use crate::graph::Graph;
use crate::model::{FuseModel, ModelConfig};
use crate::ops::{BnRunning, PoolSpec};
use crate::params::{Buffers, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub name: String,
    pub instances: usize,
    pub coords: usize,
    pub max_rel_err: f64,
}

type Objective = Box<dyn Fn(&mut Graph<f64>, &[Val<f64>]) -> Result<Val<f64>>>;

struct Case {
    points: Vec<Tensor<f64>>,
    f: Objective,
    training: bool,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Uniform values in `±[0.05, hi]`, away from the ELU kink.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize], hi: f64) -> Tensor<f64> {
    let mut t = uniform(rng, shape, 0.05, hi);
    for v in &mut t.data {
        if rng.random::<bool>() {
            *v = -*v;
        }
    }
    t
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> [usize; 3] {
    [0; 3].map(|_| rng.random_range(lo..=hi))
}

fn map_shape(c: usize, d: [usize; 3]) -> Vec<usize> {
    vec![c, d[0], d[1], d[2]]
}

fn reduce(g: &mut Graph<f64>, out: &Val<f64>, weights: &[f64]) -> Result<Val<f64>> {
    g.weighted_sum(out, weights.to_vec())
}

fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn op_case(name: &str, rng: &mut ChaCha8Rng) -> Case {
    let d = dims(rng, 3, 6);
    let c = rng.random_range(1..=3);
    let vol = d.iter().product::<usize>();
    match name {
        "conv3d" => {
            let co = rng.random_range(1..=3);
            let k = *[1, 3, 5].choose(rng).unwrap();
            let w = weights(rng, co * vol);
            Case {
                points: vec![
                    uniform(rng, &map_shape(c, d), -1.0, 1.0),
                    uniform(rng, &[co, c, k, k, k], -0.5, 0.5),
                    uniform(rng, &[co], -0.5, 0.5),
                ],
                f: Box::new(move |g, v| {
                    let y = g.conv3d(&v[0], &v[1], Some(&v[2]))?;
                    reduce(g, &y, &w)
                }),
                training: true,
            }
        }
        "depthwise_conv3d" => {
            let k = *[3, 5].choose(rng).unwrap();
            let w = weights(rng, c * vol);
            Case {
                points: vec![
                    uniform(rng, &map_shape(c, d), -1.0, 1.0),
                    uniform(rng, &[c, k, k, k], -0.5, 0.5),
                    uniform(rng, &[c], -0.5, 0.5),
                ],
                f: Box::new(move |g, v| {
                    let y = g.depthwise_conv3d(&v[0], &v[1], Some(&v[2]))?;
                    reduce(g, &y, &w)
                }),
                training: true,
            }
        }
        "batchnorm3d" | "batchnorm3d_inference" => {
            let w = weights(rng, c * vol);
            let mut running = BnRunning::new(c);
            running.mean = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
            running.var = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
            Case {
                points: vec![
                    uniform(rng, &map_shape(c, d), -2.0, 2.0),
                    uniform(rng, &[c], 0.5, 1.5),
                    uniform(rng, &[c], -0.5, 0.5),
                ],
                f: Box::new(move |g, v| {
                    let y = g.batchnorm3d(&v[0], &v[1], &v[2], &mut running.clone())?;
                    reduce(g, &y, &w)
                }),
                training: name == "batchnorm3d",
            }
        }
        "elu" | "sigmoid" => {
            let w = weights(rng, c * vol);
            let elu = name == "elu";
            Case {
                points: vec![off_zero(rng, &map_shape(c, d), 3.0)],
                f: Box::new(move |g, v| {
                    let y = if elu { g.elu(&v[0]) } else { g.sigmoid(&v[0]) };
                    reduce(g, &y, &w)
                }),
                training: true,
            }
        }
        "dropout" => {
            let w = weights(rng, c * vol);
            let mask_seed = rng.random::<u64>();
            Case {
                points: vec![uniform(rng, &map_shape(c, d), -1.0, 1.0)],
                f: Box::new(move |g, v| {
                    let y = g.dropout(&v[0], 0.3, &mut seed::stream(mask_seed, "dropout", 0))?;
                    reduce(g, &y, &w)
                }),
                training: true,
            }
        }
        "maxpool3d" => {
            let spec = PoolSpec::default();
            let out: usize = c * d.iter().map(|&n| spec.out_len(n)).product::<usize>();
            let w = weights(rng, out);
            // well-separated values keep every window's maximum stable
            let mut ranks: Vec<usize> = (0..c * vol).collect();
            ranks.shuffle(rng);
            let data = ranks.iter().map(|&r| r as f64 * 0.1 + rng.random_range(0.0..0.01)).collect();
            Case {
                points: vec![Tensor::from_vec(&map_shape(c, d), data).unwrap()],
                f: Box::new(move |g, v| {
                    let y = g.maxpool3d(&v[0], spec)?;
                    reduce(g, &y, &w)
                }),
                training: true,
            }
        }
        "upsample3d" => {
            let w = weights(rng, 8 * c * vol);
            Case {
                points: vec![uniform(rng, &map_shape(c, d), -1.0, 1.0)],
                f: Box::new(move |g, v| {
                    let y = g.upsample3d(&v[0])?;
                    reduce(g, &y, &w)
                }),
                training: true,
            }
        }
        "add" => {
            let w = weights(rng, c * vol);
            Case {
                points: vec![
                    uniform(rng, &map_shape(c, d), -1.0, 1.0),
                    uniform(rng, &map_shape(c, d), -1.0, 1.0),
                ],
                f: Box::new(move |g, v| {
                    let y = g.add(&v[0], &v[1])?;
                    reduce(g, &y, &w)
                }),
                training: true,
            }
        }
        "concat" => {
            let c2 = rng.random_range(1..=3);
            let w = weights(rng, (c + c2) * vol);
            Case {
                points: vec![
                    uniform(rng, &map_shape(c, d), -1.0, 1.0),
                    uniform(rng, &map_shape(c2, d), -1.0, 1.0),
                ],
                f: Box::new(move |g, v| {
                    let y = g.concat(v)?;
                    reduce(g, &y, &w)
                }),
                training: true,
            }
        }
        "bce" => {
            let target = uniform(rng, &map_shape(c, d), 0.0, 1.0);
            Case {
                points: vec![uniform(rng, &map_shape(c, d), 0.05, 0.95)],
                f: Box::new(move |g, v| {
                    let t = g.leaf(target.clone(), false);
                    g.bce(&v[0], &t)
                }),
                training: true,
            }
        }
        other => panic!("no gradient case for {other}"),
    }
}

/// Makes `f` differentiate with respect to every parameter in `store`,
/// supplied after the leading `n_inputs` points.
fn with_params(store: &ParamStore<f64>, n_inputs: usize, mut points: Vec<Tensor<f64>>) -> (Vec<Tensor<f64>>, Vec<ParamId>) {
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    debug_assert_eq!(points.len(), n_inputs);
    points.extend(store.iter().map(|(_, p)| p.value.clone()));
    (points, ids)
}

fn perturb_bn(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    // non-trivial scale and shift so their gradients are exercised
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        if store.get(id).name.contains(".bn.") || store.get(id).name.ends_with(".b") {
            for v in &mut store.value_mut(id).data {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
}

fn block_case(name: &str, rng: &mut ChaCha8Rng) -> Result<Case> {
    let d = dims(rng, 2, 3).map(|n| 2 * n);
    let c = rng.random_range(1..=3);
    let co = rng.random_range(1..=3);
    let k = *[3, 5].choose(rng).unwrap();
    let mut store = ParamStore::<f64>::new(rng.random());
    let mut buffers = Buffers::default();
    let drop_seed = rng.random::<u64>();
    type Apply = Box<dyn Fn(&mut dyn Backend<f64>, &ParamStore<f64>, &mut Buffers<f64>, &Val<f64>, &mut ChaCha8Rng) -> Result<Val<f64>>>;
    let (c_in, out_c, out_d, apply): (usize, usize, [usize; 3], Apply) = match name {
        "conv_block_standard" | "conv_block_separable" => {
            let kind = if name.ends_with("standard") { "standard" } else { "separable" };
            let b = ConvBlock::new(&mut store, &mut buffers, "blk", conv_kind(kind)?, c, co, k, 0.2)?;
            (c, co, d, Box::new(move |be, s, bf, x, r| b.forward(be, s, bf, x, r)))
        }
        "midflow" => {
            let b = MidFlow::new(&mut store, &mut buffers, "mid", "separable", c, k)?;
            (c, c, d, Box::new(move |be, s, bf, x, r| b.forward(be, s, bf, x, r)))
        }
        "downconv" => {
            let b = DownConv::new(ConvBlock::new(&mut store, &mut buffers, "down", conv_kind("standard")?, c, co, k, 0.0)?);
            (c, co, d.map(|n| n / 2), Box::new(move |be, s, bf, x, r| b.forward(be, s, bf, x, r)))
        }
        "upconv" => {
            let b = UpConv {
                block: ConvBlock::new(&mut store, &mut buffers, "up", conv_kind("standard")?, c, co, k, 0.0)?,
            };
            (c, co, d.map(|n| n * 2), Box::new(move |be, s, bf, x, r| b.forward(be, s, bf, x, r)))
        }
        other => panic!("no gradient case for {other}"),
    };
    perturb_bn(&mut store, rng);
    let w = weights(rng, out_c * out_d.iter().product::<usize>());
    let x = uniform(rng, &map_shape(c_in, d), -1.0, 1.0);
    let (points, ids) = with_params(&store, 1, vec![x]);
    Ok(Case {
        points,
        f: Box::new(move |g, v| {
            for (id, p) in ids.iter().zip(&v[1..]) {
                g.bind_param(*id, p);
            }
            let mut bf = buffers.clone();
            let y = apply(g, &store, &mut bf, &v[0], &mut seed::stream(drop_seed, "dropout", 0))?;
            reduce(g, &y, &w)
        }),
        training: true,
    })
}

pub const OPERATORS: &[&str] = &[
    "conv3d",
    "depthwise_conv3d",
    "batchnorm3d",
    "batchnorm3d_inference",
    "elu",
    "sigmoid",
    "dropout",
    "maxpool3d",
    "upsample3d",
    "add",
    "concat",
    "bce",
];

pub const BLOCKS: &[&str] = &[
    "conv_block_standard",
    "conv_block_separable",
    "midflow",
    "downconv",
    "upconv",
];

/// Checks `instances` random instances of every operator and block;
/// reports the worst relative error per name.
pub fn run_suite(instances: usize, seed_value: u64) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    for (i, &name) in OPERATORS.iter().chain(BLOCKS).enumerate() {
        let mut entry = SuiteEntry {
            name: name.to_string(),
            instances,
            coords: 0,
            max_rel_err: 0.0,
        };
        for inst in 0..instances {
            let mut rng = seed::stream(seed_value, "gradsuite", (i * 100_000 + inst) as u64);
            let case = if OPERATORS.contains(&name) {
                op_case(name, &mut rng)
            } else {
                block_case(name, &mut rng)?
            };
            let opts = GradCheckOptions {
                training: case.training,
                ..Default::default()
            };
            let r = check_gradients(case.f, &case.points, opts)?;
            entry.coords += r.coords_checked;
            entry.max_rel_err = entry.max_rel_err.max(r.max_rel_err);
        }
        out.push(entry);
    }
    Ok(out)
}

/// Whole-model check at 8×8×8, depth 2, on the summed reconstruction
/// loss, sampling `coords_per_param` coordinates of every parameter.
pub fn model_check(seed_value: u64, coords_per_param: usize) -> Result<GradCheck> {
    let cfg = ModelConfig {
        input_dims: [8, 8, 8],
        depth: 2,
        embedding_channels: 4,
        init_seed: seed_value,
        ..ModelConfig::default()
    };
    let mut model = FuseModel::<f64>::new(cfg)?;
    let mut rng = seed::stream(seed_value, "model-check", 0);
    perturb_bn(&mut model.params, &mut rng);
    let inputs: Vec<Tensor<f64>> = (0..2).map(|_| uniform(&mut rng, &[1, 8, 8, 8], 0.05, 0.95)).collect();
    let ids: Vec<ParamId> = model.params.iter().map(|(id, _)| id).collect();
    let points: Vec<Tensor<f64>> = model.params.iter().map(|(_, p)| p.value.clone()).collect();
    let model = std::cell::RefCell::new(model);
    let buffers = model.borrow().buffers.clone();
    let f = |g: &mut Graph<f64>, v: &[Val<f64>]| -> Result<Val<f64>> {
        for (id, p) in ids.iter().zip(v) {
            g.bind_param(*id, p);
        }
        let mut m = model.borrow_mut();
        m.buffers = buffers.clone();
        let xs: Vec<Val<f64>> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let fwd = m.forward(g, &xs, &mut seed::stream(seed_value, "dropout", 0))?;
        let losses = fwd
            .reconstructions
            .iter()
            .zip(&xs)
            .map(|(r, x)| g.bce(r, x))
            .collect::<Result<Vec<_>>>()?;
        g.sum(&losses)
    };
    check_gradients(
        f,
        &points,
        GradCheckOptions {
            max_coords: Some(coords_per_param),
            seed: seed_value,
            ..Default::default()
        },
    )
}
