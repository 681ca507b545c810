use fusestrata_core::seed;
use fusestrata_nn::blocks::{conv_kind, midflow_counts, ConvBlock, DownConv, MidFlow, UpConv};
use fusestrata_nn::ops;
use fusestrata_nn::{Backend, Buffers, Eager, FuseModel, Graph, ModelConfig, NnError, ParamRole, ParamStore, Tensor};
use rand::Rng;

fn rng() -> rand_chacha::ChaCha8Rng {
    seed::stream(0, "test", 0)
}

fn random(shape: &[usize], s: u64) -> Tensor<f32> {
    let mut r = seed::stream(s, "input", 0);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
}

fn block(store: &mut ParamStore<f32>, buffers: &mut Buffers<f32>, kind: &str, ci: usize, co: usize) -> ConvBlock<f32> {
    let name = format!("b{}", store.len());
    ConvBlock::new(store, buffers, name, conv_kind(kind).unwrap(), ci, co, 3, 0.1).unwrap()
}

#[test]
fn conv_block_output_channels_follow_config() {
    for kind in ["standard", "separable"] {
        let (mut store, mut buffers) = (ParamStore::new(1), Buffers::default());
        let b = block(&mut store, &mut buffers, kind, 3, 5);
        let mut be = Eager::new(true);
        let x = be.constant(random(&[3, 4, 4, 2], 1));
        let y = b.forward(&mut be, &store, &mut buffers, &x, &mut rng()).unwrap();
        assert_eq!(be.value(&y).shape, vec![5, 4, 4, 2], "{kind}");
    }
}

#[test]
fn conv_block_with_unit_kernel_is_elu_of_normalized_input() {
    let (mut store, mut buffers) = (ParamStore::<f64>::new(1), Buffers::default());
    let b = ConvBlock::new(&mut store, &mut buffers, "b", conv_kind("standard").unwrap(), 1, 1, 1, 0.0).unwrap();
    let w = store.find("b.conv.w").unwrap();
    store.value_mut(w).data[0] = 1.0;
    let x = Tensor::from_vec(&[1, 4, 4, 4], (0..64).map(|i| if (i * 7) % 3 == 0 { 1.0 } else { -1.0 }).collect()).unwrap();
    let mean = x.data.iter().sum::<f64>() / 64.0;
    let sd = (x.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0).sqrt();
    let unit: Tensor<f64> = Tensor::from_vec(&x.shape, x.data.iter().map(|v| (v - mean) / sd).collect()).unwrap();
    let mut g = Graph::new(true);
    let xv = g.leaf(unit.clone(), false);
    let y = b.forward(&mut g, &store, &mut buffers, &xv, &mut rng()).unwrap();
    for (o, i) in g.value(&y).data.iter().zip(&unit.data) {
        assert!((o - ops::elu_scalar(*i)).abs() < 1e-3, "{o} vs {i}");
    }
}

#[test]
fn conv_block_is_deterministic_at_inference() {
    let (mut store, mut buffers) = (ParamStore::new(2), Buffers::default());
    let b = block(&mut store, &mut buffers, "standard", 1, 2);
    let x = random(&[1, 4, 4, 4], 2);
    let run = |buffers: &mut Buffers<f32>, s: u64| {
        let mut be = Eager::inference();
        let xv = be.constant(x.clone());
        let y = b.forward(&mut be, &store, buffers, &xv, &mut seed::stream(s, "d", 0)).unwrap();
        be.value(&y).clone()
    };
    assert_eq!(run(&mut buffers, 1), run(&mut buffers, 2));
}

#[test]
fn zero_branch_midflow_is_identity() {
    let (mut store, mut buffers) = (ParamStore::<f32>::new(3), Buffers::default());
    let mid = MidFlow::new(&mut store, &mut buffers, "mid", "separable", 3, 5).unwrap();
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.role != ParamRole::BnGamma).map(|(id, _)| id).collect();
    for id in ids {
        store.value_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
    }
    let x = random(&[3, 6, 4, 2], 3);
    for training in [true, false] {
        let mut be = Eager::new(training);
        let xv = be.constant(x.clone());
        let y = mid.forward(&mut be, &store, &mut buffers, &xv, &mut rng()).unwrap();
        assert_eq!(be.value(&y), &x);
    }
    let mut be = Eager::new(true);
    let wrong = be.constant(random(&[2, 6, 4, 2], 4));
    assert!(matches!(
        mid.forward(&mut be, &store, &mut buffers, &wrong, &mut rng()),
        Err(NnError::Channels { expected: 3, found: 2 })
    ));
}

#[test]
fn down_and_up_conv_shapes() {
    let (mut store, mut buffers) = (ParamStore::new(4), Buffers::default());
    let mut be = Eager::new(true);
    let down = DownConv::new(block(&mut store, &mut buffers, "standard", 2, 4));
    let x = be.constant(random(&[2, 64, 64, 48], 5));
    let y = down.forward(&mut be, &store, &mut buffers, &x, &mut rng()).unwrap();
    assert_eq!(be.value(&y).shape, vec![4, 32, 32, 24]);

    let down2 = DownConv::new(block(&mut store, &mut buffers, "standard", 4, 8));
    let z = down2.forward(&mut be, &store, &mut buffers, &y, &mut rng()).unwrap();
    assert_eq!(be.value(&z).shape, vec![8, 16, 16, 12]);

    let up = UpConv {
        block: block(&mut store, &mut buffers, "standard", 32, 16),
    };
    let b = be.constant(random(&[32, 4, 4, 3], 6));
    let u = up.forward(&mut be, &store, &mut buffers, &b, &mut rng()).unwrap();
    assert_eq!(be.value(&u).shape, vec![16, 8, 8, 6]);

    let odd = be.constant(random(&[2, 5, 4, 4], 7));
    assert!(down.forward(&mut be, &store, &mut buffers, &odd, &mut rng()).is_err());
}

#[test]
fn channel_schedule_and_embedding_lengths() {
    let full = ModelConfig::default();
    let chans: Vec<usize> = (1..=5).map(|l| full.channels(l)).collect();
    assert_eq!(chans, vec![2, 4, 8, 16, 32]);
    let dims: Vec<[usize; 3]> = (1..=5).map(|l| full.level_dims(l)).collect();
    assert_eq!(dims, vec![[64, 64, 48], [32, 32, 24], [16, 16, 12], [8, 8, 6], [4, 4, 3]]);
    assert_eq!(full.bottleneck_shape(), [32, 4, 4, 3]);
    assert_eq!(full.embedding_len(), 1536);
    let source = 2 * 256 * 256 * 192;
    assert_eq!(source / full.embedding_len(), 16384);

    let desk = ModelConfig::desk();
    assert_eq!(desk.bottleneck_shape(), [8, 4, 4, 3]);
    assert_eq!(desk.bottleneck_shape().iter().product::<usize>(), 384);
    assert_eq!(desk.embedding_len(), 384);
    for d in [1usize, 2, 3, 4] {
        let cfg = ModelConfig {
            input_dims: [16 * 3, 16 * 2, 16],
            depth: d,
            embedding_channels: 5,
            ..ModelConfig::default()
        };
        let [x, y, z] = cfg.input_dims.map(|n| n >> d);
        assert_eq!(cfg.embedding_len(), x * y * z * 5);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        ModelConfig { input_dims: [30, 32, 24], ..ModelConfig::desk() },
        ModelConfig { kernel: 4, ..ModelConfig::desk() },
        ModelConfig { dropout_rate: 1.0, ..ModelConfig::desk() },
        ModelConfig { midflow_kind: "dilated".into(), ..ModelConfig::desk() },
        ModelConfig { n_modalities: 0, ..ModelConfig::desk() },
    ];
    for cfg in bad {
        assert!(FuseModel::<f32>::new(cfg.clone()).is_err(), "{cfg:?}");
    }
}

#[test]
fn default_scale_encoder_levels() {
    let cfg = ModelConfig {
        n_modalities: 1,
        ..ModelConfig::default()
    };
    let mut model = FuseModel::<f32>::new(cfg).unwrap();
    let mut be = Eager::inference();
    let x = be.constant(Tensor::full(&[1, 128, 128, 96], 0.5));
    let enc = model.encode_one(&mut be, 0, &x, &mut rng()).unwrap();
    let shapes: Vec<Vec<usize>> = enc.skips.iter().map(|s| be.value(s).shape.clone()).collect();
    assert_eq!(
        shapes,
        vec![
            vec![2, 128, 128, 96],
            vec![2, 64, 64, 48],
            vec![4, 32, 32, 24],
            vec![8, 16, 16, 12],
            vec![16, 8, 8, 6]
        ]
    );
    assert_eq!(be.value(&enc.bottleneck).shape, vec![32, 4, 4, 3]);
    assert_eq!(be.value(&enc.bottleneck).numel(), 1536);
}

#[test]
fn desk_forward_shapes_and_range() {
    let mut model = FuseModel::<f32>::new(ModelConfig::desk()).unwrap();
    let mut be = Eager::inference();
    let inputs: Vec<_> = (0..2).map(|m| be.constant(random(&[1, 32, 32, 24], m))).collect();
    let fwd = model.forward(&mut be, &inputs, &mut rng()).unwrap();
    assert_eq!(be.value(&fwd.embedding).shape, vec![8, 4, 4, 3]);
    assert_eq!(be.value(&fwd.embedding).numel(), 384);
    for r in &fwd.reconstructions {
        let t = be.value(r);
        assert_eq!(t.shape, vec![1, 32, 32, 24]);
        assert!(t.data.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn decoder_skip_concat_matches_encoder_levels() {
    let cfg = ModelConfig::desk();
    let mut model = FuseModel::<f32>::new(cfg.clone()).unwrap();
    let mut be = Eager::inference();
    let x = be.constant(random(&[1, 32, 32, 24], 9));
    let enc = model.encode_one(&mut be, 0, &x, &mut rng()).unwrap();
    // decoder level l upsamples to level l−1 dims with channels(l−1) and
    // concatenates skip l−1 of the same shape
    for (l, s) in enc.skips.iter().enumerate() {
        let d = cfg.level_dims(l);
        assert_eq!(be.value(s).shape, vec![cfg.channels(l), d[0], d[1], d[2]]);
    }
    let short = enc.skips[..1].to_vec();
    let emb = be.constant(Tensor::zeros(&cfg.embedding_shape()));
    assert!(model.decode_one(&mut be, 0, &emb, &short, &mut rng()).is_err());
}

#[test]
fn zero_volumes_give_finite_outputs() {
    let mut model = FuseModel::<f32>::new(ModelConfig::desk()).unwrap();
    for training in [true, false] {
        let mut be = Eager::new(training);
        let inputs: Vec<_> = (0..2).map(|_| be.constant(Tensor::zeros(&[1, 32, 32, 24]))).collect();
        let fwd = model.forward(&mut be, &inputs, &mut rng()).unwrap();
        assert!(be.value(&fwd.embedding).is_finite());
        assert!(fwd.reconstructions.iter().all(|r| be.value(r).is_finite()));
    }
}

#[test]
fn permuted_modalities_with_permuted_fusion_weights_give_same_embedding() {
    let cfg = ModelConfig::desk();
    let mut model = FuseModel::<f32>::new(cfg.clone()).unwrap();
    let c = cfg.channels(cfg.depth);
    let [_, x, y, z] = cfg.bottleneck_shape();
    let a = random(&[c, x, y, z], 10);
    let b = random(&[c, x, y, z], 11);
    let mut be = Eager::inference();
    let (av, bv) = (be.constant(a), be.constant(b));
    let f1 = model.fuse(&mut be, &[av.clone(), bv.clone()]).unwrap();
    let e1 = be.value(&f1).clone();

    let id = model.params.find("fusion.conv.w").unwrap();
    let w = model.params.value(id).clone();
    let (eo, ci) = (w.shape[0], w.shape[1]);
    let mut swapped = w.clone();
    for o in 0..eo {
        for i in 0..ci {
            swapped.data[o * ci + (i + c) % ci] = w.data[o * ci + i];
        }
    }
    *model.params.value_mut(id) = swapped;
    let f2 = model.fuse(&mut be, &[bv.clone(), av]).unwrap();
    let e2 = be.value(&f2);
    assert!(e1.data.iter().zip(&e2.data).all(|(a, b)| (a - b).abs() < 1e-5));
    assert!(model.fuse(&mut be, &[bv]).is_err());
}

#[test]
fn midflow_parameter_ratio() {
    let (std, sep) = midflow_counts(32, 5).unwrap();
    assert_eq!(sep.weights, 3 * (125 * 32 + 32 * 32));
    assert_eq!(sep.weights, 15072);
    assert_eq!(std.weights, 3 * 125 * 32 * 32);
    assert_eq!(std.weights, 384000);
    // 384000/15072 = 25.48; compare exactly as 384000·10 vs 255·15072
    assert!(std.weights * 100 > 2547 * sep.weights && std.weights * 100 < 2548 * sep.weights);

    let (std, sep) = midflow_counts(24, 5).unwrap();
    // 125·24/(125+24) = 3000/149 ≈ 20.13
    assert_eq!(std.weights * 149, sep.weights * 3000);

    let (std, sep) = midflow_counts(1, 5).unwrap();
    assert_eq!(std.weights * 126, sep.weights * 125);
    assert!(std.weights < sep.weights);

    for c in 24..=64 {
        let (std, sep) = midflow_counts(c, 5).unwrap();
        let (s, p) = (std.weights + std.biases, sep.weights + sep.biases);
        assert!(s > 20 * p, "C={c}: {s} vs {p}");
        // within 1% of the closed form 125C/(125+C)
        let closed = 125.0 * c as f64 / (125.0 + c as f64);
        assert!(((s as f64 / p as f64) / closed - 1.0).abs() < 0.01);
    }
}

#[test]
fn param_count_is_a_function_of_config() {
    let a = FuseModel::<f32>::new(ModelConfig::desk()).unwrap().count_params();
    let b = FuseModel::<f32>::new(ModelConfig { init_seed: 99, ..ModelConfig::desk() }).unwrap().count_params();
    assert_eq!(a, b);
    assert_eq!(a.total.trainable(), 79_522);
    let bigger = FuseModel::<f32>::new(ModelConfig { embedding_channels: 16, ..ModelConfig::desk() }).unwrap();
    assert!(bigger.count_params().total.trainable() > a.total.trainable());
}

#[test]
fn gradient_reaches_every_parameter() {
    let cfg = ModelConfig {
        input_dims: [8, 8, 8],
        depth: 2,
        embedding_channels: 4,
        ..ModelConfig::default()
    };
    let mut model = FuseModel::<f32>::new(cfg).unwrap();
    let mut g = Graph::new(true);
    let xs: Vec<_> = (0..2).map(|m| g.leaf(random(&[1, 8, 8, 8], m), false)).collect();
    let fwd = model.forward(&mut g, &xs, &mut rng()).unwrap();
    let losses: Vec<_> = fwd.reconstructions.iter().zip(&xs).map(|(r, x)| g.bce(r, x).unwrap()).collect();
    let loss = g.sum(&losses).unwrap();
    g.backward(&loss).unwrap();
    assert_eq!(g.param_grads().len(), model.params.len());
}
