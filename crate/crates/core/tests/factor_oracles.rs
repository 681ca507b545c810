use fusestrata_core::factors::*;
use fusestrata_core::seed;
use fusestrata_core::volio::{synth_dataset, SynthConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand_distr::{Distribution, Normal};

fn planar(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

fn simple_structure() -> DMatrix<f64> {
    DMatrix::from_row_slice(6, 2, &[0.8, 0.0, 0.7, 0.0, 0.6, 0.0, 0.0, 0.9, 0.0, 0.7, 0.0, 0.5])
}

#[test]
fn varimax_recovers_rotated_simple_structure() {
    let truth = simple_structure();
    let mixed = &truth * planar(30f64.to_radians());
    let vm = varimax(&mixed, &VarimaxConfig::default());

    // exhaustive search over the rotation angle in 0.01 degree steps
    let mut grid_best = f64::NEG_INFINITY;
    for step in 0..9000 {
        let theta = (step as f64 * 0.01).to_radians();
        grid_best = grid_best.max(varimax_objective(&(&mixed * planar(theta)), true));
    }
    let got = varimax_objective(&vm.rotated, true);
    assert!((got - grid_best).abs() < 1e-6, "varimax {got} vs grid {grid_best}");
    assert!(got >= grid_best - 1e-12);

    // same matrix up to column sign and order
    let direct = (vm.rotated.abs() - truth.abs()).abs().max();
    let swapped = {
        let mut t = truth.abs();
        t.swap_columns(0, 1);
        (vm.rotated.abs() - t).abs().max()
    };
    assert!(direct.min(swapped) < 1e-8, "direct {direct}, swapped {swapped}");
}

#[test]
fn varimax_trace_is_monotone_and_rotation_orthogonal() {
    let mut rng = seed::stream(5, "loadings", 0);
    let n = Normal::new(0.0, 0.5).unwrap();
    for _ in 0..20 {
        let l = DMatrix::from_fn(9, 3, |_, _| n.sample(&mut rng));
        for kaiser in [true, false] {
            let cfg = VarimaxConfig {
                kaiser_normalize: kaiser,
                ..VarimaxConfig::default()
            };
            let vm = varimax(&l, &cfg);
            for w in vm.criterion_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-12, "criterion decreased: {w:?}");
            }
            let rtr = vm.rotation.transpose() * &vm.rotation;
            assert!((rtr - DMatrix::identity(3, 3)).abs().max() < 1e-10);
            assert!((&vm.rotated - &l * &vm.rotation).abs().max() < 1e-10);
            let before: Vec<f64> = l.row_iter().map(|r| r.norm_squared()).collect();
            let after: Vec<f64> = vm.rotated.row_iter().map(|r| r.norm_squared()).collect();
            for (a, b) in before.iter().zip(&after) {
                assert!((a - b).abs() < 1e-10);
            }
            for j in 0..3 {
                let col = vm.rotated.column(j);
                let big = col.iter().cloned().fold(0.0_f64, |m, v| if v.abs() > m.abs() { v } else { m });
                assert!(big > 0.0);
            }
        }
    }
}

#[test]
fn regression_scores_recover_generating_factors() {
    let (n, p) = (400, 6);
    let mut rng = seed::stream(17, "scores", 0);
    let unit = Normal::new(0.0, 1.0).unwrap();
    // orthonormal loading columns
    let raw = DMatrix::from_fn(p, 2, |_, _| unit.sample(&mut rng));
    let lambda = raw.qr().q();
    let f = DMatrix::from_fn(n, 2, |_, _| unit.sample(&mut rng));
    let noise = DMatrix::from_fn(n, p, |_, _| 0.01 * unit.sample(&mut rng));
    let z = &f * lambda.transpose() + noise;
    let corr = &lambda * lambda.transpose() + DMatrix::identity(p, p) * 0.01;
    let scores = factor_scores_regression(&z, &corr, &lambda).unwrap();
    for j in 0..2 {
        let r = pearson(scores.column(j).as_slice(), f.column(j).as_slice());
        assert!(r > 0.999, "factor {j}: r = {r}");
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn fitted_model_invariants_on_synthetic_phenotypes() {
    let s = synth_dataset(&SynthConfig {
        dims: [8, 8, 8],
        n_subjects: 120,
        ..SynthConfig::default()
    })
    .unwrap();
    let model = fit_factor_model(&s.phenotypes, &VarimaxConfig::default()).unwrap();
    let p = s.phenotypes.n_variables();
    assert!((model.eigenvalues.iter().sum::<f64>() - p as f64).abs() < 1e-10);
    assert!(model.k >= 1);
    let retained: f64 = model.eigenvalues[..model.k].iter().sum();
    assert!((model.explained_variance - retained / p as f64).abs() < 1e-15);
    for j in 0..model.k {
        let mean = model.scores.column(j).sum() / model.scores.nrows() as f64;
        assert!(mean.abs() < 1e-10);
        for m in (j + 1)..model.k {
            let dot = model.unrotated.column(j).dot(&model.unrotated.column(m));
            assert!(dot.abs() < 1e-10);
        }
    }
    assert!((&model.rotated - &model.unrotated * &model.rotation).abs().max() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pca_trace_identity(seed_ in 0u64..10_000, p in 2usize..8) {
        let mut rng = seed::stream(seed_, "pca", 0);
        let unit = Normal::new(0.0, 1.0).unwrap();
        let n = 30;
        let shared: Vec<f64> = (0..n).map(|_| unit.sample(&mut rng)).collect();
        let mut z = DMatrix::from_fn(n, p, |i, _| shared[i] + unit.sample(&mut rng));
        for mut col in z.column_iter_mut() {
            let m = col.sum() / n as f64;
            col.add_scalar_mut(-m);
            let sd = (col.norm_squared() / (n as f64 - 1.0)).sqrt();
            col /= sd;
        }
        let corr = correlation(&z);
        if let Ok(pca) = pca_retain_corr(&corr) {
            prop_assert!((pca.eigenvalues.iter().sum::<f64>() - p as f64).abs() < 1e-10);
            for w in pca.eigenvalues.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
        }
    }
}
