use fusestrata_core::reconmetrics::*;
use fusestrata_core::volio::Volume;
use proptest::prelude::*;

fn volume(dims: [usize; 3]) -> impl Strategy<Value = Volume> {
    prop::collection::vec(0.0f32..1.0, dims.iter().product::<usize>())
        .prop_map(move |v| Volume::new(dims, v, "m1").unwrap())
}

proptest! {
    #[test]
    fn normdiff_bounded_and_antisymmetric(a in volume([4, 4, 3]), b in volume([4, 4, 3])) {
        let d = normdiff_median(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&d));
        prop_assert_eq!(normdiff_median(&b, &a).unwrap(), -d);
        for (&x, &y) in a.voxels.iter().zip(&b.voxels) {
            let v = normdiff(x as f64, y as f64);
            prop_assert!((-1.0..=1.0).contains(&v));
            prop_assert_eq!(normdiff(y as f64, x as f64), -v);
        }
        prop_assert!(mse(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn cnr_invariant_under_doubling(v in volume([8, 8, 6]), seed in 0u64..1000) {
        let cfg = CnrConfig { n_pairs: 20, seed, ..CnrConfig::default() };
        let doubled = Volume::new(v.dims, v.voxels.iter().map(|x| 2.0 * x).collect(), "m1").unwrap();
        prop_assert_eq!(cnr_median(&v, &cfg).unwrap(), cnr_median(&doubled, &cfg).unwrap());
        let cmp = cnr_normdiff(&v, &v, &cfg).unwrap();
        prop_assert_eq!(cmp.normdiff, 0.0);
    }

    #[test]
    fn metrics_are_deterministic(a in volume([8, 8, 6]), b in volume([8, 8, 6])) {
        let cfg = CnrConfig { n_pairs: 50, ..CnrConfig::default() };
        prop_assert_eq!(evaluate(&a, &b, &cfg).unwrap(), evaluate(&a, &b, &cfg).unwrap());
    }
}

#[test]
fn hand_values() {
    let real = Volume::new([2, 2, 2], vec![0.4; 8], "m1").unwrap();
    let rec = Volume::new([2, 2, 2], vec![0.5; 8], "m1").unwrap();
    assert!((mse(&real, &rec).unwrap() - 0.01).abs() < 1e-7);
    let rec6 = Volume::new([2, 2, 2], vec![0.6; 8], "m1").unwrap();
    // f32 inputs: 0.2 / 1.0 up to single-precision representation
    let d = normdiff_median(&real, &rec6).unwrap();
    assert!((d - (0.6f32 as f64 - 0.4f32 as f64) / (0.6f32 as f64 + 0.4f32 as f64)).abs() < 1e-12);
    assert!((normdiff(1.0, 2.0) - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(normdiff(0.0, 0.0), 0.0);
    assert!((pair_cnr(&[1.0; 48], &[0.0; 48]) - 2.0).abs() < 1e-12);
}

#[test]
fn eligibility_excludes_background_rois() {
    // left half foreground, right half zero
    let dims = [8, 4, 3];
    let mut vox = vec![0.0f32; 8 * 4 * 3];
    for z in 0..3 {
        for y in 0..4 {
            for x in 0..4 {
                vox[(z * 4 + y) * 8 + x] = 0.3 + 0.01 * (x + y + z) as f32;
            }
        }
    }
    let vol = Volume::new(dims, vox, "m1").unwrap();
    let grid = RoiGrid::new(dims, [4, 4, 3]).unwrap();
    assert_eq!(grid.len(), 2);
    assert_eq!(grid.eligible(&vol, &CnrConfig::default()), vec![0]);
    assert!(matches!(cnr_median(&vol, &CnrConfig::default()), Err(MetricError::TooFewRois(1))));
}
