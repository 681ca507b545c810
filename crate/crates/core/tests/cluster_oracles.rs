use fusestrata_core::apcluster::*;
use fusestrata_core::seed;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Textbook message passing on nested matrices.
struct ReferenceAp {
    s: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    lam: f64,
}

impl ReferenceAp {
    fn new(points: &[Vec<f64>], pref: f64, lam: f64) -> Self {
        let n = points.len();
        let mut s = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in 0..n {
                s[i][k] = if i == k {
                    pref
                } else {
                    -points[i].iter().zip(&points[k]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                };
            }
        }
        Self {
            s,
            r: vec![vec![0.0; n]; n],
            a: vec![vec![0.0; n]; n],
            lam,
        }
    }

    fn iterate(&mut self) {
        let n = self.s.len();
        let old_r = self.r.clone();
        for i in 0..n {
            for k in 0..n {
                let mut best = f64::NEG_INFINITY;
                for kk in 0..n {
                    if kk != k {
                        best = best.max(self.a[i][kk] + self.s[i][kk]);
                    }
                }
                self.r[i][k] = self.lam * old_r[i][k] + (1.0 - self.lam) * (self.s[i][k] - best);
            }
        }
        let old_a = self.a.clone();
        for k in 0..n {
            let pos = |ii: usize| if ii == k { self.r[k][k] } else { self.r[ii][k].max(0.0) };
            let mut total = 0.0;
            for ii in 0..n {
                total += pos(ii);
            }
            for i in 0..n {
                let fresh = if i == k { total - pos(k) } else { (total - pos(i)).min(0.0) };
                self.a[i][k] = self.lam * old_a[i][k] + (1.0 - self.lam) * fresh;
            }
        }
    }
}

fn random_points(n: usize, dim: usize, seed_: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::stream(seed_, "test-points", 0);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect()
}

fn blobs(centers: &[[f64; 2]], per: usize, sigma: f64, seed_: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = seed::stream(seed_, "test-blobs", 0);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per {
            pts.push(vec![center[0] + noise.sample(&mut rng), center[1] + noise.sample(&mut rng)]);
            labels.push(c);
        }
    }
    (pts, labels)
}

#[test]
fn messages_match_reference_bit_for_bit() {
    for inst in 0..10u64 {
        let mut rng = seed::stream(99, "instance", inst);
        let n = rng.random_range(3..=30);
        let dim = rng.random_range(1..=4);
        let lam = [0.5, 0.6, 0.75, 0.9][inst as usize % 4];
        let pts = random_points(n, dim, inst);
        let sim = SimilarityMatrix::from_points(&pts).unwrap();
        let pref = sim.median_off_diagonal();
        let mut ours = AffinityPropagation::new(&sim, pref, lam).unwrap();
        let mut reference = ReferenceAp::new(&pts, pref, lam);
        for it in 0..200 {
            ours.step();
            reference.iterate();
            let flat_r: Vec<f64> = reference.r.concat();
            let flat_a: Vec<f64> = reference.a.concat();
            let same = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits());
            assert!(same(ours.responsibilities(), &flat_r), "instance {inst}, iteration {it}: r differs");
            assert!(same(ours.availabilities(), &flat_a), "instance {inst}, iteration {it}: a differs");
        }
    }
}

#[test]
fn two_blobs_at_median_preference() {
    let (pts, truth) = blobs(&[[0.0, 0.0], [10.0, 10.0]], 10, 0.5, 5);
    let sim = SimilarityMatrix::from_points(&pts).unwrap();
    let res = affinity_propagation(&sim, sim.median_off_diagonal(), 0.5, 1000, 50).unwrap();
    assert!(res.converged);
    assert_eq!(res.n_clusters, 2);
    assert_eq!(adjusted_rand_index(&res.labels, &truth), 1.0);
    for (i, &e) in res.exemplars.iter().enumerate() {
        assert_eq!(res.exemplars[e], e, "point {i} points at non-exemplar {e}");
    }
}

#[test]
fn scaling_coordinates_and_preference_keeps_exemplars() {
    let (pts, _) = blobs(&[[0.0, 0.0], [6.0, 1.0], [2.0, 7.0]], 8, 1.0, 8);
    let sim = SimilarityMatrix::from_points(&pts).unwrap();
    let pref = sim.median_off_diagonal();
    let base = affinity_propagation(&sim, pref, 0.7, 1000, 50).unwrap();
    for c in [0.5, 2.0, 4.0] {
        let scaled: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|v| v * c).collect()).collect();
        let ssim = SimilarityMatrix::from_points(&scaled).unwrap();
        let res = affinity_propagation(&ssim, pref * c * c, 0.7, 1000, 50).unwrap();
        assert_eq!(res.exemplars, base.exemplars, "scale {c}");
    }
}

#[test]
fn three_blob_grid_search() {
    let (pts, truth) = blobs(&[[0.0, 0.0], [10.0, 0.0], [5.0, 8.0]], 20, 1.0, 21);
    let grid = grid_search(&pts, &GridConfig::default()).unwrap();
    assert_eq!(grid.table.len(), 10 * 50);
    assert_eq!(grid.best.n_clusters, 3);
    assert!(adjusted_rand_index(&grid.best.labels, &truth) >= 0.9);
}

fn brute_silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = points.len();
    let dist = |i: usize, j: usize| -> f64 {
        points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let clusters: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    let mut total = 0.0;
    for i in 0..n {
        let own: Vec<usize> = (0..n).filter(|&j| labels[j] == labels[i] && j != i).collect();
        if own.is_empty() {
            continue;
        }
        let a = own.iter().map(|&j| dist(i, j)).sum::<f64>() / own.len() as f64;
        let mut b = f64::INFINITY;
        for &c in &clusters {
            if c == labels[i] {
                continue;
            }
            let other: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
            b = b.min(other.iter().map(|&j| dist(i, j)).sum::<f64>() / other.len() as f64);
        }
        if a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn silhouette_matches_brute_force(
        (points, labels) in (2usize..=50).prop_flat_map(|n| (
            prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), n),
            prop::collection::vec(0usize..4, n),
        ))
    ) {
        let distinct: std::collections::BTreeSet<_> = labels.iter().collect();
        // relabel densely so every label in 0..K is used
        let map: Vec<usize> = labels.iter().map(|l| distinct.iter().position(|d| *d == l).unwrap()).collect();
        match silhouette(&points, &map) {
            Ok(s) => {
                prop_assert!(distinct.len() >= 2);
                prop_assert!((-1.0..=1.0).contains(&s));
                prop_assert!((s - brute_silhouette(&points, &map)).abs() < 1e-10);
            }
            Err(_) => prop_assert!(distinct.len() < 2),
        }
    }

    #[test]
    fn ap_is_deterministic(seed_ in 0u64..1000) {
        let pts = random_points(12, 2, seed_);
        let sim = SimilarityMatrix::from_points(&pts).unwrap();
        let p = sim.median_off_diagonal();
        let a = affinity_propagation(&sim, p, 0.8, 300, 30).unwrap();
        let b = affinity_propagation(&sim, p, 0.8, 300, 30).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn silhouette_hand_cases() {
    let pts = vec![vec![0.0], vec![0.01], vec![100.0], vec![100.01]];
    assert!(silhouette(&pts, &[0, 0, 1, 1]).unwrap() > 0.99);
    // point 1 is equidistant (a = b), point 2 is a singleton: only point 0 scores
    let mid = vec![vec![0.0], vec![1.0], vec![2.0]];
    let s = silhouette(&mid, &[0, 0, 1]).unwrap();
    assert!((s - 0.5 / 3.0).abs() < 1e-15);
    assert!(matches!(silhouette(&mid, &[0, 0, 0]), Err(ClusterError::SilhouetteUndefined(1))));
}
