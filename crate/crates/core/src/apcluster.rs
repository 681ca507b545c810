//! Affinity propagation on negative squared Euclidean similarities,
//! silhouette scoring and the damping × preference grid search.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats_util::percentile;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("similarity matrix must be square and non-empty (got {0} entries)")]
    NotSquare(usize),
    #[error("damping must lie in [0.5, 1), got {0}")]
    BadDamping(f64),
    #[error("silhouette undefined: need at least 2 clusters, got {0}")]
    SilhouetteUndefined(usize),
    #[error("labels ({labels}) do not match points ({points})")]
    LengthMismatch { labels: usize, points: usize },
    #[error("grid search needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("points have inconsistent dimensionality")]
    RaggedPoints,
    #[error("no grid cell produced a converged clustering with K >= 2 ({} cells evaluated)", .table.len())]
    NoValidCell { table: Vec<GridCell> },
}

pub type Result<T> = std::result::Result<T, ClusterError>;

/// Dense `n × n` similarities, `s(i,k) = −‖xᵢ − x_k‖²`. The diagonal is
/// left at zero; affinity propagation overwrites it with the preference.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(ClusterError::NotSquare(0));
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(ClusterError::RaggedPoints);
        }
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for k in (i + 1)..n {
                let d2: f64 = points[i].iter().zip(&points[k]).map(|(a, b)| (a - b) * (a - b)).sum();
                data[i * n + k] = -d2;
                data[k * n + i] = -d2;
            }
        }
        Ok(Self { n, data })
    }

    pub fn from_dense(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(ClusterError::NotSquare(data.len()));
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.n + k]
    }

    pub fn off_diagonal(&self) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| (i, k)))
            .map(|(i, k)| self.data[i * n + k])
            .collect()
    }

    pub fn median_off_diagonal(&self) -> f64 {
        percentile(&self.off_diagonal(), 50.0).unwrap_or(0.0)
    }
}

/// Outcome of one affinity-propagation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Exemplar index for every point; exemplars point to themselves.
    pub exemplars: Vec<usize>,
    /// Cluster labels `0..K`, numbered by ascending exemplar index.
    pub labels: Vec<usize>,
    pub n_clusters: usize,
    pub damping: f64,
    pub preference: f64,
    pub iterations: usize,
    pub converged: bool,
    pub silhouette: Option<f64>,
}

/// Message-passing state. Exposed step by step so trajectories can be
/// compared against other implementations.
#[derive(Debug, Clone)]
pub struct AffinityPropagation {
    n: usize,
    damping: f64,
    preference: f64,
    s: Vec<f64>,
    r: Vec<f64>,
    a: Vec<f64>,
}

impl AffinityPropagation {
    pub fn new(sim: &SimilarityMatrix, preference: f64, damping: f64) -> Result<Self> {
        if !(0.5..1.0).contains(&damping) {
            return Err(ClusterError::BadDamping(damping));
        }
        let n = sim.n;
        let mut s = sim.data.clone();
        for i in 0..n {
            s[i * n + i] = preference;
        }
        Ok(Self {
            n,
            damping,
            preference,
            s,
            r: vec![0.0; n * n],
            a: vec![0.0; n * n],
        })
    }

    pub fn responsibilities(&self) -> &[f64] {
        &self.r
    }

    pub fn availabilities(&self) -> &[f64] {
        &self.a
    }

    /// One damped responsibility update followed by one damped
    /// availability update.
    pub fn step(&mut self) {
        let n = self.n;
        let lam = self.damping;
        for i in 0..n {
            let row = i * n;
            let (mut max1, mut arg1, mut max2) = (f64::NEG_INFINITY, 0, f64::NEG_INFINITY);
            for k in 0..n {
                let v = self.a[row + k] + self.s[row + k];
                if v > max1 {
                    max2 = max1;
                    max1 = v;
                    arg1 = k;
                } else if v > max2 {
                    max2 = v;
                }
            }
            for k in 0..n {
                let competitor = if k == arg1 { max2 } else { max1 };
                let fresh = self.s[row + k] - competitor;
                self.r[row + k] = lam * self.r[row + k] + (1.0 - lam) * fresh;
            }
        }
        let mut rp = vec![0.0; n];
        for k in 0..n {
            let mut colsum = 0.0;
            for (i, slot) in rp.iter_mut().enumerate() {
                let r = self.r[i * n + k];
                *slot = if i == k { r } else { r.max(0.0) };
                colsum += *slot;
            }
            for (i, &p) in rp.iter().enumerate() {
                let mut fresh = colsum - p;
                if i != k {
                    fresh = fresh.min(0.0);
                }
                let idx = i * n + k;
                self.a[idx] = lam * self.a[idx] + (1.0 - lam) * fresh;
            }
        }
    }

    /// Points whose self-responsibility plus self-availability is positive.
    pub fn exemplar_mask(&self) -> Vec<bool> {
        let n = self.n;
        (0..n).map(|k| self.r[k * n + k] + self.a[k * n + k] > 0.0).collect()
    }

    /// Iterates until the exemplar set is unchanged for
    /// `convergence_window` consecutive iterations (with at least one
    /// exemplar) or `max_iter` is reached.
    pub fn run(mut self, max_iter: usize, convergence_window: usize) -> ClusterResult {
        let mut prev: Option<Vec<bool>> = None;
        let mut stable = 0;
        let mut converged = false;
        let mut iterations = 0;
        for it in 0..max_iter {
            self.step();
            iterations = it + 1;
            let mask = self.exemplar_mask();
            stable = match &prev {
                Some(p) if *p == mask => stable + 1,
                _ => 1,
            };
            let any = mask.iter().any(|&e| e);
            prev = Some(mask);
            if any && stable >= convergence_window {
                converged = true;
                break;
            }
        }
        self.assign(converged, iterations)
    }

    fn assign(&self, converged: bool, iterations: usize) -> ClusterResult {
        let n = self.n;
        let mut centers: Vec<usize> = self
            .exemplar_mask()
            .iter()
            .enumerate()
            .filter_map(|(k, &e)| e.then_some(k))
            .collect();
        let converged = converged && !centers.is_empty();
        if centers.is_empty() {
            // no exemplar emerged: fall back to the best self-evidence
            let best = (0..n)
                .map(|k| self.r[k * n + k] + self.a[k * n + k])
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
            centers.push(best.0);
        }
        let mut exemplars = vec![0; n];
        for (i, slot) in exemplars.iter_mut().enumerate() {
            *slot = if centers.binary_search(&i).is_ok() {
                i
            } else {
                let mut best = centers[0];
                for &c in &centers[1..] {
                    if self.s[i * n + c] > self.s[i * n + best] {
                        best = c;
                    }
                }
                best
            };
        }
        let labels = exemplars
            .iter()
            .map(|e| centers.binary_search(e).expect("exemplar is a center"))
            .collect();
        ClusterResult {
            exemplars,
            labels,
            n_clusters: centers.len(),
            damping: self.damping,
            preference: self.preference,
            iterations,
            converged,
            silhouette: None,
        }
    }
}

/// Runs affinity propagation to completion.
pub fn affinity_propagation(
    sim: &SimilarityMatrix,
    preference: f64,
    damping: f64,
    max_iter: usize,
    convergence_window: usize,
) -> Result<ClusterResult> {
    Ok(AffinityPropagation::new(sim, preference, damping)?.run(max_iter, convergence_window))
}

/// Pairwise Euclidean distances, row-major `n × n`.
pub fn distance_matrix(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for k in (i + 1)..n {
            let v = points[i]
                .iter()
                .zip(&points[k])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d[i * n + k] = v;
            d[k * n + i] = v;
        }
    }
    d
}

/// Mean silhouette from a precomputed distance matrix.
pub fn silhouette_from_distances(dist: &[f64], labels: &[usize]) -> Result<f64> {
    let n = labels.len();
    if dist.len() != n * n {
        return Err(ClusterError::LengthMismatch {
            labels: n,
            points: (dist.len() as f64).sqrt() as usize,
        });
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let nonempty = sizes.iter().filter(|&&s| s > 0).count();
    if nonempty < 2 {
        return Err(ClusterError::SilhouetteUndefined(nonempty));
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            sums[labels[j]] += dist[i * n + j];
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Mean silhouette `(b − a) / max(a, b)` with Euclidean distance.
/// Points in singleton clusters contribute 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(ClusterError::LengthMismatch {
            labels: labels.len(),
            points: points.len(),
        });
    }
    silhouette_from_distances(&distance_matrix(points), labels)
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1) / 2) as f64;
    let index: f64 = table.iter().map(|&v| c2(v)).sum();
    let rows: f64 = (0..ka).map(|i| c2(table[i * kb..(i + 1) * kb].iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2((0..ka).map(|i| table[i * kb + j]).sum())).sum();
    let total = c2(n as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n_damping: usize,
    pub n_preference: usize,
    /// Percentiles of the off-diagonal similarities bounding the
    /// preference grid.
    pub preference_lo_pct: f64,
    pub preference_hi_pct: f64,
    pub max_iter: usize,
    pub convergence_window: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_damping: 10,
            n_preference: 50,
            preference_lo_pct: 1.0,
            preference_hi_pct: 99.0,
            max_iter: 1000,
            convergence_window: 50,
        }
    }
}

impl GridConfig {
    /// The full 10 × 1000 grid.
    pub fn full() -> Self {
        Self {
            n_preference: 1000,
            ..Self::default()
        }
    }

    /// `n_damping` equally spaced values in `[0.5, 1)`.
    pub fn damping_values(&self) -> Vec<f64> {
        (0..self.n_damping)
            .map(|i| 0.5 + 0.5 * i as f64 / self.n_damping as f64)
            .collect()
    }

    /// `n_preference` equally spaced values between the configured
    /// percentiles of the off-diagonal similarities, endpoints included.
    pub fn preference_values(&self, sim: &SimilarityMatrix) -> Vec<f64> {
        let off = sim.off_diagonal();
        let lo = percentile(&off, self.preference_lo_pct).unwrap_or(0.0);
        let hi = percentile(&off, self.preference_hi_pct).unwrap_or(0.0);
        match self.n_preference {
            0 => Vec::new(),
            1 => vec![lo],
            m => (0..m).map(|j| lo + (hi - lo) * j as f64 / (m - 1) as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub damping: f64,
    pub preference: f64,
    pub n_clusters: usize,
    pub converged: bool,
    pub iterations: usize,
    /// `None` for skipped cells (K < 2 or not converged).
    pub silhouette: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: ClusterResult,
    /// One row per grid cell, damping-major.
    pub table: Vec<GridCell>,
}

/// Evaluates every (damping, preference) cell and keeps the converged
/// clustering with K ≥ 2 and the highest silhouette. Ties go to the
/// smaller damping, then the smaller preference.
pub fn grid_search(points: &[Vec<f64>], cfg: &GridConfig) -> Result<GridResult> {
    if points.len() < 3 {
        return Err(ClusterError::TooFewPoints(points.len()));
    }
    let sim = SimilarityMatrix::from_points(points)?;
    let dist = distance_matrix(points);
    let prefs = cfg.preference_values(&sim);
    let mut table = Vec::with_capacity(cfg.n_damping * prefs.len());
    let mut best: Option<ClusterResult> = None;
    for damping in cfg.damping_values() {
        for &preference in &prefs {
            let mut res = affinity_propagation(&sim, preference, damping, cfg.max_iter, cfg.convergence_window)?;
            let score = if res.converged && res.n_clusters >= 2 {
                Some(silhouette_from_distances(&dist, &res.labels)?)
            } else {
                None
            };
            res.silhouette = score;
            table.push(GridCell {
                damping,
                preference,
                n_clusters: res.n_clusters,
                converged: res.converged,
                iterations: res.iterations,
                silhouette: score,
            });
            if let Some(s) = score {
                if best.as_ref().is_none_or(|b| s > b.silhouette.unwrap_or(f64::NEG_INFINITY)) {
                    best = Some(res);
                }
            }
        }
    }
    match best {
        Some(best) => Ok(GridResult { best, table }),
        None => Err(ClusterError::NoValidCell { table }),
    }
}
