//! Reconstruction quality: mean squared error, the median normalized
//! difference and ROI-pair contrast-to-noise ratio.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::stats_util::median;
use crate::volio::Volume;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimMismatch([usize; 3], [usize; 3]),
    #[error("need at least 2 eligible ROIs, found {0}")]
    TooFewRois(usize),
    #[error("invalid ROI dims {0:?}")]
    InvalidRoi([usize; 3]),
}

pub type Result<T> = std::result::Result<T, MetricError>;

fn check_dims(a: &Volume, b: &Volume) -> Result<()> {
    if a.dims != b.dims {
        return Err(MetricError::DimMismatch(a.dims, b.dims));
    }
    Ok(())
}

pub fn mse(real: &Volume, rec: &Volume) -> Result<f64> {
    check_dims(real, rec)?;
    let sum: f64 = real
        .voxels
        .iter()
        .zip(&rec.voxels)
        .map(|(&a, &b)| {
            let d = f64::from(b) - f64::from(a);
            d * d
        })
        .sum();
    Ok(sum / real.len() as f64)
}

/// `(rec − real) / (rec + real)`, with `0/0` defined as 0.
#[inline]
pub fn normdiff(real: f64, rec: f64) -> f64 {
    let den = rec + real;
    if den == 0.0 {
        0.0
    } else {
        (rec - real) / den
    }
}

/// Voxelwise normalized difference collapsed by the median.
pub fn normdiff_median(real: &Volume, rec: &Volume) -> Result<f64> {
    check_dims(real, rec)?;
    let diffs: Vec<f64> = real
        .voxels
        .iter()
        .zip(&rec.voxels)
        .map(|(&a, &b)| normdiff(f64::from(a), f64::from(b)))
        .collect();
    Ok(median(&diffs).unwrap_or(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnrConfig {
    pub roi_dims: [usize; 3],
    pub n_pairs: usize,
    /// Voxels at or below this value count as background.
    pub background_threshold: f32,
    /// An ROI is discarded when its background fraction exceeds this.
    pub max_background_fraction: f64,
    pub seed: u64,
}

impl Default for CnrConfig {
    fn default() -> Self {
        Self {
            roi_dims: [4, 4, 3],
            n_pairs: 1000,
            background_threshold: 0.0,
            max_background_fraction: 0.5,
            seed: 0,
        }
    }
}

/// Regular tiling of a volume into ROI blocks. Trailing partial blocks
/// are dropped.
#[derive(Debug, Clone)]
pub struct RoiGrid {
    roi_dims: [usize; 3],
    /// Voxel indices per ROI, in tile order.
    rois: Vec<Vec<usize>>,
}

impl RoiGrid {
    pub fn new(dims: [usize; 3], roi_dims: [usize; 3]) -> Result<Self> {
        if roi_dims.contains(&0) {
            return Err(MetricError::InvalidRoi(roi_dims));
        }
        let tiles = [dims[0] / roi_dims[0], dims[1] / roi_dims[1], dims[2] / roi_dims[2]];
        let mut rois = Vec::with_capacity(tiles[0] * tiles[1] * tiles[2]);
        for tz in 0..tiles[2] {
            for ty in 0..tiles[1] {
                for tx in 0..tiles[0] {
                    let mut idx = Vec::with_capacity(roi_dims.iter().product());
                    for z in tz * roi_dims[2]..(tz + 1) * roi_dims[2] {
                        for y in ty * roi_dims[1]..(ty + 1) * roi_dims[1] {
                            for x in tx * roi_dims[0]..(tx + 1) * roi_dims[0] {
                                idx.push(x + dims[0] * (y + dims[1] * z));
                            }
                        }
                    }
                    rois.push(idx);
                }
            }
        }
        Ok(Self { roi_dims, rois })
    }

    pub fn len(&self) -> usize {
        self.rois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rois.is_empty()
    }

    pub fn roi_dims(&self) -> [usize; 3] {
        self.roi_dims
    }

    /// Indices of ROIs whose background fraction does not exceed the limit.
    pub fn eligible(&self, vol: &Volume, cfg: &CnrConfig) -> Vec<usize> {
        (0..self.rois.len())
            .filter(|&r| {
                let idx = &self.rois[r];
                let bg = idx.iter().filter(|&&i| vol.voxels[i] <= cfg.background_threshold).count();
                (bg as f64) <= cfg.max_background_fraction * idx.len() as f64
            })
            .collect()
    }

    fn values(&self, vol: &Volume, roi: usize) -> Vec<f64> {
        self.rois[roi].iter().map(|&i| f64::from(vol.voxels[i])).collect()
    }
}

/// `(mean₁ − mean₂) / std(pooled)` with population std; 0 when the pooled
/// voxels are constant.
pub fn pair_cnr(roi1: &[f64], roi2: &[f64]) -> f64 {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m1, m2) = (mean(roi1), mean(roi2));
    let n = (roi1.len() + roi2.len()) as f64;
    let pooled_mean = (m1 * roi1.len() as f64 + m2 * roi2.len() as f64) / n;
    let var = roi1.iter().chain(roi2).map(|v| (v - pooled_mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        0.0
    } else {
        (m1 - m2) / var.sqrt()
    }
}

/// Draws `n_pairs` distinct unordered ROI pairs (fewer when the eligible
/// set cannot supply that many). ROIs may repeat across pairs.
pub fn sample_pairs(eligible: &[usize], n_pairs: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let m = eligible.len();
    if m < 2 {
        return Err(MetricError::TooFewRois(m));
    }
    let total = m * (m - 1) / 2;
    let mut rng = seed::stream(seed, "cnr-pairs", 0);
    let decode = |k: usize| {
        // k-th pair (a, b), a < b, in row-major order of the upper triangle
        let mut a = 0;
        let mut rem = k;
        while rem >= m - 1 - a {
            rem -= m - 1 - a;
            a += 1;
        }
        (eligible[a], eligible[a + 1 + rem])
    };
    if n_pairs >= total {
        return Ok((0..total).map(decode).collect());
    }
    if total <= 4 * n_pairs {
        return Ok(index::sample(&mut rng, total, n_pairs).into_iter().map(decode).collect());
    }
    // sparse draw: rejection on a seen-set keeps the cost O(n_pairs)
    let mut seen = std::collections::HashSet::with_capacity(n_pairs);
    let mut out = Vec::with_capacity(n_pairs);
    while out.len() < n_pairs {
        let k = rng.random_range(0..total);
        if seen.insert(k) {
            out.push(decode(k));
        }
    }
    Ok(out)
}

fn cnr_over_pairs(vol: &Volume, grid: &RoiGrid, pairs: &[(usize, usize)]) -> f64 {
    let cnrs: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| pair_cnr(&grid.values(vol, a), &grid.values(vol, b)).abs())
        .collect();
    median(&cnrs).unwrap_or(0.0)
}

/// Median contrast magnitude `|CNR|` over sampled non-background ROI pairs.
pub fn cnr_median(vol: &Volume, cfg: &CnrConfig) -> Result<f64> {
    let grid = RoiGrid::new(vol.dims, cfg.roi_dims)?;
    let eligible = grid.eligible(vol, cfg);
    let pairs = sample_pairs(&eligible, cfg.n_pairs, cfg.seed)?;
    Ok(cnr_over_pairs(vol, &grid, &pairs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnrComparison {
    pub cnr_real: f64,
    pub cnr_rec: f64,
    pub normdiff: f64,
}

/// Median CNR of both volumes over one shared ROI-pair sample (chosen on
/// the real volume's foreground), compared with [`normdiff`].
pub fn cnr_normdiff(real: &Volume, rec: &Volume, cfg: &CnrConfig) -> Result<CnrComparison> {
    check_dims(real, rec)?;
    let grid = RoiGrid::new(real.dims, cfg.roi_dims)?;
    let eligible = grid.eligible(real, cfg);
    let pairs = sample_pairs(&eligible, cfg.n_pairs, cfg.seed)?;
    let cnr_real = cnr_over_pairs(real, &grid, &pairs);
    let cnr_rec = cnr_over_pairs(rec, &grid, &pairs);
    Ok(CnrComparison {
        cnr_real,
        cnr_rec,
        normdiff: normdiff(cnr_real, cnr_rec),
    })
}

/// All three reconstruction metrics for one volume pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconMetrics {
    pub mse: f64,
    pub normdiff: f64,
    pub cnr_real: f64,
    pub cnr_rec: f64,
    pub cnr_normdiff: f64,
}

pub fn evaluate(real: &Volume, rec: &Volume, cfg: &CnrConfig) -> Result<ReconMetrics> {
    let cnr = cnr_normdiff(real, rec, cfg)?;
    Ok(ReconMetrics {
        mse: mse(real, rec)?,
        normdiff: normdiff_median(real, rec)?,
        cnr_real: cnr.cnr_real,
        cnr_rec: cnr.cnr_rec,
        cnr_normdiff: cnr.normdiff,
    })
}
