//! Cluster-versus-factor statistics: Kruskal-Wallis with tie correction,
//! Benjamini-Hochberg FDR, the bootstrap repartition null and the
//! log-quantile cluster profiles.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::registry::{Registry, UnknownStrategy};
use crate::seed;
use crate::stats_util::median;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 non-empty groups, got {0}")]
    TooFewGroups(usize),
    #[error("values ({values}) and labels ({labels}) differ in length")]
    LengthMismatch { values: usize, labels: usize },
    #[error("p-value {0} outside [0, 1]")]
    PValueRange(f64),
    #[error("cluster {0} is empty")]
    EmptyCluster(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error(transparent)]
    UnknownStrategy(#[from] UnknownStrategy),
}

pub type Result<T> = std::result::Result<T, StatsError>;

fn cmp_f64(a: &f64, b: &f64) -> Ordering {
    a.partial_cmp(b).expect("finite values")
}

/// Mid-ranks (1-based) and the tie term `Σ (t³ − t)`.
pub fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| cmp_f64(&values[a], &values[b]));
    let mut ranks = vec![0.0; n];
    let mut ties = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = 0.5 * ((i + 1) + j) as f64;
        for &o in &order[i..j] {
            ranks[o] = rank;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KwResult {
    pub h: f64,
    pub df: usize,
    pub p: f64,
}

/// Tie-corrected H from values and dense group indices. `None` when all
/// values are tied.
fn kw_statistic(values: &[f64], groups: &[usize], n_groups: usize) -> Option<f64> {
    let n = values.len() as f64;
    let (ranks, ties) = midranks(values);
    let correction = 1.0 - ties / (n * n * n - n);
    if correction <= 0.0 {
        return None;
    }
    let mut sums = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (&r, &g) in ranks.iter().zip(groups) {
        sums[g] += r;
        counts[g] += 1;
    }
    let ss: f64 = sums
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(s, &c)| s * s / c as f64)
        .sum();
    let h = 12.0 / (n * (n + 1.0)) * ss - 3.0 * (n + 1.0);
    Some(h / correction)
}

/// Maps arbitrary labels onto `0..K` (K = number of distinct labels).
fn dense_groups(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let groups = labels
        .iter()
        .map(|l| distinct.binary_search(l).unwrap())
        .collect();
    (groups, distinct.len())
}

/// Kruskal-Wallis H with tie correction; `p` from the chi-square upper
/// tail with `K − 1` degrees of freedom. All-tied samples give H = 0, p = 1.
pub fn kruskal_wallis(values: &[f64], labels: &[usize]) -> Result<KwResult> {
    if values.len() != labels.len() {
        return Err(StatsError::LengthMismatch {
            values: values.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(i));
    }
    let (groups, k) = dense_groups(labels);
    if k < 2 {
        return Err(StatsError::TooFewGroups(k));
    }
    let df = k - 1;
    match kw_statistic(values, &groups, k) {
        None => Ok(KwResult { h: 0.0, df, p: 1.0 }),
        Some(h) => {
            let chi = ChiSquared::new(df as f64).expect("df >= 1");
            Ok(KwResult {
                h,
                df,
                p: chi.sf(h.max(0.0)),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhResult {
    pub q: Vec<f64>,
    pub reject: Vec<bool>,
}

/// Benjamini-Hochberg step-up procedure.
pub fn bh_fdr(pvals: &[f64], alpha: f64) -> Result<BhResult> {
    if let Some(&p) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::PValueRange(p));
    }
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| cmp_f64(&pvals[a], &pvals[b]).then(a.cmp(&b)));
    let mut q = vec![0.0; m];
    let mut running = 1.0_f64;
    for (rank0, &i) in order.iter().enumerate().rev() {
        let adj = pvals[i] * (m as f64 / (rank0 + 1) as f64);
        running = running.min(adj).min(1.0);
        q[i] = running;
    }
    let cutoff = order
        .iter()
        .enumerate()
        .filter(|(rank0, &i)| pvals[i] <= (rank0 + 1) as f64 * alpha / m as f64)
        .map(|(_, &i)| pvals[i])
        .next_back();
    let reject = pvals
        .iter()
        .map(|&p| cutoff.is_some_and(|c| p <= c))
        .collect();
    Ok(BhResult { q, reject })
}

/// Strategy for drawing the subjects that fill one bootstrap replicate.
/// The first `s₁` drawn subjects form group 1, the next `s₂` group 2, and
/// so on.
pub trait Repartition: Send + Sync {
    fn name(&self) -> &'static str;
    /// `m` subject indices for one replicate.
    fn draw(&self, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize>;
}

/// Each subject used exactly once (a random permutation).
pub struct PermutationRepartition;

impl Repartition for PermutationRepartition {
    fn name(&self) -> &'static str {
        "permutation"
    }

    fn draw(&self, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..m).collect();
        idx.shuffle(rng);
        idx
    }
}

/// Subjects drawn independently with replacement.
pub struct ReplacementRepartition;

impl Repartition for ReplacementRepartition {
    fn name(&self) -> &'static str {
        "replacement"
    }

    fn draw(&self, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..m).map(|_| rng.random_range(0..m)).collect()
    }
}

pub type RepartitionCtor = fn() -> Box<dyn Repartition>;

fn permutation() -> Box<dyn Repartition> {
    Box::new(PermutationRepartition)
}

fn replacement() -> Box<dyn Repartition> {
    Box::new(ReplacementRepartition)
}

pub fn repartition_registry() -> Registry<RepartitionCtor> {
    Registry::new("bootstrap mode")
        .with("permutation", permutation as RepartitionCtor)
        .with("replacement", replacement as RepartitionCtor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    /// Registered [`Repartition`] name.
    pub mode: String,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 10_000,
            seed: 0,
            mode: "permutation".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorBootstrap {
    pub h_true: f64,
    /// Replicates whose H strictly exceeds `h_true`.
    pub exceed: usize,
    pub replicates: usize,
    /// `exceed / M`.
    pub p: f64,
    /// `(exceed + 1) / (M + 1)`.
    pub p_smoothed: f64,
    /// All values tied; `p` is 0 by the strict comparison.
    pub degenerate: bool,
}

fn kw_h_or_zero(values: &[f64], groups: &[usize], k: usize) -> f64 {
    kw_statistic(values, groups, k).unwrap_or(0.0)
}

/// Surrogate p-values from random repartitions of the subjects into
/// groups of the true cluster sizes. Replicate `r` uses the RNG stream
/// derived from `(seed, r)` and is shared by all factors.
pub fn bootstrap_kw(factors: &[Vec<f64>], labels: &[usize], cfg: &BootstrapConfig) -> Result<Vec<FactorBootstrap>> {
    let m = labels.len();
    for f in factors {
        if f.len() != m {
            return Err(StatsError::LengthMismatch {
                values: f.len(),
                labels: m,
            });
        }
        if let Some(i) = f.iter().position(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite(i));
        }
    }
    let (groups, k) = dense_groups(labels);
    if k < 2 {
        return Err(StatsError::TooFewGroups(k));
    }
    if cfg.replicates < 100 {
        log::warn!("bootstrap with only {} replicates", cfg.replicates);
    }
    let resampler = (repartition_registry().get(&cfg.mode)?)();
    let mut sizes = vec![0usize; k];
    for &g in &groups {
        sizes[g] += 1;
    }
    let positional: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &s)| std::iter::repeat_n(g, s))
        .collect();

    let h_true: Vec<f64> = factors.iter().map(|f| kw_h_or_zero(f, &groups, k)).collect();
    let degenerate: Vec<bool> = factors
        .iter()
        .map(|f| f.iter().all(|&v| v == f[0]))
        .collect();
    let mut exceed = vec![0usize; factors.len()];
    let mut buf = vec![0.0; m];
    for r in 0..cfg.replicates {
        let mut rng = seed::stream(cfg.seed, "bootstrap-replicate", r as u64);
        let drawn = resampler.draw(m, &mut rng);
        for (fi, f) in factors.iter().enumerate() {
            for (slot, &d) in buf.iter_mut().zip(&drawn) {
                *slot = f[d];
            }
            if kw_h_or_zero(&buf, &positional, k) > h_true[fi] {
                exceed[fi] += 1;
            }
        }
    }
    let mm = cfg.replicates as f64;
    Ok(factors
        .iter()
        .enumerate()
        .map(|(fi, _)| FactorBootstrap {
            h_true: h_true[fi],
            exceed: exceed[fi],
            replicates: cfg.replicates,
            p: if cfg.replicates == 0 { 1.0 } else { exceed[fi] as f64 / mm },
            p_smoothed: (exceed[fi] as f64 + 1.0) / (mm + 1.0),
            degenerate: degenerate[fi],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorStat {
    pub factor: String,
    pub h: f64,
    pub df: usize,
    pub p: f64,
    pub q: f64,
    pub significant: bool,
    pub bootstrap_p: f64,
    pub bootstrap_p_smoothed: f64,
    pub bootstrap_q: f64,
    pub bootstrap_significant: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub alpha: f64,
    pub n_subjects: usize,
    pub n_clusters: usize,
    pub cluster_sizes: Vec<usize>,
    pub bootstrap: BootstrapConfig,
    pub factors: Vec<FactorStat>,
}

/// KW per factor with BH across factors, plus the bootstrap surrogate
/// p-values with their own BH adjustment.
pub fn stat_report(
    names: &[String],
    factors: &[Vec<f64>],
    labels: &[usize],
    alpha: f64,
    cfg: &BootstrapConfig,
) -> Result<StatReport> {
    let kws = factors
        .iter()
        .map(|f| kruskal_wallis(f, labels))
        .collect::<Result<Vec<_>>>()?;
    let ps: Vec<f64> = kws.iter().map(|k| k.p).collect();
    let bh = bh_fdr(&ps, alpha)?;
    let boot = bootstrap_kw(factors, labels, cfg)?;
    let bps: Vec<f64> = boot.iter().map(|b| b.p).collect();
    let bbh = bh_fdr(&bps, alpha)?;
    let (groups, k) = dense_groups(labels);
    let mut sizes = vec![0usize; k];
    for g in groups {
        sizes[g] += 1;
    }
    let factors = (0..factors.len())
        .map(|j| FactorStat {
            factor: names[j].clone(),
            h: kws[j].h,
            df: kws[j].df,
            p: kws[j].p,
            q: bh.q[j],
            significant: bh.reject[j],
            bootstrap_p: boot[j].p,
            bootstrap_p_smoothed: boot[j].p_smoothed,
            bootstrap_q: bbh.q[j],
            bootstrap_significant: bbh.reject[j],
            degenerate: boot[j].degenerate,
        })
        .collect();
    Ok(StatReport {
        alpha,
        n_subjects: labels.len(),
        n_clusters: k,
        cluster_sizes: sizes,
        bootstrap: cfg.clone(),
        factors,
    })
}

/// Factors × clusters matrix of `log₁₀` population quantiles of each
/// cluster's median factor score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileMatrix {
    pub factors: Vec<String>,
    pub clusters: Vec<usize>,
    pub quantiles: Vec<Vec<f64>>,
    pub log_quantiles: Vec<Vec<f64>>,
}

/// Midpoint quantile of `x` in `population`: the mean of the fractions
/// `≤ x` and `< x`.
pub fn midpoint_quantile(population: &[f64], x: f64) -> f64 {
    let le = population.iter().filter(|&&v| v <= x).count();
    let lt = population.iter().filter(|&&v| v < x).count();
    (le + lt) as f64 / (2 * population.len()) as f64
}

/// Cluster profiles. `factors[j]` holds factor `j`'s score for every
/// subject; clusters are the labels `0..=max(labels)`.
pub fn cluster_profiles(names: &[String], factors: &[Vec<f64>], labels: &[usize]) -> Result<ProfileMatrix> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    if let Some(c) = members.iter().position(Vec::is_empty) {
        return Err(StatsError::EmptyCluster(c));
    }
    if k == 0 {
        return Err(StatsError::TooFewGroups(0));
    }
    let mut quantiles = Vec::with_capacity(factors.len());
    for f in factors {
        if f.len() != labels.len() {
            return Err(StatsError::LengthMismatch {
                values: f.len(),
                labels: labels.len(),
            });
        }
        let row: Vec<f64> = members
            .iter()
            .map(|idx| {
                let vals: Vec<f64> = idx.iter().map(|&i| f[i]).collect();
                midpoint_quantile(f, median(&vals).expect("non-empty cluster"))
            })
            .collect();
        quantiles.push(row);
    }
    let log_quantiles = quantiles
        .iter()
        .map(|r| r.iter().map(|q| q.log10()).collect())
        .collect();
    Ok(ProfileMatrix {
        factors: names.to_vec(),
        clusters: (0..k).collect(),
        quantiles,
        log_quantiles,
    })
}
