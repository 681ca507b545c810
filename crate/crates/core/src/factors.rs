//! Phenotype factor analysis: standardization, correlation PCA with the
//! Kaiser criterion, Varimax rotation and regression factor scores.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volio::PhenoTable;

#[derive(Debug, Error, PartialEq)]
pub enum FactorError {
    #[error("variable `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("variable `{0}` has no observed values")]
    AllMissing(String),
    #[error("need at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("no factor passes Kaiser criterion (largest eigenvalue {0})")]
    NoFactorRetained(f64),
    #[error("correlation matrix is singular even after ridge")]
    SingularCorrelation,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, FactorError>;

/// Column-standardized phenotype matrix.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub z: DMatrix<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Number of missing cells replaced by their column mean.
    pub imputed: usize,
}

/// Mean-imputes missing cells, then centers each column and scales it to
/// unit sample standard deviation (ddof = 1).
pub fn standardize(table: &PhenoTable) -> Result<Standardized> {
    let (n, p) = (table.n_subjects(), table.n_variables());
    if n < 2 {
        return Err(FactorError::TooFewSubjects(n));
    }
    let mut z = DMatrix::zeros(n, p);
    let mut means = Vec::with_capacity(p);
    let mut sds = Vec::with_capacity(p);
    for j in 0..p {
        let observed: Vec<f64> = (0..n).filter_map(|i| table.get(i, j)).collect();
        if observed.is_empty() {
            return Err(FactorError::AllMissing(table.variable_names[j].clone()));
        }
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        for i in 0..n {
            z[(i, j)] = table.get(i, j).unwrap_or(mean);
        }
        let var = (0..n).map(|i| (z[(i, j)] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        if var <= 0.0 {
            return Err(FactorError::ZeroVariance(table.variable_names[j].clone()));
        }
        let sd = var.sqrt();
        for i in 0..n {
            z[(i, j)] = (z[(i, j)] - mean) / sd;
        }
        means.push(mean);
        sds.push(sd);
    }
    Ok(Standardized {
        z,
        means,
        sds,
        imputed: table.missing_count(),
    })
}

/// `ZᵀZ / (n − 1)` for standardized `Z`.
pub fn correlation(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    let mut c = z.transpose() * z / (n as f64 - 1.0);
    // exact symmetry and unit diagonal
    for i in 0..c.nrows() {
        c[(i, i)] = 1.0;
        for j in 0..i {
            let v = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

#[derive(Debug, Clone)]
pub struct Pca {
    /// All eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors as columns, matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    /// `eigenvector · √eigenvalue` for the retained components (`p × k`).
    pub loadings: DMatrix<f64>,
    pub k: usize,
}

/// Eigendecomposition of a correlation matrix with Kaiser retention
/// (eigenvalue > 1). Eigenvector signs are fixed so the first component
/// with magnitude above 1e-12 is positive.
pub fn pca_retain_corr(corr: &DMatrix<f64>) -> Result<Pca> {
    let p = corr.nrows();
    if p == 0 || corr.ncols() != p {
        return Err(FactorError::Shape(format!("{}x{} correlation", corr.nrows(), corr.ncols())));
    }
    let eig = SymmetricEigen::new(corr.clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
            .then(a.cmp(&b))
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut eigenvectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        eigenvectors.set_column(dst, &col);
    }
    let k = eigenvalues.iter().filter(|&&l| l > 1.0).count();
    if k == 0 {
        return Err(FactorError::NoFactorRetained(eigenvalues[0]));
    }
    let mut loadings = DMatrix::zeros(p, k);
    for j in 0..k {
        let scale = eigenvalues[j].max(0.0).sqrt();
        loadings.set_column(j, &(eigenvectors.column(j) * scale));
    }
    Ok(Pca {
        eigenvalues,
        eigenvectors,
        loadings,
        k,
    })
}

pub fn pca_retain(z: &DMatrix<f64>) -> Result<Pca> {
    pca_retain_corr(&correlation(z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarimaxConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub kaiser_normalize: bool,
}

impl Default for VarimaxConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
            kaiser_normalize: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VarimaxResult {
    pub rotated: DMatrix<f64>,
    /// Orthogonal `k × k` matrix with `rotated = loadings · rotation`.
    pub rotation: DMatrix<f64>,
    /// Criterion after each sweep; the first entry is the starting value.
    pub criterion_trace: Vec<f64>,
}

fn row_norms(l: &DMatrix<f64>) -> Vec<f64> {
    l.row_iter().map(|r| r.norm()).collect()
}

fn normalized(l: &DMatrix<f64>, norms: &[f64]) -> DMatrix<f64> {
    let mut out = l.clone();
    for (i, &h) in norms.iter().enumerate() {
        if h > 0.0 {
            out.row_mut(i).scale_mut(1.0 / h);
        }
    }
    out
}

/// Sum over columns of the variance of squared loadings.
pub fn varimax_criterion(l: &DMatrix<f64>) -> f64 {
    let p = l.nrows() as f64;
    l.column_iter()
        .map(|c| {
            let sq: Vec<f64> = c.iter().map(|v| v * v).collect();
            let m = sq.iter().sum::<f64>() / p;
            sq.iter().map(|s| s * s).sum::<f64>() / p - m * m
        })
        .sum()
}

/// Criterion as optimized by [`varimax`]: on row-normalized loadings when
/// Kaiser normalization is on.
pub fn varimax_objective(l: &DMatrix<f64>, kaiser_normalize: bool) -> f64 {
    if kaiser_normalize {
        varimax_criterion(&normalized(l, &row_norms(l)))
    } else {
        varimax_criterion(l)
    }
}

/// Varimax by sweeps of pairwise planar rotations. Each pair is rotated
/// by the angle that maximizes the criterion restricted to that plane,
/// so the criterion never decreases. Columns are finally sign-fixed so
/// their largest-magnitude loading is positive.
pub fn varimax(loadings: &DMatrix<f64>, cfg: &VarimaxConfig) -> VarimaxResult {
    let (p, k) = loadings.shape();
    let mut rotation = DMatrix::identity(k, k);
    if k < 2 {
        return VarimaxResult {
            rotated: loadings.clone(),
            rotation,
            criterion_trace: vec![varimax_objective(loadings, cfg.kaiser_normalize)],
        };
    }
    let norms = row_norms(loadings);
    let mut l = if cfg.kaiser_normalize {
        normalized(loadings, &norms)
    } else {
        loadings.clone()
    };
    let pf = p as f64;
    let mut trace = vec![varimax_criterion(&l)];
    for _ in 0..cfg.max_iter {
        for j in 0..k {
            for m in (j + 1)..k {
                let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..p {
                    let (x, y) = (l[(i, j)], l[(i, m)]);
                    let u = x * x - y * y;
                    let v = 2.0 * x * y;
                    a += u;
                    b += v;
                    c += u * u - v * v;
                    d += 2.0 * u * v;
                }
                let num = d - 2.0 * a * b / pf;
                let den = c - (a * a - b * b) / pf;
                let phi = 0.25 * num.atan2(den);
                if phi == 0.0 {
                    continue;
                }
                let (s, co) = phi.sin_cos();
                rotate_columns(&mut l, j, m, co, s);
                rotate_columns(&mut rotation, j, m, co, s);
            }
        }
        let crit = varimax_criterion(&l);
        let prev = *trace.last().unwrap();
        debug_assert!(crit >= prev - 1e-12 * prev.abs().max(1.0), "varimax criterion decreased");
        trace.push(crit);
        if crit - prev < cfg.tol {
            break;
        }
    }
    let mut rotated = loadings * &rotation;
    for j in 0..k {
        let col = rotated.column(j);
        let (imax, _) = col
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        if rotated[(imax, j)] < 0.0 {
            rotated.column_mut(j).neg_mut();
            rotation.column_mut(j).neg_mut();
        }
    }
    VarimaxResult {
        rotated,
        rotation,
        criterion_trace: trace,
    }
}

fn rotate_columns(mat: &mut DMatrix<f64>, j: usize, m: usize, c: f64, s: f64) {
    for i in 0..mat.nrows() {
        let (x, y) = (mat[(i, j)], mat[(i, m)]);
        mat[(i, j)] = c * x + s * y;
        mat[(i, m)] = -s * x + c * y;
    }
}

/// Thurstone regression scores `Z · R⁻¹ · Λ`. A 1e-8 ridge is added to
/// the diagonal when the condition number exceeds 1e12.
pub fn factor_scores_regression(z: &DMatrix<f64>, corr: &DMatrix<f64>, loadings: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = corr.nrows();
    if z.ncols() != p || loadings.nrows() != p {
        return Err(FactorError::Shape(format!(
            "Z has {} columns, correlation is {p}x{p}, loadings have {} rows",
            z.ncols(),
            loadings.nrows()
        )));
    }
    let eig = corr.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut r = corr.clone();
    if min <= 0.0 || max / min > 1e12 {
        for i in 0..p {
            r[(i, i)] += 1e-8;
        }
    }
    let chol = r.cholesky().ok_or(FactorError::SingularCorrelation)?;
    let weights = chol.solve(loadings);
    Ok(z * weights)
}

/// Loadings with `|λ| < threshold` blanked.
pub fn threshold_loadings(l: &DMatrix<f64>, threshold: f64) -> Vec<Vec<Option<f64>>> {
    l.row_iter()
        .map(|r| r.iter().map(|&v| (v.abs() >= threshold).then_some(v)).collect())
        .collect()
}

/// The fitted phenotype factor model.
#[derive(Debug, Clone)]
pub struct FactorModel {
    pub variable_names: Vec<String>,
    pub subject_ids: Vec<String>,
    pub k: usize,
    pub eigenvalues: Vec<f64>,
    /// Sum of retained eigenvalues over `p`.
    pub explained_variance: f64,
    pub unrotated: DMatrix<f64>,
    pub rotated: DMatrix<f64>,
    pub rotation: DMatrix<f64>,
    pub criterion_trace: Vec<f64>,
    /// `n × k`.
    pub scores: DMatrix<f64>,
    pub imputed: usize,
}

impl FactorModel {
    pub fn factor_names(&self) -> Vec<String> {
        (1..=self.k).map(|j| format!("F{j}")).collect()
    }

    pub fn communalities(&self) -> Vec<f64> {
        self.rotated.row_iter().map(|r| r.norm_squared()).collect()
    }
}

pub fn fit_factor_model(table: &PhenoTable, cfg: &VarimaxConfig) -> Result<FactorModel> {
    let std = standardize(table)?;
    let corr = correlation(&std.z);
    let pca = pca_retain_corr(&corr)?;
    let vm = varimax(&pca.loadings, cfg);
    let scores = factor_scores_regression(&std.z, &corr, &vm.rotated)?;
    let p = table.n_variables() as f64;
    Ok(FactorModel {
        variable_names: table.variable_names.clone(),
        subject_ids: table.subject_ids.clone(),
        k: pca.k,
        explained_variance: pca.eigenvalues[..pca.k].iter().sum::<f64>() / p,
        eigenvalues: pca.eigenvalues,
        unrotated: pca.loadings,
        rotated: vm.rotated,
        rotation: vm.rotation,
        criterion_trace: vm.criterion_trace,
        scores,
        imputed: std.imputed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(cols: &[&[Option<f64>]]) -> PhenoTable {
        let n = cols[0].len();
        let rows = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        PhenoTable::from_rows(
            (0..n).map(|i| format!("s{i}")).collect(),
            (0..cols.len()).map(|j| format!("v{j}")).collect(),
            rows,
        )
        .unwrap()
    }

    #[test]
    fn standardize_small_column() {
        let t = table(&[&[Some(1.0), Some(2.0), Some(3.0)]]);
        let s = standardize(&t).unwrap();
        let col: Vec<f64> = s.z.column(0).iter().copied().collect();
        assert_eq!(col, vec![-1.0, 0.0, 1.0]);
        // idempotent on an already standardized column
        let t2 = table(&[&[Some(-1.0), Some(0.0), Some(1.0)]]);
        let s2 = standardize(&t2).unwrap();
        for (a, b) in s2.z.iter().zip(&[-1.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_imputes_and_rejects() {
        let t = table(&[&[Some(1.0), None, Some(3.0)]]);
        let s = standardize(&t).unwrap();
        assert_eq!(s.imputed, 1);
        assert_eq!(s.z[(1, 0)], 0.0);
        let all_missing = table(&[&[None, None, None]]);
        assert!(matches!(standardize(&all_missing), Err(FactorError::AllMissing(_))));
        let constant = table(&[&[Some(2.0), Some(2.0), Some(2.0)]]);
        assert!(matches!(standardize(&constant), Err(FactorError::ZeroVariance(_))));
    }

    #[test]
    fn rank_one_correlation() {
        let corr = DMatrix::from_element(4, 4, 1.0);
        let pca = pca_retain_corr(&corr).unwrap();
        assert_eq!(pca.k, 1);
        assert!((pca.eigenvalues[0] - 4.0).abs() < 1e-12);
        assert!(pca.eigenvalues[1..].iter().all(|l| l.abs() < 1e-12));
        assert!((pca.eigenvalues.iter().sum::<f64>() - 4.0).abs() < 1e-10);
        for v in pca.loadings.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_correlation_retains_nothing() {
        let corr = DMatrix::identity(5, 5);
        assert!(matches!(pca_retain_corr(&corr), Err(FactorError::NoFactorRetained(_))));
    }

    #[test]
    fn threshold_boundary() {
        let l = DMatrix::from_row_slice(2, 2, &[0.29, 0.30, -0.6, 0.0]);
        let t = threshold_loadings(&l, 0.3);
        assert_eq!(t, vec![vec![None, Some(0.30)], vec![Some(-0.6), None]]);
        let zero = threshold_loadings(&DMatrix::zeros(3, 2), 0.3);
        assert!(zero.iter().flatten().all(Option::is_none));
    }

    #[test]
    fn simple_structure_is_fixed_point() {
        let l = DMatrix::from_row_slice(4, 2, &[0.8, 0.0, 0.7, 0.0, 0.0, 0.9, 0.0, 0.6]);
        let vm = varimax(&l, &VarimaxConfig::default());
        assert!((vm.rotated.clone() - &l).abs().max() < 1e-12);
        let before = varimax_objective(&l, true);
        let after = varimax_objective(&vm.rotated, true);
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn zero_scores_for_zero_row() {
        let z = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, -1.0, -1.0, 1.0]);
        let corr = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let l = DMatrix::from_row_slice(2, 1, &[0.8, 0.8]);
        let s = factor_scores_regression(&z, &corr, &l).unwrap();
        assert_eq!(s[(0, 0)], 0.0);
    }
}
