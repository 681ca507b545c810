//! Training loop, k-fold cross-validation and embedding extraction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use fusestrata_core::reconmetrics::{self, CnrConfig};
use fusestrata_core::seed::{self, derive_seed};
use fusestrata_core::stats_util::{mad, median};
use fusestrata_core::volio::{Dataset, SubjectRecord, Volume};
use fusestrata_core::Registry;

use crate::backend::{Backend, Eager};
use crate::error::{NnError, Result};
use crate::graph::Graph;
use crate::model::{FuseModel, ModelConfig};
use crate::optim::{build_optimizer, OptimConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimConfig,
    pub seed: u64,
    /// Re-estimate batch-norm running statistics after the last epoch.
    pub recalibrate_bn: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 1,
            optimizer: OptimConfig::default(),
            seed: 0,
            recalibrate_bn: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(NnError::Config("epochs must be ≥ 1".into()));
        }
        if self.batch_size != 1 {
            return Err(NnError::Config(format!("batch size {} unsupported (only 1)", self.batch_size)));
        }
        if !(self.optimizer.lr >= 0.0 && self.optimizer.lr.is_finite()) {
            return Err(NnError::Config(format!("learning rate {}", self.optimizer.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean step loss per epoch (sum of per-modality BCE).
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
    /// Epochs `e` where the loss at `e + 49` exceeds the loss at `e`,
    /// checked from epoch 10 on when training on a single subject.
    pub flagged_windows: Vec<usize>,
}

pub const MONOTONE_WINDOW: usize = 50;
pub const MONOTONE_START: usize = 10;

/// Starting epochs of `window`-long stretches (from `start` on) whose
/// final loss is above their first.
pub fn increasing_windows(loss: &[f64], window: usize, start: usize) -> Vec<usize> {
    (start..loss.len().saturating_sub(window - 1))
        .filter(|&s| loss[s + window - 1] > loss[s])
        .collect()
}

/// `[1, nx, ny, nz]` input tensors of one subject, in modality order.
pub fn subject_inputs(subject: &SubjectRecord) -> Vec<Tensor<f32>> {
    subject
        .volumes
        .iter()
        .map(|v| Tensor {
            shape: vec![1, v.dims[0], v.dims[1], v.dims[2]],
            data: v.voxels.clone(),
        })
        .collect()
}

fn check_dataset(model: &FuseModel<f32>, data: &Dataset) -> Result<()> {
    let cfg = model.config();
    if data.dims != cfg.input_dims || data.modalities.len() != cfg.n_modalities {
        return Err(NnError::Shape(format!(
            "dataset {:?} × {} modalities, model expects {:?} × {}",
            data.dims,
            data.modalities.len(),
            cfg.input_dims,
            cfg.n_modalities
        )));
    }
    Ok(())
}

/// One optimization step; returns the loss before the update.
fn train_step(
    model: &mut FuseModel<f32>,
    opt: &mut dyn crate::optim::Optimizer<f32>,
    inputs: &[Tensor<f32>],
    step: usize,
    seed: u64,
) -> Result<f64> {
    let mut g = Graph::new(true);
    let leaves: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
    let mut rng = seed::stream(seed, "dropout", step as u64);
    let fwd = model.forward(&mut g, &leaves, &mut rng)?;
    g.set_scope("loss");
    let losses = fwd
        .reconstructions
        .iter()
        .zip(&leaves)
        .map(|(r, x)| g.bce(r, x))
        .collect::<Result<Vec<_>>>()?;
    let loss = g.sum(&losses)?;
    let value = f64::from(g.value(&loss).data[0]);
    if !value.is_finite() {
        return Err(NnError::NonFiniteLoss {
            step,
            block: g.first_non_finite().unwrap_or("loss").to_string(),
        });
    }
    g.backward(&loss)?;
    opt.step(&mut model.params, &g.param_grads());
    Ok(value)
}

/// Minimizes the summed per-modality BCE with batch size 1, visiting
/// subjects in a freshly shuffled order each epoch.
pub fn train(model: &mut FuseModel<f32>, data: &Dataset, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    check_dataset(model, data)?;
    if data.is_empty() {
        return Err(NnError::Config("no training subjects".into()));
    }
    let inputs: Vec<Vec<Tensor<f32>>> = data.subjects.iter().map(subject_inputs).collect();
    let mut opt = build_optimizer::<f32>(&cfg.optimizer)?;
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed::stream(cfg.seed, "train-shuffle", epoch as u64));
        let mut total = 0.0;
        for &i in &order {
            total += train_step(model, opt.as_mut(), &inputs[i], step, cfg.seed)?;
            step += 1;
        }
        epoch_loss.push(total / order.len() as f64);
        if (epoch + 1) % 25 == 0 || epoch + 1 == cfg.epochs {
            log::info!("epoch {}/{}: loss {:.6}", epoch + 1, cfg.epochs, epoch_loss[epoch]);
        }
    }
    if cfg.recalibrate_bn {
        recalibrate_bn(model, data)?;
    }
    let flagged_windows = if data.len() == 1 {
        increasing_windows(&epoch_loss, MONOTONE_WINDOW, MONOTONE_START)
    } else {
        Vec::new()
    };
    if !flagged_windows.is_empty() {
        log::warn!("loss increased over {} 50-epoch windows", flagged_windows.len());
    }
    Ok(TrainLog {
        epoch_loss,
        steps: step,
        flagged_windows,
    })
}

/// Replaces every batch-norm running mean and variance with the average
/// of that layer's batch statistics over `data`, computed with the
/// current parameters and dropout off.
pub fn recalibrate_bn(model: &mut FuseModel<f32>, data: &Dataset) -> Result<()> {
    check_dataset(model, data)?;
    for (i, s) in data.subjects.iter().enumerate() {
        let mut be = Eager::recalibration(i as f64 / (i + 1) as f64);
        let inputs: Vec<_> = subject_inputs(s).into_iter().map(|t| be.constant(t)).collect();
        model.forward(&mut be, &inputs, &mut inference_rng())?;
    }
    Ok(())
}

fn inference_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

/// Inference-mode reconstructions of one subject.
pub fn reconstruct(model: &mut FuseModel<f32>, subject: &SubjectRecord) -> Result<Vec<Volume>> {
    let mut be = Eager::inference();
    let inputs: Vec<_> = subject_inputs(subject).into_iter().map(|t| be.constant(t)).collect();
    let fwd = model.forward(&mut be, &inputs, &mut inference_rng())?;
    fwd.reconstructions
        .iter()
        .zip(&subject.volumes)
        .map(|(r, v)| Ok(Volume::new(v.dims, Backend::<f32>::value(&be, r).data.clone(), v.modality.clone())?))
        .collect()
}

/// Inference-mode embedding per subject, flattened in storage order;
/// rows follow subject order.
pub fn extract_embeddings(model: &mut FuseModel<f32>, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    check_dataset(model, data)?;
    data.subjects
        .iter()
        .map(|s| {
            let mut be = Eager::inference();
            let inputs: Vec<_> = subject_inputs(s).into_iter().map(|t| be.constant(t)).collect();
            let e = model.embed(&mut be, &inputs, &mut inference_rng())?;
            Ok(Backend::<f32>::value(&be, &e).data.iter().map(|&v| f64::from(v)).collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffled k-fold partition. The first `n mod k` folds hold one extra
/// subject; indices within each set are ascending.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 || n < k {
        return Err(NnError::Config(format!("{k}-fold split of {n} subjects")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::stream(seed, "kfold", 0));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut test = perm[start..start + size].to_vec();
        test.sort_unstable();
        let mut train: Vec<usize> = perm[..start].iter().chain(&perm[start + size..]).copied().collect();
        train.sort_unstable();
        folds.push(Fold { train, test });
        start += size;
    }
    Ok(folds)
}

/// Something that learns to reproduce volumes.
pub trait Reconstructor {
    fn name(&self) -> &'static str;

    /// Fits on `train` for fold `fold`, returning the per-epoch loss.
    fn fit(&mut self, train: &Dataset, fold: usize) -> Result<Vec<f64>>;

    fn reconstruct(&mut self, subject: &SubjectRecord) -> Result<Vec<Volume>>;
}

/// Returns its input unchanged.
pub struct IdentityReconstructor;

impl Reconstructor for IdentityReconstructor {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn fit(&mut self, _train: &Dataset, _fold: usize) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }

    fn reconstruct(&mut self, subject: &SubjectRecord) -> Result<Vec<Volume>> {
        Ok(subject.volumes.clone())
    }
}

/// A freshly initialized [`FuseModel`] per fold, trained on that fold.
pub struct FuseNetReconstructor {
    model: ModelConfig,
    train: TrainConfig,
    fitted: Option<FuseModel<f32>>,
}

impl FuseNetReconstructor {
    pub fn new(model: ModelConfig, train: TrainConfig) -> Self {
        Self {
            model,
            train,
            fitted: None,
        }
    }
}

impl Reconstructor for FuseNetReconstructor {
    fn name(&self) -> &'static str {
        "fusenet"
    }

    fn fit(&mut self, train: &Dataset, fold: usize) -> Result<Vec<f64>> {
        let mut mcfg = self.model.clone();
        mcfg.init_seed = derive_seed(self.train.seed, "fold-init", fold as u64);
        let mut tcfg = self.train.clone();
        tcfg.seed = derive_seed(self.train.seed, "fold-train", fold as u64);
        let mut model = FuseModel::new(mcfg)?;
        let log = self::train(&mut model, train, &tcfg)?;
        self.fitted = Some(model);
        Ok(log.epoch_loss)
    }

    fn reconstruct(&mut self, subject: &SubjectRecord) -> Result<Vec<Volume>> {
        let model = self
            .fitted
            .as_mut()
            .ok_or_else(|| NnError::Config("reconstruct before fit".into()))?;
        reconstruct(model, subject)
    }
}

pub type ReconstructorCtor = fn(&ModelConfig, &TrainConfig) -> Box<dyn Reconstructor>;

fn identity_ctor(_: &ModelConfig, _: &TrainConfig) -> Box<dyn Reconstructor> {
    Box::new(IdentityReconstructor)
}

fn fusenet_ctor(m: &ModelConfig, t: &TrainConfig) -> Box<dyn Reconstructor> {
    Box::new(FuseNetReconstructor::new(m.clone(), t.clone()))
}

pub fn reconstructors() -> Registry<ReconstructorCtor> {
    Registry::new("reconstructor")
        .with("identity", identity_ctor as ReconstructorCtor)
        .with("fusenet", fusenet_ctor as ReconstructorCtor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub subject_id: String,
    pub fold: usize,
    pub modality: String,
    pub mse: f64,
    pub normdiff: f64,
    pub cnr_real: f64,
    pub cnr_rec: f64,
    pub cnr_normdiff: f64,
}

/// MSE, NormDiff and CNR-NormDiff together.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub mse: f64,
    pub normdiff: f64,
    pub cnr_normdiff: f64,
}

impl MetricTriple {
    fn from_columns(cols: [&[f64]; 3], f: fn(&[f64]) -> Option<f64>) -> Self {
        let g = |c: &[f64]| f(c).unwrap_or(f64::NAN);
        Self {
            mse: g(cols[0]),
            normdiff: g(cols[1]),
            cnr_normdiff: g(cols[2]),
        }
    }
}

fn summarize(rows: &[MetricRow]) -> MetricTriple {
    let mse: Vec<f64> = rows.iter().map(|r| r.mse).collect();
    let nd: Vec<f64> = rows.iter().map(|r| r.normdiff).collect();
    let cnr: Vec<f64> = rows.iter().map(|r| r.cnr_normdiff).collect();
    MetricTriple::from_columns([&mse, &nd, &cnr], median)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub test_ids: Vec<String>,
    pub loss_curve: Vec<f64>,
    pub rows: Vec<MetricRow>,
    /// Medians over this fold's (subject, modality) rows.
    pub median: MetricTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub reconstructor: String,
    pub k: usize,
    pub folds: Vec<FoldReport>,
    /// Median of the fold medians.
    pub median: MetricTriple,
    /// Median absolute deviation of the fold medians.
    pub mad: MetricTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    pub cnr: CnrConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: 10,
            seed: 0,
            cnr: CnrConfig::default(),
        }
    }
}

/// Fits `recon` on each training split and scores the held-out subjects.
pub fn cross_validate(data: &Dataset, recon: &mut dyn Reconstructor, cfg: &CvConfig) -> Result<CvReport> {
    let folds = kfold_split(data.len(), cfg.k, cfg.seed)?;
    let mut reports = Vec::with_capacity(folds.len());
    for (f, fold) in folds.iter().enumerate() {
        log::info!("fold {}/{}: {} train, {} test", f + 1, cfg.k, fold.train.len(), fold.test.len());
        let loss_curve = recon.fit(&data.select(&fold.train), f)?;
        let mut rows = Vec::new();
        for &i in &fold.test {
            let subject = &data.subjects[i];
            let recs = recon.reconstruct(subject)?;
            for (real, rec) in subject.volumes.iter().zip(&recs) {
                let m = reconmetrics::evaluate(real, rec, &cfg.cnr)?;
                rows.push(MetricRow {
                    subject_id: subject.subject_id.clone(),
                    fold: f,
                    modality: real.modality.clone(),
                    mse: m.mse,
                    normdiff: m.normdiff,
                    cnr_real: m.cnr_real,
                    cnr_rec: m.cnr_rec,
                    cnr_normdiff: m.cnr_normdiff,
                });
            }
        }
        reports.push(FoldReport {
            fold: f,
            n_train: fold.train.len(),
            test_ids: fold.test.iter().map(|&i| data.subjects[i].subject_id.clone()).collect(),
            loss_curve,
            median: summarize(&rows),
            rows,
        });
    }
    let col = |g: fn(&MetricTriple) -> f64| reports.iter().map(|r| g(&r.median)).collect::<Vec<f64>>();
    let (a, b, c) = (col(|m| m.mse), col(|m| m.normdiff), col(|m| m.cnr_normdiff));
    Ok(CvReport {
        reconstructor: recon.name().to_string(),
        k: cfg.k,
        median: MetricTriple::from_columns([&a, &b, &c], median),
        mad: MetricTriple::from_columns([&a, &b, &c], mad),
        folds: reports,
    })
}
