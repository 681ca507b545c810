//! `key = value` run configuration with `[section]` headers.
//!
//! Precedence, lowest first: built-in defaults, the `--config` file,
//! command-line flags. Keys are addressed as `section.key`; keys before
//! the first header (`seed`, `threads`) have no section.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use fusestrata_core::apcluster::GridConfig;
use fusestrata_core::factors::VarimaxConfig;
use fusestrata_core::reconmetrics::CnrConfig;
use fusestrata_core::seed::derive_seed;
use fusestrata_core::stratstats::{repartition_registry, BootstrapConfig};
use fusestrata_core::volio::SynthConfig;
use fusestrata_nn::optim::{optimizers, OptimConfig};
use fusestrata_nn::trainer::{reconstructors, CvConfig, TrainConfig};
use fusestrata_nn::ModelConfig;

use crate::error::CliError;

/// Every recognised key with its default, in display order.
const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("threads", "0"),
    ("synth.n", "60"),
    ("synth.groups", "3"),
    ("synth.effect_size", "2"),
    ("model.dims", "auto"),
    ("model.n_modalities", "auto"),
    ("model.depth", "3"),
    ("model.base_channels", "2"),
    ("model.kernel", "5"),
    ("model.dropout", "0.1"),
    ("model.embedding_channels", "8"),
    ("model.midflow_kind", "separable"),
    ("model.block_kind", "standard"),
    ("training.epochs", "200"),
    ("training.optimizer", "adam"),
    ("training.lr", "0.0001"),
    ("training.beta1", "0.9"),
    ("training.beta2", "0.999"),
    ("training.eps", "0.0000001"),
    ("training.momentum", "0"),
    ("training.recalibrate_bn", "true"),
    ("cv.k", "10"),
    ("cv.reconstructor", "fusenet"),
    ("metrics.roi_dims", "4x4x3"),
    ("metrics.n_pairs", "1000"),
    ("metrics.background_threshold", "0"),
    ("metrics.max_background_fraction", "0.5"),
    ("clustering.grid", "10x50"),
    ("clustering.preference_lo_pct", "1"),
    ("clustering.preference_hi_pct", "99"),
    ("clustering.max_iter", "1000"),
    ("clustering.convergence_window", "50"),
    ("factor.max_iter", "500"),
    ("factor.tol", "0.00000001"),
    ("factor.kaiser_normalize", "true"),
    ("factor.threshold", "0.3"),
    ("stats.bootstrap_m", "10000"),
    ("stats.mode", "permutation"),
    ("stats.alpha", "0.05"),
];

/// Raw `section.key → value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    /// Parses config text. `#` and `;` start comment lines.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut map = Self::default();
        let mut section = String::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::validation(format!("line {}: unterminated section header", no + 1)))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::validation(format!("line {}: expected key = value", no + 1)))?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            map.set(&key, v.trim())?;
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("reading config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), CliError> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(CliError::validation(format!("unknown config key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn raw(&self, key: &str) -> &str {
        self.entries
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| KEYS.iter().find(|(k, _)| *k == key).expect("known key").1)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let v = self.raw(key);
        v.parse()
            .map_err(|e| CliError::validation(format!("config `{key}` = `{v}`: {e}")))
    }

    /// Every key with its effective value, sorted.
    pub fn effective(&self) -> BTreeMap<String, String> {
        KEYS.iter().map(|(k, _)| (k.to_string(), self.raw(k).to_string())).collect()
    }
}

/// Parses `AxBxC`.
pub fn parse_dims(s: &str) -> Result<[usize; 3], CliError> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let bad = || CliError::validation(format!("dims `{s}`: expected NXxNYxNZ"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.trim().parse().map_err(|_| bad())?;
    }
    Ok(out)
}

/// Parses `DxP` (damping count × preference count).
pub fn parse_grid(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::validation(format!("grid `{s}`: expected DAMPINGxPREFERENCE"));
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let d = a.trim().parse().map_err(|_| bad())?;
    let p = b.trim().parse().map_err(|_| bad())?;
    if d == 0 || p == 0 {
        return Err(bad());
    }
    Ok((d, p))
}

/// Validated, typed view of a [`ConfigMap`].
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub map: ConfigMap,
    pub seed: u64,
    pub threads: usize,
}

impl RunConfig {
    pub fn new(map: ConfigMap) -> Result<Self, CliError> {
        let cfg = Self {
            seed: map.get("seed")?,
            threads: map.get("threads")?,
            map,
        };
        // surface every malformed value before any work starts
        cfg.synth()?;
        cfg.model_with(Some([32, 32, 24]), Some(2))?;
        cfg.training()?;
        cfg.cv()?;
        cfg.cnr()?;
        cfg.grid()?;
        cfg.varimax()?;
        cfg.threshold()?;
        cfg.bootstrap()?;
        cfg.alpha()?;
        Ok(cfg)
    }

    /// Seed of the stream family `label`.
    pub fn derived(&self, label: &str) -> u64 {
        derive_seed(self.seed, label, 0)
    }

    pub fn explicit_dims(&self) -> Result<Option<[usize; 3]>, CliError> {
        match self.map.raw("model.dims") {
            "auto" => Ok(None),
            s => parse_dims(s).map(Some),
        }
    }

    pub fn explicit_modalities(&self) -> Result<Option<usize>, CliError> {
        match self.map.raw("model.n_modalities") {
            "auto" => Ok(None),
            _ => self.map.get("model.n_modalities").map(Some),
        }
    }

    pub fn synth(&self) -> Result<SynthConfig, CliError> {
        let cfg = SynthConfig {
            n_subjects: self.map.get("synth.n")?,
            dims: self.explicit_dims()?.unwrap_or([32, 32, 24]),
            n_groups: self.map.get("synth.groups")?,
            effect_size: self.map.get("synth.effect_size")?,
            seed: self.derived("synth"),
            n_modalities: self.explicit_modalities()?.unwrap_or(2),
            depth: self.map.get("model.depth")?,
        };
        if cfg.n_groups == 0 || cfg.n_groups > cfg.n_subjects {
            return Err(CliError::validation(format!(
                "synth.groups = {} must be in 1..=synth.n ({})",
                cfg.n_groups, cfg.n_subjects
            )));
        }
        Ok(cfg)
    }

    /// Model configuration; `auto` dims and modality counts fall back to
    /// the given dataset values.
    pub fn model_with(&self, dims: Option<[usize; 3]>, modalities: Option<usize>) -> Result<ModelConfig, CliError> {
        let missing = |what: &str| CliError::validation(format!("model.{what} is `auto` but no dataset supplies it"));
        let cfg = ModelConfig {
            n_modalities: match self.explicit_modalities()? {
                Some(m) => m,
                None => modalities.ok_or_else(|| missing("n_modalities"))?,
            },
            input_dims: match self.explicit_dims()? {
                Some(d) => d,
                None => dims.ok_or_else(|| missing("dims"))?,
            },
            depth: self.map.get("model.depth")?,
            base_channels: self.map.get("model.base_channels")?,
            kernel: self.map.get("model.kernel")?,
            dropout_rate: self.map.get("model.dropout")?,
            embedding_channels: self.map.get("model.embedding_channels")?,
            midflow_kind: self.map.get("model.midflow_kind")?,
            block_kind: self.map.get("model.block_kind")?,
            init_seed: self.derived("model-init"),
        };
        cfg.validate().map_err(|e| CliError::validation(e.to_string()))?;
        Ok(cfg)
    }

    pub fn training(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            epochs: self.map.get("training.epochs")?,
            batch_size: 1,
            optimizer: OptimConfig {
                kind: self.map.get("training.optimizer")?,
                lr: self.map.get("training.lr")?,
                beta1: self.map.get("training.beta1")?,
                beta2: self.map.get("training.beta2")?,
                eps: self.map.get("training.eps")?,
                momentum: self.map.get("training.momentum")?,
            },
            seed: self.derived("train"),
            recalibrate_bn: self.map.get("training.recalibrate_bn")?,
        };
        cfg.validate().map_err(|e| CliError::validation(e.to_string()))?;
        optimizers::<f32>()
            .get(&cfg.optimizer.kind)
            .map_err(|e| CliError::validation(e.to_string()))?;
        Ok(cfg)
    }

    pub fn cv(&self) -> Result<(CvConfig, String), CliError> {
        let name: String = self.map.get("cv.reconstructor")?;
        reconstructors().get(&name).map_err(|e| CliError::validation(e.to_string()))?;
        let k: usize = self.map.get("cv.k")?;
        if k < 2 {
            return Err(CliError::validation(format!("cv.k = {k} must be ≥ 2")));
        }
        Ok((
            CvConfig {
                k,
                seed: self.derived("cv"),
                cnr: self.cnr()?,
            },
            name,
        ))
    }

    pub fn cnr(&self) -> Result<CnrConfig, CliError> {
        Ok(CnrConfig {
            roi_dims: parse_dims(self.map.raw("metrics.roi_dims"))?,
            n_pairs: self.map.get("metrics.n_pairs")?,
            background_threshold: self.map.get("metrics.background_threshold")?,
            max_background_fraction: self.map.get("metrics.max_background_fraction")?,
            seed: self.derived("cnr"),
        })
    }

    pub fn grid(&self) -> Result<GridConfig, CliError> {
        let (n_damping, n_preference) = parse_grid(self.map.raw("clustering.grid"))?;
        Ok(GridConfig {
            n_damping,
            n_preference,
            preference_lo_pct: self.map.get("clustering.preference_lo_pct")?,
            preference_hi_pct: self.map.get("clustering.preference_hi_pct")?,
            max_iter: self.map.get("clustering.max_iter")?,
            convergence_window: self.map.get("clustering.convergence_window")?,
        })
    }

    pub fn varimax(&self) -> Result<VarimaxConfig, CliError> {
        Ok(VarimaxConfig {
            max_iter: self.map.get("factor.max_iter")?,
            tol: self.map.get("factor.tol")?,
            kaiser_normalize: self.map.get("factor.kaiser_normalize")?,
        })
    }

    pub fn threshold(&self) -> Result<f64, CliError> {
        self.map.get("factor.threshold")
    }

    pub fn bootstrap(&self) -> Result<BootstrapConfig, CliError> {
        let mode: String = self.map.get("stats.mode")?;
        repartition_registry().get(&mode).map_err(|e| CliError::validation(e.to_string()))?;
        Ok(BootstrapConfig {
            replicates: self.map.get("stats.bootstrap_m")?,
            seed: self.derived("bootstrap"),
            mode,
        })
    }

    pub fn alpha(&self) -> Result<f64, CliError> {
        let a: f64 = self.map.get("stats.alpha")?;
        if !(a > 0.0 && a < 1.0) {
            return Err(CliError::validation(format!("stats.alpha = {a} must be in (0, 1)")));
        }
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let m = ConfigMap::parse("seed = 4\n# note\n[training]\nepochs=3\n; other\n[stats]\nmode = replacement\n").unwrap();
        let e = m.effective();
        assert_eq!(e["seed"], "4");
        assert_eq!(e["training.epochs"], "3");
        assert_eq!(e["stats.mode"], "replacement");
        assert_eq!(e["cv.k"], "10");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        assert!(ConfigMap::parse("[training]\nepoch = 3").is_err());
        assert!(ConfigMap::parse("[training\nepochs = 3").is_err());
        assert!(ConfigMap::parse("epochs").is_err());
    }

    #[test]
    fn typed_values_are_validated() {
        let mut m = ConfigMap::default();
        m.set("training.epochs", "many").unwrap();
        assert!(RunConfig::new(m).is_err());
        let mut m = ConfigMap::default();
        m.set("stats.mode", "jackknife").unwrap();
        assert!(RunConfig::new(m).is_err());
        let mut m = ConfigMap::default();
        m.set("model.kernel", "4").unwrap();
        assert!(RunConfig::new(m).is_err());
    }

    #[test]
    fn dims_and_grid() {
        assert_eq!(parse_dims("32x32x24").unwrap(), [32, 32, 24]);
        assert!(parse_dims("32x32").is_err());
        assert_eq!(parse_grid("10x50").unwrap(), (10, 50));
        assert!(parse_grid("0x5").is_err());
    }
}
