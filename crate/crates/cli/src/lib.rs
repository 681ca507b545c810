//! `fusestrata` command-line front end.
//!
//! Every subcommand reads its inputs from flags (or from the output
//! directory of an earlier stage) and writes CSV, JSON and SVG reports
//! under `--out`. Exit status: 0 success, 1 invalid input or usage, 2
//! failure while running.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::Ctx;
use crate::config::{parse_dims, parse_grid, ConfigMap, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "fusestrata", version, about = "Multimodal volume autoencoder and phenotype stratification pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// `key = value` config file with `[section]` headers
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing)
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Master seed; every module stream derives from it
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores); falls back to FUSESTRATA_THREADS
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Volume dims, e.g. 32x32x24
    #[arg(long, global = true)]
    pub dims: Option<String>,
    /// Encoder depth
    #[arg(long, global = true)]
    pub depth: Option<usize>,
    /// Base channel count; for `params`, the mid-flow width to compare
    #[arg(long, global = true)]
    pub channels: Option<usize>,
    /// Convolution kernel size
    #[arg(long, global = true)]
    pub kernel: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub modalities: Option<usize>,
    /// Damping × preference grid sizes, e.g. 10x50
    #[arg(long, global = true)]
    pub grid: Option<String>,
    /// Bootstrap replicate count
    #[arg(long = "bootstrap-m", global = true)]
    pub bootstrap_m: Option<usize>,
    /// Resample with replacement instead of permuting
    #[arg(long, global = true)]
    pub replacement: bool,
    /// Override any config key, e.g. --set training.lr=0.001
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted strata
    Synth {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        groups: Option<usize>,
        #[arg(long = "effect-size")]
        effect_size: Option<f64>,
    },
    /// Train the fusion autoencoder
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// K-fold cross-validation of a reconstructor
    Cv {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        reconstructor: Option<String>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Extract fused embeddings with a trained model
    Embed {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Reconstruction metrics of a trained model
    Metrics {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Affinity propagation grid search over embeddings
    Cluster {
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Principal factors with varimax rotation
    Factors {
        #[arg(long)]
        phenotypes: Option<PathBuf>,
    },
    /// Kruskal–Wallis and bootstrap tests of factors across clusters
    Stats {
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        clusters: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Factor quantile profile per cluster
    Profile {
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        clusters: Option<PathBuf>,
    },
    /// Parameter counts of the model and mid-flow blocks
    Params,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Cv { .. } => "cv",
            Command::Embed { .. } => "embed",
            Command::Metrics { .. } => "metrics",
            Command::Cluster { .. } => "cluster",
            Command::Factors { .. } => "factors",
            Command::Stats { .. } => "stats",
            Command::Profile { .. } => "profile",
            Command::Params => "params",
        }
    }
}

/// Layers config file and flags over the defaults.
pub fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let g = &cli.global;
    let mut map = match &g.config {
        Some(p) => ConfigMap::load(p)?,
        None => ConfigMap::default(),
    };
    let mut put = |k: &str, v: Option<String>| -> Result<(), CliError> {
        match v {
            Some(v) => map.set(k, v),
            None => Ok(()),
        }
    };
    let s = |v: Option<usize>| v.map(|x| x.to_string());
    put("seed", g.seed.map(|x| x.to_string()))?;
    let env_threads = std::env::var("FUSESTRATA_THREADS").ok();
    if g.threads.is_some() {
        put("threads", s(g.threads))?;
    } else if let Some(t) = env_threads {
        put("threads", Some(t))?;
    }
    if let Some(d) = &g.dims {
        parse_dims(d)?;
        put("model.dims", Some(d.clone()))?;
    }
    put("model.depth", s(g.depth))?;
    if !matches!(cli.command, Command::Params) {
        put("model.base_channels", s(g.channels))?;
    }
    put("model.kernel", s(g.kernel))?;
    put("training.epochs", s(g.epochs))?;
    put("model.n_modalities", s(g.modalities))?;
    if let Some(gr) = &g.grid {
        parse_grid(gr)?;
        put("clustering.grid", Some(gr.clone()))?;
    }
    put("stats.bootstrap_m", s(g.bootstrap_m))?;
    if g.replacement {
        put("stats.mode", Some("replacement".into()))?;
    }
    match &cli.command {
        Command::Synth { n, groups, effect_size } => {
            put("synth.n", s(*n))?;
            put("synth.groups", s(*groups))?;
            put("synth.effect_size", effect_size.map(|x| x.to_string()))?;
        }
        Command::Train { lr, .. } => put("training.lr", lr.map(|x| x.to_string()))?,
        Command::Cv { k, reconstructor, lr, .. } => {
            put("cv.k", s(*k))?;
            put("cv.reconstructor", reconstructor.clone())?;
            put("training.lr", lr.map(|x| x.to_string()))?;
        }
        Command::Stats { alpha, .. } => put("stats.alpha", alpha.map(|x| x.to_string()))?,
        _ => {}
    }
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::validation(format!("--set `{kv}`: expected KEY=VALUE")))?;
        map.set(k.trim(), v.trim())?;
    }
    RunConfig::new(map)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = build_config(cli)?;
    if cfg.threads > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    std::fs::create_dir_all(&cli.global.out)
        .map_err(|e| CliError::runtime(format!("creating {}: {e}", cli.global.out.display())))?;
    let ctx = Ctx {
        cfg,
        out: cli.global.out.clone(),
    };
    log::info!("running {}", cli.command.name());
    match &cli.command {
        Command::Synth { .. } => commands::synth(&ctx),
        Command::Train { data, .. } => commands::train_cmd(&ctx, data),
        Command::Cv { data, .. } => commands::cv(&ctx, data),
        Command::Embed { data, model } => commands::embed(&ctx, data, model),
        Command::Metrics { data, model } => commands::metrics(&ctx, data, model),
        Command::Cluster { embeddings } => commands::cluster(&ctx, embeddings),
        Command::Factors { phenotypes } => commands::factors(&ctx, phenotypes),
        Command::Stats { scores, clusters, .. } => commands::stats(&ctx, scores, clusters),
        Command::Profile { scores, clusters } => commands::profile(&ctx, scores, clusters),
        Command::Params => commands::params(&ctx, cli.global.channels),
    }
}

/// Parses `argv` (program name first), runs it and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("fusestrata {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}
