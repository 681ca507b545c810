//! Data handling and downstream statistics for multimodal volume embeddings.
//!
//! The crate covers everything outside the neural network itself:
//!
//! - [`volio`]: MMFV volume files, population min-max normalization,
//!   phenotype tables and the planted-strata synthetic generator.
//! - [`reconmetrics`]: MSE, normalized difference and ROI-based CNR.
//! - [`apcluster`]: affinity propagation, silhouette and the
//!   damping × preference grid search.
//! - [`factors`]: correlation PCA, Kaiser retention, Varimax and
//!   regression factor scores.
//! - [`stratstats`]: Kruskal-Wallis, Benjamini-Hochberg, the bootstrap
//!   repartition null and cluster profiles.

pub mod apcluster;
pub mod factors;
pub mod reconmetrics;
pub mod registry;
pub mod seed;
pub mod stats_util;
pub mod stratstats;
pub mod volio;

pub use registry::{Registry, UnknownStrategy};
