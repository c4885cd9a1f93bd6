//! Embedding-space dataset pruning.
//!
//! The pipeline takes an n×d embedding matrix, clusters it with a
//! deterministic k-means, drops items far from their centroid, removes
//! semantic duplicates inside each cluster and writes keep/delete
//! manifests. [`metrics`] scores the outcome (DEL / NormDEL) and does the
//! equal-compute and storage budgeting arithmetic.

pub mod cli;
pub mod error;
pub mod kmeans;
pub mod linalg;
pub mod metrics;
pub mod prune;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
pub use kmeans::{ClusterModel, KMeansConfig, KSpec};
pub use metrics::{DelScore, RetentionRatio, SavingsReport};
pub use prune::{PruneConfig, PruneDecision, PruneManifest, Status, SweepOutcome};
pub use store::{EmbeddingMatrix, ItemEntry, ItemManifest};
pub use synth::{GroundTruth, SynthSpec};
