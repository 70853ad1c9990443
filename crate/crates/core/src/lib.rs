//! Evaluation harness for frozen feature embeddings.
//!
//! The crate consumes embedding tables produced by an external encoder and
//! scores them on downstream tasks under a fixed, fully deterministic
//! protocol:
//!
//! * [`folds`]: repeated (nested) stratified group K-fold plans.
//! * [`probes`]: L-BFGS logistic regression, kNN voting and SVD ridge.
//! * [`abmil`]: gated-attention multiple-instance learning for slide bags.
//! * [`metrics`]: MCC, Pearson, R² and top-k retrieval accuracy.
//! * [`stats`]: paired bootstrap, Friedman, Wilcoxon signed-rank, Holm and
//!   compact letter display.
//! * [`tileqc`] and [`augment`]: tile quality control and the augmentation
//!   families used for copy detection.
//! * [`runner`]: orchestration of the whole pipeline and on-disk artifacts.

pub mod abmil;
pub mod augment;
pub mod config;
pub mod dataspec;
pub mod error;
pub mod folds;
pub mod metrics;
pub mod probes;
pub mod rng;
pub mod runner;
pub mod stats;
pub mod synth;
pub mod tileqc;

pub use config::RunConfig;
pub use dataspec::{Bag, BagSet, EmbeddingTable, Label, LabelKind, ManifestEntry, SampleManifest};
pub use error::{Error, Result};
pub use folds::FoldPlan;
pub use metrics::ConfusionMatrix;
pub use runner::{Outcome, PredictionLedger, TaskKind};
pub use stats::{BootstrapDistribution, SignificanceReport};
pub use tileqc::TileRaster;
