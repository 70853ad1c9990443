//! Run configuration (TOML). Every methodological constant has a default
//! here and can be overridden; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abmil::AbmilConfig;
use crate::augment::{AugmentConfig, Family};
use crate::error::{Error, Result};
use crate::probes::{LogisticOptions, RidgeOptions};
use crate::runner::{ProbeKind, TaskKind};
use crate::stats::Metric;
use crate::tileqc::QcThresholds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub probe: ProbeKind,
    /// Defaults to MCC for classification and Pearson for regression.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self { kind: TaskKind::TileClass, probe: ProbeKind::Lr, metric: None }
    }
}

impl TaskConfig {
    pub fn metric(&self) -> Metric {
        self.metric.unwrap_or(if self.kind.is_classification() { Metric::Mcc } else { Metric::Pearson })
    }
}

/// One encoder under evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelInput {
    pub id: String,
    /// EMB1 table; for copy detection, the embeddings of the originals.
    pub embeddings: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Copy detection only: one EMB1 table per augmentation family, rows
    /// aligned with `embeddings`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub augmented: BTreeMap<Family, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FoldConfig {
    pub outer_k: usize,
    pub inner_k: usize,
    pub seeds: Vec<u64>,
    /// Stratify tile classification folds by group majority class.
    pub stratified: bool,
}

impl Default for FoldConfig {
    fn default() -> Self {
        Self { outer_k: 5, inner_k: 4, seeds: vec![0, 1, 2], stratified: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub alpha: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { replicates: 1000, alpha: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub lr: Vec<f64>,
    pub m: Vec<usize>,
    pub l: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { lr: vec![5e-5, 1e-4, 2e-4], m: vec![256, 512, 1024], l: vec![32, 128, 256] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbmilSection {
    /// Shared training settings; `lr`, `m` and `l` are replaced by each grid
    /// point.
    pub train: AbmilConfig,
    pub grid: GridConfig,
}

impl AbmilSection {
    /// Grid points in lr-major order.
    pub fn configs(&self) -> Vec<AbmilConfig> {
        let mut out = Vec::new();
        for &lr in &self.grid.lr {
            for &m in &self.grid.m {
                for &l in &self.grid.l {
                    out.push(AbmilConfig { lr, m, l, ..self.train });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub families: Vec<Family>,
    pub ranges: AugmentConfig,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self { families: Family::ALL.to_vec(), ranges: AugmentConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CopyDetectConfig {
    pub ks: Vec<usize>,
    /// Adds a row scoring randomly permuted queries (chance level).
    pub shuffled_baseline: bool,
}

impl Default for CopyDetectConfig {
    fn default() -> Self {
        Self { ks: vec![1, 5, 10], shuffled_baseline: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed for bootstrap tables, shuffles and augmentation.
    pub seed: u64,
    pub task: TaskConfig,
    pub folds: FoldConfig,
    pub bootstrap: BootstrapConfig,
    pub logistic: LogisticOptions,
    pub knn: KnnConfig,
    pub ridge: RidgeOptions,
    pub abmil: AbmilSection,
    pub qc: QcThresholds,
    pub augment: AugmentSection,
    pub copydetect: CopyDetectConfig,
    pub models: Vec<ModelInput>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a config file; relative model paths become absolute paths
    /// under the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let dir = std::path::absolute(dir).map_err(|e| Error::io(dir, e))?;
        cfg.resolve_paths(&dir);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for m in &mut self.models {
            fix(&mut m.embeddings);
            if let Some(p) = m.manifest.as_mut() {
                fix(p);
            }
            m.augmented.values_mut().for_each(fix);
        }
    }

    /// Canonical TOML with every default written out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Seeds `0..n`.
    pub fn set_seed_count(&mut self, n: usize) {
        self.folds.seeds = (0..n as u64).collect();
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let kind = self.task.kind;
        if !self.task.probe.supports(kind) {
            return bad(format!("probe `{}` cannot run task `{}`", self.task.probe, kind));
        }
        let metric = self.task.metric();
        if kind != TaskKind::CopyDetect && kind.is_classification() != matches!(metric, Metric::Mcc | Metric::Accuracy) {
            return bad(format!("metric `{metric:?}` does not fit task `{kind}`"));
        }
        if self.folds.seeds.is_empty() {
            return bad("folds.seeds must not be empty".into());
        }
        let mut seen = self.folds.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.folds.seeds.len() {
            return bad("folds.seeds contains duplicates".into());
        }
        if self.folds.outer_k < 2 || (kind.is_slide() && self.folds.inner_k < 2) {
            return bad("fold counts must be at least 2".into());
        }
        if self.bootstrap.replicates == 0 {
            return bad("bootstrap.replicates must be positive".into());
        }
        if !(self.bootstrap.alpha > 0.0 && self.bootstrap.alpha < 1.0) {
            return bad("bootstrap.alpha must lie in (0, 1)".into());
        }
        if self.knn.k == 0 {
            return bad("knn.k must be positive".into());
        }
        if kind.is_slide() && self.abmil.configs().is_empty() {
            return bad("abmil.grid is empty".into());
        }
        if self.copydetect.ks.contains(&0) {
            return bad("copydetect.ks entries must be positive".into());
        }
        let mut ids: Vec<&str> = self.models.iter().map(|m| m.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("duplicate model id `{}`", w[0]));
        }
        for m in &self.models {
            if m.id.is_empty() || m.id.contains([',', '/', '\\', '"', '\n']) {
                return bad(format!("model id {:?} must be non-empty without , / \\ or quotes", m.id));
            }
            match kind {
                TaskKind::CopyDetect if m.augmented.is_empty() => {
                    return bad(format!("model `{}` lists no augmented tables", m.id));
                }
                TaskKind::CopyDetect => {}
                _ if m.manifest.is_none() => return bad(format!("model `{}` has no manifest", m.id)),
                _ => {}
            }
        }
        Ok(())
    }
}
