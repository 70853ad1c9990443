//! Pipeline orchestration and on-disk artifacts.
//!
//! A run directory holds `config.toml` (the resolved configuration),
//! `plan.json`, `predictions.csv`, `skips.csv`, `bootstrap.csv`,
//! `cld.csv`, `pvalues.json` (two or more models), `selection.json` and
//! `logs/` (slide tasks), `copydetect.csv` (copy detection) and `run.json`
//! with the config hash and the SHA-256 of every other artifact.

pub mod compare;
pub mod copydetect;
pub mod ledger;
pub mod tasks;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abmil::write_training_log;
use crate::augment::{make_copy_detection_set, write_copy_detection_set, AugmentConfig, Family};
use crate::config::RunConfig;
use crate::dataspec::{load_embeddings, load_manifest, LabelKind};
use crate::error::{Error, Result};
use crate::stats::Metric;
use crate::tileqc::{qc_filter, read_ppm, write_qc_csv, QcThresholds, TileRaster};

pub use compare::{bootstrap_ledger, compare_models, BootstrapRun, PValues};
pub use copydetect::{run_copy_detection, CopyDetectRow};
pub use ledger::{PredictionLedger, PredictionRow, SkipEvent, SkipKind};
pub use tasks::{run_slide_task, run_tile_task, ModelData, TaskResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    TileClass,
    TileReg,
    SlideClass,
    SlideReg,
    CopyDetect,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::TileClass => "tile-class",
            TaskKind::TileReg => "tile-reg",
            TaskKind::SlideClass => "slide-class",
            TaskKind::SlideReg => "slide-reg",
            TaskKind::CopyDetect => "copy-detect",
        }
    }

    pub fn is_classification(self) -> bool {
        matches!(self, TaskKind::TileClass | TaskKind::SlideClass)
    }

    pub fn is_slide(self) -> bool {
        matches!(self, TaskKind::SlideClass | TaskKind::SlideReg)
    }

    pub fn label_kind(self) -> LabelKind {
        if self.is_classification() {
            LabelKind::Class
        } else {
            LabelKind::Real
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Lr,
    Knn,
    Ridge,
    Abmil,
}

impl ProbeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::Lr => "lr",
            ProbeKind::Knn => "knn",
            ProbeKind::Ridge => "ridge",
            ProbeKind::Abmil => "abmil",
        }
    }

    /// ABMIL only for slide tasks, ridge only for tile regression, lr/kNN
    /// only for tile classification. Copy detection takes no probe.
    pub fn supports(self, task: TaskKind) -> bool {
        match task {
            TaskKind::TileClass => matches!(self, ProbeKind::Lr | ProbeKind::Knn),
            TaskKind::TileReg => self == ProbeKind::Ridge,
            TaskKind::SlideClass | TaskKind::SlideReg => self == ProbeKind::Abmil,
            TaskKind::CopyDetect => true,
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [ProbeKind::Lr, ProbeKind::Knn, ProbeKind::Ridge, ProbeKind::Abmil]
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown probe `{s}`")))
    }
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub config_hash: String,
    /// Artifact path relative to the run directory → SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub skips: Vec<SkipEvent>,
    /// Probe or network fits performed.
    pub fits: usize,
}

impl Outcome {
    /// 0 on success, 2 when any fold or configuration was skipped.
    pub fn exit_code(&self) -> i32 {
        if self.skips.is_empty() {
            0
        } else {
            2
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects artifacts written into a run directory.
struct Artifacts {
    dir: PathBuf,
    written: BTreeMap<String, String>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), written: BTreeMap::new() })
    }

    fn write(&mut self, rel: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, &buf).map_err(|e| Error::io(&path, e))?;
        self.written.insert(rel.to_string(), sha256_hex(&buf));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        self.write(rel, |b| {
            serde_json::to_writer_pretty(&mut *b, value)?;
            b.push(b'\n');
            Ok(())
        })
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    config_hash: &'a str,
    task: TaskKind,
    models: Vec<&'a str>,
    fits: usize,
    skips: usize,
    artifacts: &'a BTreeMap<String, String>,
}

fn load_models(cfg: &RunConfig) -> Result<Vec<ModelData>> {
    let kind = cfg.task.kind.label_kind();
    cfg.models
        .iter()
        .map(|m| {
            let table = load_embeddings(&m.embeddings)?;
            let path = m.manifest.as_ref().ok_or_else(|| Error::Config(format!("model `{}` has no manifest", m.id)))?;
            let manifest = load_manifest(path, &table, kind).map_err(|e| match e {
                Error::Io { .. } => e,
                other => Error::Config(format!("{}: {other}", path.display())),
            })?;
            Ok(ModelData { id: m.id.clone(), table, manifest })
        })
        .collect()
}

/// Writes `bootstrap.csv`, `cld.csv` and, for two or more models,
/// `pvalues.json`.
fn write_comparison(art: &mut Artifacts, ledger: &PredictionLedger, metric: Metric, cfg: &RunConfig) -> Result<()> {
    let b = cfg.bootstrap;
    if ledger.models().len() >= 2 {
        let (run, report) = compare_models(ledger, metric, b.replicates, cfg.seed, b.alpha)?;
        art.write("bootstrap.csv", |w| compare::write_bootstrap_csv(w, &run.dists))?;
        art.write("cld.csv", |w| compare::write_cld_csv(w, &compare::cld_rows(&report)))?;
        art.json("pvalues.json", &PValues::new(&report, &run.table_id))?;
    } else {
        let run = bootstrap_ledger(ledger, metric, b.replicates, cfg.seed)?;
        art.write("bootstrap.csv", |w| compare::write_bootstrap_csv(w, &run.dists))?;
        let row = compare::single_cld_row(&run.dists[0])?;
        art.write("cld.csv", |w| compare::write_cld_csv(w, &[row]))?;
    }
    Ok(())
}

fn finish(art: Artifacts, cfg: &RunConfig, skips: Vec<SkipEvent>, fits: usize) -> Result<Outcome> {
    let config_hash = cfg.hash()?;
    let mut art = art;
    let record = RunRecord {
        config_hash: &config_hash,
        task: cfg.task.kind,
        models: cfg.models.iter().map(|m| m.id.as_str()).collect(),
        fits,
        skips: skips.len(),
        artifacts: &art.written.clone(),
    };
    let bytes = serde_json::to_vec_pretty(&record)?;
    let path = art.dir.join("run.json");
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(Outcome { config_hash, artifacts: std::mem::take(&mut art.written), skips, fits })
}

/// Runs the configured task end to end and writes every artifact into
/// `out_dir`.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome> {
    cfg.validate()?;
    if cfg.models.is_empty() {
        return Err(Error::Config("no models configured".into()));
    }
    let mut art = Artifacts::new(out_dir)?;
    let text = cfg.to_toml()?;
    art.write("config.toml", |w| {
        w.extend_from_slice(text.as_bytes());
        Ok(())
    })?;
    if cfg.task.kind == TaskKind::CopyDetect {
        let mut rows = Vec::new();
        for m in &cfg.models {
            let original = load_embeddings(&m.embeddings)?;
            let augmented = m.augmented.iter().map(|(f, p)| Ok((f.to_string(), load_embeddings(p)?))).collect::<Result<Vec<_>>>()?;
            let shuffled = cfg.copydetect.shuffled_baseline.then_some(cfg.seed);
            rows.extend(run_copy_detection(&m.id, &original, &augmented, &cfg.copydetect.ks, shuffled)?);
        }
        art.write("copydetect.csv", |w| copydetect::write_copydetect_csv(w, &rows))?;
        let fits = rows.len();
        return finish(art, cfg, Vec::new(), fits);
    }
    let models = load_models(cfg)?;
    let result = if cfg.task.kind.is_slide() { run_slide_task(&models, cfg)? } else { run_tile_task(&models, cfg)? };
    art.write("plan.json", |w| {
        w.extend_from_slice(result.plan.to_json()?.as_bytes());
        w.push(b'\n');
        Ok(())
    })?;
    art.write("predictions.csv", |w| result.ledger.write_csv(w))?;
    art.write("skips.csv", |w| ledger::write_skips(w, &result.skips))?;
    if cfg.task.kind.is_slide() {
        art.json("selection.json", &result.selections)?;
        for log in &result.logs {
            let rel = format!("logs/{}/seed{}_fold{}.csv", log.model, log.seed, log.fold);
            art.write(&rel, |w| write_training_log(w, &log.epochs))?;
        }
    }
    if result.ledger.rows.is_empty() {
        return Err(Error::DegenerateFold("every fold was skipped; no predictions to evaluate".into()));
    }
    write_comparison(&mut art, &result.ledger, cfg.task.metric(), cfg)?;
    finish(art, cfg, result.skips, result.fits)
}

/// Re-runs the comparison on existing `predictions.csv` ledgers.
pub fn compare_ledgers(paths: &[PathBuf], kind: LabelKind, cfg: &RunConfig, metric: Metric, out_dir: &Path) -> Result<Outcome> {
    let parts = paths
        .iter()
        .map(|p| {
            let f = File::open(p).map_err(|e| Error::io(p, e))?;
            PredictionLedger::read_csv(f, kind)
        })
        .collect::<Result<Vec<_>>>()?;
    let ledger = PredictionLedger::merge(parts)?;
    if ledger.models().len() < 2 {
        return Err(Error::Argument("compare needs predictions of at least two models".into()));
    }
    let mut art = Artifacts::new(out_dir)?;
    write_comparison(&mut art, &ledger, metric, cfg)?;
    finish(art, cfg, Vec::new(), 0)
}

/// Writes `violin.csv` (`model,replicate,value`) and, when `pvalues.json`
/// exists, `pvalue_heatmap.json` from a run directory.
pub fn report(run_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let boot = run_dir.join("bootstrap.csv");
    let f = File::open(&boot).map_err(|e| Error::io(&boot, e))?;
    let dists = compare::read_bootstrap_csv(f)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let violin = out_dir.join("violin.csv");
    {
        let file = File::create(&violin).map_err(|e| Error::io(&violin, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(compare::BOOTSTRAP_HEADER)?;
        for (model, values) in &dists {
            for (r, v) in values.iter().enumerate() {
                let value = if v.is_finite() { v.to_string() } else { String::new() };
                w.write_record([model.as_str(), &r.to_string(), &value])?;
            }
        }
        w.flush().map_err(|e| Error::io(&violin, e))?;
    }
    let mut written = vec![violin];
    let pv = run_dir.join("pvalues.json");
    if pv.exists() {
        let text = fs::read_to_string(&pv).map_err(|e| Error::io(&pv, e))?;
        let p: PValues = serde_json::from_str(&text)?;
        let out = out_dir.join("pvalue_heatmap.json");
        let mut bytes = serde_json::to_vec_pretty(&compare::heatmap(&p)?)?;
        bytes.push(b'\n');
        fs::write(&out, bytes).map_err(|e| Error::io(&out, e))?;
        written.push(out);
    }
    Ok(written)
}

/// `.ppm` tiles of a directory, sorted by file name; the tile id is the
/// file stem.
pub fn read_tile_dir(dir: &Path) -> Result<Vec<(String, TileRaster)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            Ok((id, read_ppm(&p)?))
        })
        .collect()
}

/// Runs tile QC over a directory and writes `qc.csv`. Returns the number of
/// kept tiles and the total.
pub fn qc_dir(input: &Path, th: &QcThresholds, out_dir: &Path) -> Result<(usize, usize)> {
    use rayon::prelude::*;
    let tiles = read_tile_dir(input)?;
    let rows: Vec<(String, _)> = tiles.par_iter().map(|(id, t)| (id.clone(), qc_filter(t, th))).collect();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("qc.csv");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_qc_csv(BufWriter::new(file), &rows)?;
    Ok((rows.iter().filter(|r| r.1.keep).count(), rows.len()))
}

/// Augments every tile of a directory with each family; returns the number
/// of augmented tiles written.
pub fn augment_dir(input: &Path, families: &[Family], ranges: &AugmentConfig, seed: u64, out_dir: &Path) -> Result<usize> {
    let tiles = read_tile_dir(input)?;
    let set = make_copy_detection_set(&tiles, families, ranges, seed)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_copy_detection_set(out_dir, &set)?;
    Ok(set.len())
}
