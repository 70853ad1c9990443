//! Tile-level probing and slide-level ABMIL evaluation under the fold plan.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::ledger::{PredictionLedger, PredictionRow, SkipEvent, SkipKind};
use super::ProbeKind;
use crate::abmil::{self, AbmilConfig, BagData, EpochLog, Head};
use crate::config::RunConfig;
use crate::dataspec::{assemble_bags, EmbeddingTable, Label, LabelKind, SampleManifest};
use crate::error::{Error, Result};
use crate::folds::{self, FoldPlan, OuterFold};
use crate::probes::{self, KnnIndex};
use crate::rng;

/// One encoder's embeddings with its manifest.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub id: String,
    pub table: EmbeddingTable,
    pub manifest: SampleManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRecord {
    pub model: String,
    pub seed: u64,
    pub fold: usize,
    pub config: AbmilConfig,
    pub epoch_budget: usize,
    /// Mean inner score per grid point (`None` when it diverged).
    pub grid_scores: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrainingLog {
    pub model: String,
    pub seed: u64,
    pub fold: usize,
    pub epochs: Vec<EpochLog>,
}

#[derive(Debug, Clone)]
pub struct TaskResult {
    pub plan: FoldPlan,
    pub ledger: PredictionLedger,
    pub skips: Vec<SkipEvent>,
    pub selections: Vec<SelectionRecord>,
    pub logs: Vec<TrainingLog>,
    /// Number of model fits performed (ABMIL: inner runs plus retrains).
    pub fits: usize,
}

fn check_designs(models: &[ModelData]) -> Result<&SampleManifest> {
    let first = models.first().ok_or_else(|| Error::Argument("no models configured".into()))?;
    for m in &models[1..] {
        if !first.manifest.same_design(&m.manifest) {
            return Err(Error::Alignment(format!(
                "manifest of `{}` does not describe the same samples, groups and labels as `{}`",
                m.id, first.id
            )));
        }
    }
    Ok(&first.manifest)
}

/// Fails when any group id appears on both sides of a split.
pub fn audit_groups<'a>(train: impl Iterator<Item = &'a str>, test: impl Iterator<Item = &'a str>, what: &str) -> Result<()> {
    let train: BTreeSet<&str> = train.collect();
    if let Some(g) = test.into_iter().find(|g| train.contains(g)) {
        return Err(Error::Leakage(format!("group `{g}` on both sides of {what}")));
    }
    Ok(())
}

enum FoldOutput {
    Rows(Vec<PredictionRow>),
    Skip(SkipEvent),
}

fn tile_fold(model: &ModelData, fold: &OuterFold, probe: ProbeKind, cfg: &RunConfig) -> Result<FoldOutput> {
    let manifest = &model.manifest;
    let test_groups: BTreeSet<&str> = fold.test.iter().map(String::as_str).collect();
    let train_groups: BTreeSet<&str> = fold.train.iter().map(String::as_str).collect();
    let train: Vec<_> = manifest.entries.iter().filter(|e| train_groups.contains(e.group_id.as_str())).collect();
    let test: Vec<_> = manifest.entries.iter().filter(|e| test_groups.contains(e.group_id.as_str())).collect();
    audit_groups(
        train.iter().map(|e| e.group_id.as_str()),
        test.iter().map(|e| e.group_id.as_str()),
        &format!("seed {} fold {}", fold.seed, fold.fold),
    )?;
    let skip = |detail: String| {
        Ok(FoldOutput::Skip(SkipEvent {
            model: model.id.clone(),
            seed: fold.seed,
            fold: fold.fold,
            inner_fold: None,
            kind: SkipKind::DegenerateFold,
            detail,
        }))
    };
    if train.is_empty() || test.is_empty() {
        return skip("empty train or test part".into());
    }
    let x = probes::design_matrix(&model.table, &train.iter().map(|e| e.row_index).collect::<Vec<_>>())?;
    let xt = probes::design_matrix(&model.table, &test.iter().map(|e| e.row_index).collect::<Vec<_>>())?;
    let n_classes = manifest.n_classes();
    let classes = || train.iter().map(|e| e.label.class().expect("class task")).collect::<Vec<_>>();
    let predictions: Vec<Label> = match probe {
        ProbeKind::Lr => match probes::fit_logistic(&x, &classes(), n_classes, &cfg.logistic) {
            Ok(m) => probes::predict_logistic(&m, &xt)?.0.into_iter().map(Label::Class).collect(),
            Err(Error::DegenerateFold(why)) => return skip(why),
            Err(e) => return Err(e),
        },
        ProbeKind::Knn => {
            let index = KnnIndex::new(x, classes(), n_classes)?;
            probes::knn_predict(&index, &xt, cfg.knn.k)?.into_iter().map(Label::Class).collect()
        }
        ProbeKind::Ridge => {
            let y = DMatrix::from_iterator(train.len(), 1, train.iter().map(|e| e.label.real().expect("real task")));
            let m = probes::fit_ridge(&x, &y, &cfg.ridge)?;
            probes::predict_ridge(&m, &xt)?.column(0).iter().map(|&v| Label::Real(v)).collect()
        }
        ProbeKind::Abmil => return Err(Error::Config("abmil cannot run a tile task".into())),
    };
    Ok(FoldOutput::Rows(
        test.iter()
            .zip(predictions)
            .map(|(e, p)| PredictionRow {
                model: model.id.clone(),
                sample_id: e.sample_id.clone(),
                seed: fold.seed,
                fold: fold.fold,
                prediction: p,
                truth: e.label,
            })
            .collect(),
    ))
}

fn collect(
    models: &[ModelData],
    manifest: &SampleManifest,
    outputs: Vec<Result<FoldOutput>>,
) -> Result<(PredictionLedger, Vec<SkipEvent>)> {
    let mut ledger = PredictionLedger::new(manifest.kind, manifest.class_names.clone());
    let mut skips = Vec::new();
    for out in outputs {
        match out? {
            FoldOutput::Rows(rows) => ledger.rows.extend(rows),
            FoldOutput::Skip(s) => skips.push(s),
        }
    }
    let order: BTreeMap<&str, usize> = models.iter().enumerate().map(|(i, m)| (m.id.as_str(), i)).collect();
    ledger.rows.sort_by(|a, b| (order[a.model.as_str()], &a.sample_id, a.seed).cmp(&(order[b.model.as_str()], &b.sample_id, b.seed)));
    ledger.check()?;
    Ok((ledger, skips))
}

/// Repeated (stratified) group K-fold over tiles; one probe fit per
/// (model, seed, fold).
pub fn run_tile_task(models: &[ModelData], cfg: &RunConfig) -> Result<TaskResult> {
    let manifest = check_designs(models)?;
    let probe = cfg.task.probe;
    let classification = manifest.kind == LabelKind::Class;
    if classification != matches!(probe, ProbeKind::Lr | ProbeKind::Knn) {
        return Err(Error::Config(format!("probe `{probe}` does not fit this label kind")));
    }
    let units = folds::group_units(manifest);
    let plan = folds::tile_plan(&units, classification && cfg.folds.stratified, cfg.folds.outer_k, &cfg.folds.seeds)?;
    plan.validate(&units.iter().map(|u| u.id.clone()).collect())?;
    let jobs: Vec<(usize, usize)> = (0..models.len()).flat_map(|m| (0..plan.folds.len()).map(move |f| (m, f))).collect();
    let outputs: Vec<Result<FoldOutput>> = jobs.par_iter().map(|&(m, f)| tile_fold(&models[m], &plan.folds[f], probe, cfg)).collect();
    let (ledger, skips) = collect(models, manifest, outputs)?;
    Ok(TaskResult { fits: jobs.len(), plan, ledger, skips, selections: Vec::new(), logs: Vec::new() })
}

struct SlideFold {
    output: FoldOutput,
    skips: Vec<SkipEvent>,
    selection: Option<SelectionRecord>,
    log: Option<TrainingLog>,
    fits: usize,
}

fn slide_fold(
    model: &ModelData,
    bags: &[BagData],
    groups: &[String],
    index: &BTreeMap<String, usize>,
    fold: &OuterFold,
    head: Head,
    grid: &[AbmilConfig],
) -> Result<SlideFold> {
    let ix = |ids: &[String]| -> Vec<usize> { ids.iter().map(|id| index[id]).collect() };
    let (train, test) = (ix(&fold.train), ix(&fold.test));
    let what = format!("seed {} fold {}", fold.seed, fold.fold);
    audit_groups(train.iter().map(|&i| groups[i].as_str()), test.iter().map(|&i| groups[i].as_str()), &what)?;
    let inner: Vec<(Vec<usize>, Vec<usize>)> = fold.inner.iter().map(|f| (ix(&f.train), ix(&f.val))).collect();
    for (i, (tr, va)) in inner.iter().enumerate() {
        audit_groups(tr.iter().map(|&i| groups[i].as_str()), va.iter().map(|&i| groups[i].as_str()), &format!("{what} inner fold {i}"))?;
    }
    let event = |inner_fold: Option<usize>, kind: SkipKind, detail: String| SkipEvent {
        model: model.id.clone(),
        seed: fold.seed,
        fold: fold.fold,
        inner_fold,
        kind,
        detail,
    };
    let skipped = |detail: String, skips: Vec<SkipEvent>, fits: usize| SlideFold {
        output: FoldOutput::Skip(event(None, SkipKind::DegenerateFold, detail)),
        skips,
        selection: None,
        log: None,
        fits,
    };
    let grid_seed = rng::derive_seed(fold.seed, "grid", &[fold.fold as u64]);
    let selection = match abmil::grid_select(bags, &inner, head, grid, grid_seed) {
        Ok(s) => s,
        Err(Error::DegenerateFold(why)) => return Ok(skipped(why, Vec::new(), 0)),
        Err(e @ Error::Divergence { .. }) => {
            let detail = format!("every grid configuration diverged ({e})");
            return Ok(skipped(detail, Vec::new(), grid.len() * inner.len()));
        }
        Err(e) => return Err(e),
    };
    let mut skips: Vec<SkipEvent> =
        selection.excluded_folds.iter().map(|(f, why)| event(Some(*f), SkipKind::DegenerateInnerFold, why.clone())).collect();
    for s in &selection.scores {
        if let Some(why) = &s.diverged {
            let c = &s.config;
            skips.push(event(None, SkipKind::Divergence, format!("lr={} m={} l={}: {why}", c.lr, c.m, c.l)));
        }
    }
    let fits = grid.len() * (inner.len() - selection.excluded_folds.len()) + 1;
    let train_bags: Vec<BagData> = train.iter().map(|&i| bags[i].clone()).collect();
    let retrain_seed = rng::derive_seed(fold.seed, "retrain", &[fold.fold as u64]);
    let out = match abmil::retrain_full(&train_bags, head, &selection.best, selection.epoch_budget, retrain_seed) {
        Ok(o) => o,
        Err(e @ Error::Divergence { .. }) => {
            skips.push(event(None, SkipKind::Divergence, format!("retraining the selected configuration: {e}")));
            return Ok(skipped("retraining diverged".into(), skips, fits));
        }
        Err(e) => return Err(e),
    };
    let mut rows = Vec::with_capacity(test.len());
    for &i in &test {
        rows.push(PredictionRow {
            model: model.id.clone(),
            sample_id: bags[i].bag_id.clone(),
            seed: fold.seed,
            fold: fold.fold,
            prediction: out.model.predict(&bags[i])?,
            truth: bags[i].target,
        });
    }
    Ok(SlideFold {
        output: FoldOutput::Rows(rows),
        skips,
        selection: Some(SelectionRecord {
            model: model.id.clone(),
            seed: fold.seed,
            fold: fold.fold,
            config: selection.best,
            epoch_budget: selection.epoch_budget,
            grid_scores: selection.scores.iter().map(|s| s.mean_score).collect(),
        }),
        log: Some(TrainingLog { model: model.id.clone(), seed: fold.seed, fold: fold.fold, epochs: out.log }),
        fits,
    })
}

/// Repeated nested K-fold over bags: inner grid selection, retraining on
/// the outer-train bags, prediction of the outer-test bags. Ledger sample
/// ids are bag ids.
pub fn run_slide_task(models: &[ModelData], cfg: &RunConfig) -> Result<TaskResult> {
    let manifest = check_designs(models)?;
    if cfg.task.probe != ProbeKind::Abmil {
        return Err(Error::Config(format!("probe `{}` cannot run a slide task", cfg.task.probe)));
    }
    let head = match manifest.kind {
        LabelKind::Class => Head::Classes(manifest.n_classes()),
        LabelKind::Real => Head::Regression,
    };
    let bag_set = assemble_bags(manifest)?;
    let plan = folds::nested_plan(&bag_set, cfg.folds.outer_k, cfg.folds.inner_k, &cfg.folds.seeds)?;
    plan.validate(&bag_set.bags.iter().map(|b| b.bag_id.clone()).collect())?;
    let grid = cfg.abmil.configs();
    let mut per_model = Vec::with_capacity(models.len());
    for m in models {
        let set = assemble_bags(&m.manifest)?;
        let data = set.bags.iter().map(|b| BagData::from_bag(&m.table, b)).collect::<Result<Vec<_>>>()?;
        let groups: Vec<String> = set.bags.iter().map(|b| b.group_id.clone()).collect();
        let index: BTreeMap<String, usize> = set.bags.iter().enumerate().map(|(i, b)| (b.bag_id.clone(), i)).collect();
        per_model.push((data, groups, index));
    }
    let jobs: Vec<(usize, usize)> = (0..models.len()).flat_map(|m| (0..plan.folds.len()).map(move |f| (m, f))).collect();
    let results: Vec<Result<SlideFold>> = jobs
        .par_iter()
        .map(|&(m, f)| {
            let (data, groups, index) = &per_model[m];
            slide_fold(&models[m], data, groups, index, &plan.folds[f], head, &grid)
        })
        .collect();
    let mut outputs = Vec::with_capacity(results.len());
    let mut extra = Vec::new();
    let mut selections = Vec::new();
    let mut logs = Vec::new();
    let mut fits = 0;
    for r in results {
        let r = r?;
        outputs.push(Ok(r.output));
        extra.extend(r.skips);
        selections.extend(r.selection);
        logs.extend(r.log);
        fits += r.fits;
    }
    let (ledger, mut skips) = collect(models, manifest, outputs)?;
    skips.extend(extra);
    skips.sort();
    Ok(TaskResult { plan, ledger, skips, selections, logs, fits })
}
