//! Test-time predictions of every (model, sample, seed) and the skip log.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dataspec::{Label, LabelKind};
use crate::error::{Error, Result};
use crate::stats::SamplePool;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub model: String,
    pub sample_id: String,
    pub seed: u64,
    pub fold: usize,
    pub prediction: Label,
    pub truth: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionLedger {
    pub kind: LabelKind,
    /// Class names in index order (empty for regression).
    pub class_names: Vec<String>,
    pub rows: Vec<PredictionRow>,
}

pub const PREDICTIONS_HEADER: [&str; 6] = ["model", "sample_id", "seed", "fold", "prediction", "truth"];

#[derive(Deserialize)]
struct RawRow {
    model: String,
    sample_id: String,
    seed: u64,
    fold: usize,
    prediction: String,
    truth: String,
}

impl PredictionLedger {
    pub fn new(kind: LabelKind, class_names: Vec<String>) -> Self {
        Self { kind, class_names, rows: Vec::new() }
    }

    /// Model ids in order of first appearance.
    pub fn models(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.rows.iter().filter(|r| seen.insert(r.model.as_str())).map(|r| r.model.clone()).collect()
    }

    /// Canonical order: models keep their block order, rows within a model
    /// sort by (sample, seed).
    pub fn canonicalize(&mut self) {
        let order: BTreeMap<String, usize> = self.models().into_iter().enumerate().map(|(i, m)| (m, i)).collect();
        self.rows.sort_by(|a, b| (order[&a.model], &a.sample_id, a.seed).cmp(&(order[&b.model], &b.sample_id, b.seed)));
    }

    /// Each (model, sample, seed) may occur at most once and a sample keeps
    /// one truth.
    pub fn check(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let mut truth: BTreeMap<(&str, &str), &Label> = BTreeMap::new();
        for r in &self.rows {
            if !seen.insert((&r.model, &r.sample_id, r.seed)) {
                return Err(Error::Duplicate(format!("model `{}` predicts sample `{}` twice under seed {}", r.model, r.sample_id, r.seed)));
            }
            if let Some(t) = truth.insert((&r.model, &r.sample_id), &r.truth) {
                if t != &r.truth {
                    return Err(Error::Value(format!("sample `{}` has conflicting truths", r.sample_id)));
                }
            }
        }
        Ok(())
    }

    fn label_text(&self, l: &Label) -> String {
        match *l {
            Label::Class(c) => self.class_names[c].clone(),
            Label::Real(v) => v.to_string(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(PREDICTIONS_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.sample_id.clone(),
                r.seed.to_string(),
                r.fold.to_string(),
                self.label_text(&r.prediction),
                self.label_text(&r.truth),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<predictions>", e))?;
        Ok(())
    }

    /// Reads `predictions.csv`. Class names are re-indexed in lexicographic
    /// order of all names seen.
    pub fn read_csv<R: Read>(reader: R, kind: LabelKind) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != PREDICTIONS_HEADER {
            return Err(Error::Format(format!("predictions header must be `{}`", PREDICTIONS_HEADER.join(","))));
        }
        let raw = rdr.deserialize::<RawRow>().collect::<std::result::Result<Vec<_>, _>>()?;
        let class_names: Vec<String> = match kind {
            LabelKind::Class => {
                raw.iter().flat_map(|r| [r.prediction.clone(), r.truth.clone()]).collect::<BTreeSet<_>>().into_iter().collect()
            }
            LabelKind::Real => Vec::new(),
        };
        let parse = |s: &str| -> Result<Label> {
            match kind {
                LabelKind::Class => Ok(Label::Class(class_names.binary_search_by(|c| c.as_str().cmp(s)).expect("collected"))),
                LabelKind::Real => s
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(Label::Real)
                    .ok_or_else(|| Error::Value(format!("`{s}` is not a finite real"))),
            }
        };
        let mut rows = Vec::with_capacity(raw.len());
        for r in &raw {
            rows.push(PredictionRow {
                model: r.model.clone(),
                sample_id: r.sample_id.clone(),
                seed: r.seed,
                fold: r.fold,
                prediction: parse(&r.prediction)?,
                truth: parse(&r.truth)?,
            });
        }
        let ledger = Self { kind, class_names, rows };
        ledger.check()?;
        Ok(ledger)
    }

    /// Concatenates ledgers of the same label kind, re-indexing classes by
    /// name.
    pub fn merge(parts: Vec<PredictionLedger>) -> Result<Self> {
        let Some(kind) = parts.first().map(|p| p.kind) else {
            return Err(Error::Argument("no ledgers to merge".into()));
        };
        if parts.iter().any(|p| p.kind != kind) {
            return Err(Error::LabelKind("ledgers mix classification and regression".into()));
        }
        let names: Vec<String> = parts.iter().flat_map(|p| p.class_names.iter().cloned()).collect::<BTreeSet<_>>().into_iter().collect();
        let mut out = Self::new(kind, names.clone());
        for p in parts {
            let remap = |l: Label| match l {
                Label::Class(c) => Label::Class(names.binary_search(&p.class_names[c]).expect("collected")),
                other => other,
            };
            for r in &p.rows {
                out.rows.push(PredictionRow { prediction: remap(r.prediction), truth: remap(r.truth), ..r.clone() });
            }
        }
        out.check()?;
        Ok(out)
    }

    /// Sample ids predicted at least once by every model, sorted.
    pub fn shared_samples(&self) -> Vec<String> {
        let models = self.models();
        let mut per_model: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for r in &self.rows {
            per_model.entry(&r.model).or_default().insert(&r.sample_id);
        }
        let mut it = models.iter().map(|m| &per_model[m.as_str()]);
        let Some(first) = it.next() else {
            return Vec::new();
        };
        let mut shared: BTreeSet<&str> = first.clone();
        for s in it {
            shared = shared.intersection(s).copied().collect();
        }
        shared.into_iter().map(str::to_string).collect()
    }

    /// Truth and seed predictions of `model` for each of `samples`, in that
    /// order. Predictions within a sample are in seed order.
    pub fn pool(&self, model: &str, samples: &[String]) -> Result<SamplePool> {
        let mut by_sample: BTreeMap<&str, Vec<&PredictionRow>> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.model == model) {
            by_sample.entry(&r.sample_id).or_default().push(r);
        }
        let mut rows_of = |s: &str| -> Result<Vec<&PredictionRow>> {
            let mut v = by_sample.remove(s).ok_or_else(|| Error::Alignment(format!("model `{model}` has no prediction for `{s}`")))?;
            v.sort_by_key(|r| r.seed);
            Ok(v)
        };
        match self.kind {
            LabelKind::Class => {
                let mut samples_out = Vec::with_capacity(samples.len());
                for s in samples {
                    let rows = rows_of(s)?;
                    let truth = rows[0].truth.class().expect("class ledger");
                    samples_out.push((truth, rows.iter().map(|r| r.prediction.class().expect("class ledger")).collect()));
                }
                Ok(SamplePool::Classes { n_classes: self.class_names.len(), samples: samples_out })
            }
            LabelKind::Real => {
                let mut samples_out = Vec::with_capacity(samples.len());
                for s in samples {
                    let rows = rows_of(s)?;
                    let truth = rows[0].truth.real().expect("real ledger");
                    samples_out.push((truth, rows.iter().map(|r| r.prediction.real().expect("real ledger")).collect()));
                }
                Ok(SamplePool::Reals { samples: samples_out })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipKind {
    /// An outer fold that could not be trained; its test units get no
    /// prediction under that seed.
    DegenerateFold,
    /// An inner fold left out of hyperparameter selection.
    DegenerateInnerFold,
    /// A grid configuration dropped because training diverged.
    Divergence,
}

impl SkipKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipKind::DegenerateFold => "degenerate-fold",
            SkipKind::DegenerateInnerFold => "degenerate-inner-fold",
            SkipKind::Divergence => "divergence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct SkipEvent {
    pub model: String,
    pub seed: u64,
    pub fold: usize,
    pub inner_fold: Option<usize>,
    pub kind: SkipKind,
    pub detail: String,
}

pub const SKIPS_HEADER: [&str; 6] = ["model", "seed", "fold", "inner_fold", "kind", "detail"];

pub fn write_skips<W: Write>(writer: W, skips: &[SkipEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SKIPS_HEADER)?;
    for s in skips {
        w.write_record([
            s.model.clone(),
            s.seed.to_string(),
            s.fold.to_string(),
            s.inner_fold.map(|f| f.to_string()).unwrap_or_default(),
            s.kind.as_str().to_string(),
            s.detail.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<skips>", e))?;
    Ok(())
}
