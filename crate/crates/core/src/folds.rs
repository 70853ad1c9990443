//! Fold construction for repeated (nested) group K-fold cross-validation.
//!
//! Every split operates on *units*: patient/group ids for tile tasks and bag
//! ids for slide tasks. A unit is never divided, so all samples of a group
//! land on the same side of every split. Inputs are canonicalised (sorted by
//! id) before the seeded shuffle, which makes a plan a pure function of the
//! unit multiset, `k` and the seed.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataspec::{BagSet, Label, SampleManifest};
use crate::error::{Error, Result};
use crate::rng;

/// A unit to be assigned to a stratified fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratUnit {
    pub id: String,
    pub class: usize,
    /// Number of samples the unit carries; larger units are placed first.
    pub size: usize,
}

fn check_k(k: usize, n_units: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Argument(format!("k must be >= 2, got {k}")));
    }
    if k > n_units {
        return Err(Error::Infeasible(format!("k = {k} exceeds the {n_units} available units")));
    }
    Ok(())
}

/// Splits `units` into `k` test folds, balancing per-class unit counts.
///
/// Units are ordered by size (descending) with a seeded random tiebreak and
/// greedily placed into the fold that minimises the squared deviation of the
/// per-class counts from their targets `n_c / k`. For one extra unit of class
/// `c` that is the fold with the fewest class-`c` units; remaining ties go to
/// the fold with the fewest samples, then the fewest units, then the lowest
/// index. Each class is therefore dealt round-robin and every fold holds
/// `floor(n_c/k)` or `ceil(n_c/k)` units of class `c`.
pub fn stratified_group_kfold(units: &[StratUnit], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    check_k(k, units.len())?;
    let mut order: Vec<&StratUnit> = units.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    if order.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::Duplicate("unit ids must be unique".into()));
    }
    let mut rng = rng::stream(seed, "stratified-group-kfold", &[k as u64]);
    order.shuffle(&mut rng);
    order.sort_by_key(|u| std::cmp::Reverse(u.size));

    let n_classes = units.iter().map(|u| u.class).max().unwrap_or(0) + 1;
    let mut class_counts = vec![vec![0usize; n_classes]; k];
    let mut sizes = vec![0usize; k];
    let mut folds: Vec<Vec<String>> = vec![Vec::new(); k];
    for u in order {
        let best = (0..k).min_by_key(|&f| (class_counts[f][u.class], sizes[f], folds[f].len(), f)).unwrap();
        class_counts[best][u.class] += 1;
        sizes[best] += u.size;
        folds[best].push(u.id.clone());
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(folds)
}

/// Splits `units` into `k` test folds whose sizes differ by at most one.
pub fn group_kfold(units: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    check_k(k, units.len())?;
    let mut order: Vec<&String> = units.iter().collect();
    order.sort();
    if order.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Duplicate("unit ids must be unique".into()));
    }
    let mut rng = rng::stream(seed, "group-kfold", &[k as u64]);
    order.shuffle(&mut rng);
    let mut fold_order: Vec<usize> = (0..k).collect();
    fold_order.shuffle(&mut rng);
    let mut folds: Vec<Vec<String>> = vec![Vec::new(); k];
    for (i, id) in order.into_iter().enumerate() {
        folds[fold_order[i % k]].push(id.clone());
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Group,
    Bag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnerFold {
    pub fold: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OuterFold {
    pub seed: u64,
    pub fold: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inner: Vec<InnerFold>,
}

/// Every partition used by one run, fixed before any training starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub unit_kind: UnitKind,
    pub stratified: bool,
    pub seeds: Vec<u64>,
    pub outer_k: usize,
    pub inner_k: Option<usize>,
    pub folds: Vec<OuterFold>,
}

impl FoldPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks the partition laws: per seed the test folds are disjoint and
    /// exhaustive, train ∩ test is empty, and inner folds partition the
    /// outer-train units.
    pub fn validate(&self, all_units: &BTreeSet<String>) -> Result<()> {
        for &seed in &self.seeds {
            let mut seen = BTreeSet::new();
            for f in self.folds.iter().filter(|f| f.seed == seed) {
                let test: BTreeSet<_> = f.test.iter().cloned().collect();
                let train: BTreeSet<_> = f.train.iter().cloned().collect();
                if let Some(u) = test.intersection(&train).next() {
                    return Err(Error::Leakage(format!("unit `{u}` in train and test (seed {seed}, fold {})", f.fold)));
                }
                for u in &test {
                    if !seen.insert(u.clone()) {
                        return Err(Error::Infeasible(format!("unit `{u}` tested twice under seed {seed}")));
                    }
                }
                if test.union(&train).cloned().collect::<BTreeSet<_>>() != *all_units {
                    return Err(Error::Infeasible(format!("seed {seed} fold {} is not exhaustive", f.fold)));
                }
                if !f.inner.is_empty() {
                    let mut inner_seen = BTreeSet::new();
                    for inner in &f.inner {
                        for u in &inner.val {
                            if !inner_seen.insert(u.clone()) {
                                return Err(Error::Infeasible(format!("inner unit `{u}` validated twice")));
                            }
                        }
                    }
                    if inner_seen != train {
                        return Err(Error::Infeasible("inner folds do not partition outer train".into()));
                    }
                }
            }
            if seen != *all_units {
                return Err(Error::Infeasible(format!("seed {seed} does not test every unit")));
            }
        }
        Ok(())
    }
}

fn complement(all: &[String], test: &[String]) -> Vec<String> {
    let t: BTreeSet<&String> = test.iter().collect();
    all.iter().filter(|u| !t.contains(u)).cloned().collect()
}

/// Majority class of each group (ties → lower class index) with the group
/// size, for stratifying tile tasks at group granularity.
pub fn group_units(manifest: &SampleManifest) -> Vec<StratUnit> {
    let mut hist: BTreeMap<&str, BTreeMap<usize, usize>> = BTreeMap::new();
    for e in &manifest.entries {
        let class = e.label.class().unwrap_or(0);
        *hist.entry(e.group_id.as_str()).or_default().entry(class).or_default() += 1;
    }
    hist.into_iter()
        .map(|(g, h)| {
            let size = h.values().sum();
            let class = h.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(c, _)| *c).unwrap();
            StratUnit { id: g.to_string(), class, size }
        })
        .collect()
}

/// Outer-only plan over groups for tile tasks.
pub fn tile_plan(units: &[StratUnit], stratified: bool, k: usize, seeds: &[u64]) -> Result<FoldPlan> {
    let mut all: Vec<String> = units.iter().map(|u| u.id.clone()).collect();
    all.sort();
    let mut folds = Vec::new();
    for &seed in seeds {
        let fold_seed = rng::derive_seed(seed, "outer", &[]);
        let tests = if stratified { stratified_group_kfold(units, k, fold_seed)? } else { group_kfold(&all, k, fold_seed)? };
        for (fold, test) in tests.into_iter().enumerate() {
            folds.push(OuterFold { seed, fold, train: complement(&all, &test), test, inner: Vec::new() });
        }
    }
    Ok(FoldPlan { unit_kind: UnitKind::Group, stratified, seeds: seeds.to_vec(), outer_k: k, inner_k: None, folds })
}

/// Repeated nested plan over bags. Classification bags are stratified in
/// both loops; regression bags use plain balanced folds.
pub fn nested_plan(bags: &BagSet, outer_k: usize, inner_k: usize, seeds: &[u64]) -> Result<FoldPlan> {
    let classification = bags.bags.first().map(|b| matches!(b.label, Label::Class(_))).unwrap_or(false);
    let units: Vec<StratUnit> =
        bags.bags.iter().map(|b| StratUnit { id: b.bag_id.clone(), class: b.label.class().unwrap_or(0), size: 1 }).collect();
    if classification {
        let mut per_class: BTreeMap<usize, usize> = BTreeMap::new();
        for u in &units {
            *per_class.entry(u.class).or_default() += 1;
        }
        if let Some((c, n)) = per_class.iter().find(|(_, &n)| n < outer_k) {
            return Err(Error::Infeasible(format!("class {c} has {n} bags, fewer than outer_k = {outer_k}")));
        }
    }
    check_k(outer_k, units.len())?;
    let all: Vec<String> = units.iter().map(|u| u.id.clone()).collect();
    let by_id: BTreeMap<&str, &StratUnit> = units.iter().map(|u| (u.id.as_str(), u)).collect();

    let mut folds = Vec::new();
    for &seed in seeds {
        let outer_seed = rng::derive_seed(seed, "outer", &[]);
        let tests =
            if classification { stratified_group_kfold(&units, outer_k, outer_seed)? } else { group_kfold(&all, outer_k, outer_seed)? };
        for (fold, test) in tests.into_iter().enumerate() {
            let train = complement(&all, &test);
            let inner_seed = rng::derive_seed(seed, "inner", &[fold as u64]);
            let inner_tests = if classification {
                let inner_units: Vec<StratUnit> = train.iter().map(|id| by_id[id.as_str()].clone()).collect();
                stratified_group_kfold(&inner_units, inner_k, inner_seed)?
            } else {
                group_kfold(&train, inner_k, inner_seed)?
            };
            let inner =
                inner_tests.into_iter().enumerate().map(|(i, val)| InnerFold { fold: i, train: complement(&train, &val), val }).collect();
            folds.push(OuterFold { seed, fold, train, test, inner });
        }
    }
    Ok(FoldPlan { unit_kind: UnitKind::Bag, stratified: classification, seeds: seeds.to_vec(), outer_k, inner_k: Some(inner_k), folds })
}
