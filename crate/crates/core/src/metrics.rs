//! Scalar evaluation metrics.
//!
//! Degenerate inputs resolve to a fixed value where a convention exists
//! (zero-denominator MCC and zero-variance Pearson both give 0), so bootstrap
//! replicates drawn from lopsided resamples remain defined. R² with constant
//! truth has no such convention and is reported as [`Error::Undefined`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self { n_classes, counts: vec![0; n_classes * n_classes] }
    }

    pub fn from_counts(n_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != n_classes * n_classes {
            return Err(Error::Shape(format!("{} counts for a {n_classes}x{n_classes} matrix", counts.len())));
        }
        Ok(Self { n_classes, counts })
    }

    pub fn from_pairs(n_classes: usize, truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Shape(format!("{} truths vs {} predictions", truth.len(), pred.len())));
        }
        let mut cm = Self::new(n_classes);
        for (&t, &p) in truth.iter().zip(pred) {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.n_classes || pred >= self.n_classes {
            return Err(Error::Range(format!("class ({truth}, {pred}) outside [0, {})", self.n_classes)));
        }
        self.counts[truth * self.n_classes + pred] += 1;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Matthews correlation coefficient.
pub fn mcc(cm: &ConfusionMatrix) -> f64 {
    if cm.n_classes() == 2 {
        let tp = cm.get(1, 1) as f64;
        let tn = cm.get(0, 0) as f64;
        let fp = cm.get(0, 1) as f64;
        let fn_ = cm.get(1, 0) as f64;
        let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if den == 0.0 {
            return 0.0;
        }
        return (tp * tn - fp * fn_) / den.sqrt();
    }
    mcc_multiclass(cm)
}

/// Multiclass MCC; agrees with the binary formula on 2×2 matrices.
pub fn mcc_multiclass(cm: &ConfusionMatrix) -> f64 {
    let k = cm.n_classes();
    let s = cm.total() as f64;
    let c: f64 = (0..k).map(|i| cm.get(i, i) as f64).sum();
    let t: Vec<f64> = (0..k).map(|i| (0..k).map(|j| cm.get(i, j) as f64).sum()).collect();
    let p: Vec<f64> = (0..k).map(|j| (0..k).map(|i| cm.get(i, j) as f64).sum()).collect();
    let pt: f64 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
    let pp: f64 = p.iter().map(|v| v * v).sum();
    let tt: f64 = t.iter().map(|v| v * v).sum();
    let d1 = s * s - pp;
    let d2 = s * s - tt;
    if d1 == 0.0 || d2 == 0.0 {
        return 0.0;
    }
    (c * s - pt) / (d1.sqrt() * d2.sqrt())
}

pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions vs {} truths", pred.len(), truth.len())));
    }
    let n = pred.len();
    if n < 2 {
        return Err(Error::Argument(format!("pearson needs n >= 2, got {n}")));
    }
    let nf = n as f64;
    let mp = pred.iter().sum::<f64>() / nf;
    let mt = truth.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in pred.iter().zip(truth) {
        let (dx, dy) = (x - mp, y - mt);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PearsonMode {
    /// Pearson per target column, averaged with equal weights.
    #[default]
    PerTarget,
    /// Pearson on the flattened n·T vectors.
    Flattened,
}

/// Pearson over `n × T` row-major matrices.
pub fn pearson_multi(pred: &[f64], truth: &[f64], n_targets: usize, mode: PearsonMode) -> Result<f64> {
    if n_targets == 0 {
        return Err(Error::Argument("pearson_multi needs at least one target".into()));
    }
    if pred.len() != truth.len() || !pred.len().is_multiple_of(n_targets) {
        return Err(Error::Shape(format!("{} predictions and {} truths for {n_targets} targets", pred.len(), truth.len())));
    }
    match mode {
        PearsonMode::Flattened => pearson(pred, truth),
        PearsonMode::PerTarget => {
            let mut acc = 0.0;
            for t in 0..n_targets {
                let p: Vec<f64> = pred.iter().skip(t).step_by(n_targets).copied().collect();
                let y: Vec<f64> = truth.iter().skip(t).step_by(n_targets).copied().collect();
                acc += pearson(&p, &y)?;
            }
            Ok(acc / n_targets as f64)
        }
    }
}

/// Coefficient of determination; negative when worse than the mean predictor.
pub fn r2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions vs {} truths", pred.len(), truth.len())));
    }
    let n = truth.len();
    if n < 2 {
        return Err(Error::Argument(format!("r2 needs n >= 2, got {n}")));
    }
    let mean = truth.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = truth.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Undefined("r2 with constant truth".into()));
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, y)| (y - p) * (y - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mse(pred: &[f64], truth: &[f64]) -> f64 {
    let n = truth.len().max(1) as f64;
    pred.iter().zip(truth).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n
}

/// Fraction of queries whose true gallery index ranks among the `k` largest
/// similarities. `sim` is `q × g` row-major; equal similarities rank the
/// lower gallery index first.
pub fn topk_accuracy(sim: &[f64], n_gallery: usize, true_match: &[usize], k: usize) -> Result<f64> {
    if n_gallery == 0 || sim.len() != true_match.len() * n_gallery {
        return Err(Error::Shape(format!(
            "similarity matrix of {} values for {} queries x {n_gallery} gallery",
            sim.len(),
            true_match.len()
        )));
    }
    if k == 0 || k > n_gallery {
        return Err(Error::Argument(format!("k = {k} outside [1, {n_gallery}]")));
    }
    if true_match.is_empty() {
        return Err(Error::Argument("no queries".into()));
    }
    let mut hits = 0usize;
    for (row, &target) in sim.chunks_exact(n_gallery).zip(true_match) {
        if target >= n_gallery {
            return Err(Error::Range(format!("true match {target} >= {n_gallery}")));
        }
        let s = row[target];
        // rank = number of gallery items ordered strictly before the target
        let rank = row.iter().enumerate().filter(|&(j, &v)| v > s || (v == s && j < target)).count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / true_match.len() as f64)
}
