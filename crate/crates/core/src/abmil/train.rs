//! Training with early stopping, inner-CV grid selection and full retraining.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{backward, forward, loss_and_dout, AbmilModel, AbmilParams, AdamW, BagData, Head, WeightDecayMode};
use crate::dataspec::Label;
use crate::error::{Error, Result};
use crate::metrics::{mcc, ConfusionMatrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbmilConfig {
    pub lr: f64,
    /// Instance projection width.
    pub m: usize,
    /// Attention hidden width.
    pub l: usize,
    pub dropout: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub decay_mode: WeightDecayMode,
}

impl Default for AbmilConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            m: 512,
            l: 128,
            dropout: 0.6,
            weight_decay: 1e-2,
            beta1: 0.95,
            beta2: 0.99,
            eps: 1e-4,
            max_epochs: 50,
            patience: 10,
            decay_mode: WeightDecayMode::LrScaled,
        }
    }
}

impl AbmilConfig {
    /// Selection tie-break order: lower lr, then smaller M, then smaller L.
    fn tie_key(&self) -> (f64, usize, usize) {
        (self.lr, self.m, self.l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// MCC (classification) or negative MSE (regression); `None` without a
    /// validation set.
    pub val_metric: Option<f64>,
    pub is_best: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AbmilModel,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

fn target_scale(bags: &[BagData], head: Head) -> Result<(f64, f64)> {
    match head {
        Head::Classes(c) => {
            for b in bags {
                match b.target {
                    Label::Class(y) if y < c => {}
                    Label::Class(y) => return Err(Error::Range(format!("class {y} >= {c}"))),
                    Label::Real(_) => return Err(Error::LabelKind("real label on a classification head".into())),
                }
            }
            Ok((0.0, 1.0))
        }
        Head::Regression => {
            let ys = bags
                .iter()
                .map(|b| b.target.real().ok_or_else(|| Error::LabelKind("class label on a regression head".into())))
                .collect::<Result<Vec<f64>>>()?;
            let n = ys.len() as f64;
            let mean = ys.iter().sum::<f64>() / n;
            let std = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
            Ok((mean, if std > 0.0 { std } else { 1.0 }))
        }
    }
}

/// Validation score: MCC or negative MSE (higher is better).
pub fn validation_score(model: &AbmilModel, bags: &[BagData]) -> Result<f64> {
    match model.head {
        Head::Classes(c) => {
            let mut cm = ConfusionMatrix::new(c);
            for b in bags {
                let pred = model.predict(b)?.class().expect("class head");
                cm.add(b.target.class().expect("checked"), pred)?;
            }
            Ok(mcc(&cm))
        }
        Head::Regression => {
            let mut se = 0.0;
            for b in bags {
                let pred = model.predict(b)?.real().expect("regression head");
                se += (pred - b.target.real().expect("checked")).powi(2);
            }
            Ok(-se / bags.len() as f64)
        }
    }
}

fn validation_loss(params: &AbmilParams, bags: &[BagData], head: Head, scale: (f64, f64)) -> Result<f64> {
    let mut total = 0.0;
    for b in bags {
        total += loss_and_dout(&forward(params, &b.x, None)?.out, &b.target, head, scale)?.0;
    }
    Ok(total / bags.len() as f64)
}

fn dropout_mask<R: Rng>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Option<DMatrix<f64>> {
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(DMatrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < p { 0.0 } else { keep }))
}

fn fit(train: &[BagData], val: Option<&[BagData]>, head: Head, cfg: &AbmilConfig, seed: u64, epochs: usize) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Argument("no training bags".into()));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::Argument(format!("dropout must be in [0, 1), got {}", cfg.dropout)));
    }
    let scale = target_scale(train, head)?;
    if let Some(v) = val {
        if v.is_empty() {
            return Err(Error::Argument("empty validation set".into()));
        }
        target_scale(v, head)?;
    }
    let d = train[0].x.nrows();
    let mut init_rng = rng::stream(seed, "abmil-init", &[]);
    let mut params = AbmilParams::init(d, cfg.m, cfg.l, head.outputs(), &mut init_rng);
    let mut opt = AdamW::new(&params, cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps, cfg.weight_decay, cfg.decay_mode);
    // (score, validation loss, epoch, params)
    let mut best: Option<(f64, f64, usize, AbmilParams)> = None;
    let mut log = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    for epoch in 1..=epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(seed, "abmil-order", &[epoch as u64]));
        let mut drop_rng = rng::stream(seed, "abmil-dropout", &[epoch as u64]);
        let mut total = 0.0;
        for &i in &order {
            step += 1;
            let bag = &train[i];
            let mask = dropout_mask(cfg.m, bag.x.ncols(), cfg.dropout, &mut drop_rng);
            let f = forward(&params, &bag.x, mask)?;
            let (loss, dout) = loss_and_dout(&f.out, &bag.target, head, scale)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            total += loss;
            let grad = backward(&params, &bag.x, &f, &dout);
            opt.step(&mut params, &grad);
        }
        let train_loss = total / train.len() as f64;
        if params.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence { epoch, step });
        }
        let Some(val) = val else {
            log.push(EpochLog { epoch, train_loss, val_metric: None, is_best: false });
            continue;
        };
        let model = AbmilModel { params: params.clone(), head, target_scale: scale };
        let score = validation_score(&model, val)?;
        // MCC saturates on small validation sets; equal scores fall back to the loss
        let loss = validation_loss(&params, val, head, scale)?;
        let improved = best.as_ref().is_none_or(|(b, bl, _, _)| score > *b || (score == *b && loss < *bl));
        if improved {
            best = Some((score, loss, epoch, params.clone()));
        }
        log.push(EpochLog { epoch, train_loss, val_metric: Some(score), is_best: improved });
        if epoch - best.as_ref().map_or(0, |b| b.2) >= cfg.patience {
            break;
        }
    }
    let (best_epoch, params) = match best {
        Some((_, _, e, p)) => (e, p),
        None => (epochs, params),
    };
    Ok(TrainOutcome { model: AbmilModel { params, head, target_scale: scale }, best_epoch, log })
}

/// Trains with early stopping on `val`, returning the best-epoch model.
pub fn train(train: &[BagData], val: &[BagData], head: Head, cfg: &AbmilConfig, seed: u64) -> Result<TrainOutcome> {
    fit(train, Some(val), head, cfg, seed, cfg.max_epochs)
}

/// Trains for exactly `epochs` epochs without validation.
pub fn retrain_full(bags: &[BagData], head: Head, cfg: &AbmilConfig, epochs: usize, seed: u64) -> Result<TrainOutcome> {
    if epochs == 0 {
        return Err(Error::Argument("epoch budget must be at least 1".into()));
    }
    fit(bags, None, head, cfg, seed, epochs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridScore {
    pub config: AbmilConfig,
    /// Mean inner validation score; `None` if the config diverged.
    pub mean_score: Option<f64>,
    pub best_epochs: Vec<usize>,
    pub diverged: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSelection {
    pub best: AbmilConfig,
    pub epoch_budget: usize,
    pub scores: Vec<GridScore>,
    /// Inner folds excluded as degenerate, with the reason.
    pub excluded_folds: Vec<(usize, String)>,
}

fn fold_problem(train: &[&BagData], val: &[&BagData], head: Head) -> Option<String> {
    if train.is_empty() || val.is_empty() {
        return Some("empty train or validation part".into());
    }
    if let Head::Classes(c) = head {
        let mut present = vec![false; c];
        train.iter().for_each(|b| {
            if let Label::Class(y) = b.target {
                if y < c {
                    present[y] = true;
                }
            }
        });
        if let Some(missing) = present.iter().position(|p| !p) {
            return Some(format!("class {missing} absent from inner training bags"));
        }
    }
    None
}

/// Scores every config on every inner fold (`(train, val)` indices into
/// `bags`) and picks the best mean validation score.
pub fn grid_select(
    bags: &[BagData],
    inner: &[(Vec<usize>, Vec<usize>)],
    head: Head,
    grid: &[AbmilConfig],
    seed: u64,
) -> Result<GridSelection> {
    if grid.is_empty() {
        return Err(Error::Argument("empty hyperparameter grid".into()));
    }
    let mut parts = Vec::new();
    let mut excluded_folds = Vec::new();
    for (f, (tr, va)) in inner.iter().enumerate() {
        let pick = |ix: &[usize]| -> Result<Vec<BagData>> {
            ix.iter().map(|&i| bags.get(i).cloned().ok_or_else(|| Error::Range(format!("bag index {i}")))).collect()
        };
        let (tr, va) = (pick(tr)?, pick(va)?);
        match fold_problem(&tr.iter().collect::<Vec<_>>(), &va.iter().collect::<Vec<_>>(), head) {
            Some(reason) => excluded_folds.push((f, reason)),
            None => parts.push((f, tr, va)),
        }
    }
    if parts.is_empty() {
        return Err(Error::DegenerateFold("every inner fold is degenerate".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|c| (0..parts.len()).map(move |p| (c, p))).collect();
    let runs: Vec<Result<(f64, usize)>> = jobs
        .par_iter()
        .map(|&(c, p)| {
            let (f, tr, va) = &parts[p];
            let out = train(tr, va, head, &grid[c], rng::derive_seed(seed, "inner-run", &[*f as u64]))?;
            let score = out.log.iter().find(|e| e.epoch == out.best_epoch).and_then(|e| e.val_metric).unwrap_or(f64::NEG_INFINITY);
            Ok((score, out.best_epoch))
        })
        .collect();
    let mut scores = Vec::with_capacity(grid.len());
    for (c, cfg) in grid.iter().enumerate() {
        let mut sum = 0.0;
        let mut best_epochs = Vec::new();
        let mut diverged = None;
        for p in 0..parts.len() {
            match &runs[c * parts.len() + p] {
                Ok((s, e)) => {
                    sum += s;
                    best_epochs.push(*e);
                }
                Err(e @ Error::Divergence { .. }) => {
                    diverged = Some(e.to_string());
                    break;
                }
                Err(e) => return Err(Error::Argument(format!("inner training failed: {e}"))),
            }
        }
        scores.push(GridScore { config: *cfg, mean_score: diverged.is_none().then(|| sum / parts.len() as f64), best_epochs, diverged });
    }
    let winner = scores
        .iter()
        .filter(|s| s.mean_score.is_some())
        .min_by(|a, b| {
            let (sa, sb) = (a.mean_score.unwrap(), b.mean_score.unwrap());
            sb.total_cmp(&sa).then_with(|| {
                let (ka, kb) = (a.config.tie_key(), b.config.tie_key());
                ka.0.total_cmp(&kb.0).then(ka.1.cmp(&kb.1)).then(ka.2.cmp(&kb.2))
            })
        })
        .ok_or(Error::Divergence { epoch: 0, step: 0 })?;
    let mean_epoch = winner.best_epochs.iter().sum::<usize>() as f64 / winner.best_epochs.len() as f64;
    Ok(GridSelection { best: winner.config, epoch_budget: (mean_epoch.round() as usize).max(1), scores: scores.clone(), excluded_folds })
}

pub const TRAINING_LOG_HEADER: [&str; 4] = ["epoch", "train_loss", "val_metric", "is_best"];

pub fn write_training_log<W: Write>(writer: W, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRAINING_LOG_HEADER)?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.val_metric.map(|v| v.to_string()).unwrap_or_default(),
            e.is_best.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<training log>", e))?;
    Ok(())
}
