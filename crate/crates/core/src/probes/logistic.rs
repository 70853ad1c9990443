//! Multinomial logistic-regression probe.
//!
//! Objective: mean cross-entropy over the training rows plus
//! `(λ/2)·‖W‖²_F`, with the bias unpenalised and `λ = 100 / (M × C)` by
//! default. Parameters start at zero, so a fit is a deterministic function of
//! its inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lbfgs::{self, LbfgsOptions};
use super::scaled_penalty;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticOptions {
    /// λ = lambda_scale / (M × C) unless `lambda` is set.
    pub lambda_scale: f64,
    pub lambda: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub memory: usize,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self { lambda_scale: 100.0, lambda: None, max_iter: 1000, tol: 1e-6, memory: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbeModel {
    /// `C × M`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub lambda: f64,
    pub iterations_used: usize,
    pub converged: bool,
    /// Objective after each accepted L-BFGS step.
    pub objective_trace: Vec<f64>,
}

impl LinearProbeModel {
    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// Softmax cross-entropy objective and its gradient at packed parameters
/// `theta = [W (row-major C×M), b (C)]`.
pub fn objective(theta: &[f64], x: &DMatrix<f64>, y: &[usize], n_classes: usize, lambda: f64, grad: &mut [f64]) -> f64 {
    let (n, m) = x.shape();
    let c = n_classes;
    let w = DMatrix::from_row_slice(c, m, &theta[..c * m]);
    let b = &theta[c * m..];
    let mut logits = x * w.transpose();
    let mut loss = 0.0;
    for i in 0..n {
        let mut row_max = f64::NEG_INFINITY;
        for k in 0..c {
            logits[(i, k)] += b[k];
            row_max = row_max.max(logits[(i, k)]);
        }
        let mut z = 0.0;
        for k in 0..c {
            let e = (logits[(i, k)] - row_max).exp();
            logits[(i, k)] = e;
            z += e;
        }
        loss -= (logits[(i, y[i])] / z).ln();
        for k in 0..c {
            logits[(i, k)] /= z;
        }
        logits[(i, y[i])] -= 1.0;
    }
    let nf = n as f64;
    // logits now holds P - Y
    let gw = logits.transpose() * x / nf + &w * lambda;
    for k in 0..c {
        for j in 0..m {
            grad[k * m + j] = gw[(k, j)];
        }
        grad[c * m + k] = logits.column(k).sum() / nf;
    }
    loss / nf + 0.5 * lambda * w.norm_squared()
}

pub fn fit_logistic(x: &DMatrix<f64>, y: &[usize], n_classes: usize, opts: &LogisticOptions) -> Result<LinearProbeModel> {
    let (n, m) = x.shape();
    if y.len() != n {
        return Err(Error::Shape(format!("{n} rows but {} labels", y.len())));
    }
    if n_classes < 2 {
        return Err(Error::Argument(format!("need at least 2 classes, got {n_classes}")));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::Range(format!("label {bad} >= {n_classes}")));
    }
    let mut present = vec![false; n_classes];
    y.iter().for_each(|&c| present[c] = true);
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(Error::DegenerateFold(format!("class {missing} absent from training data")));
    }
    let lambda = opts.lambda.unwrap_or_else(|| scaled_penalty(opts.lambda_scale, m, n_classes));
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::Argument(format!("lambda must be positive, got {lambda}")));
    }
    let c = n_classes;
    let lb = LbfgsOptions { memory: opts.memory, max_iter: opts.max_iter, gtol: opts.tol, ..Default::default() };
    let weight_len = c * m;
    let res = lbfgs::minimize(
        |theta, g| objective(theta, x, y, c, lambda, g),
        vec![0.0; c * m + c],
        &lb,
        |theta| theta[..weight_len].iter().fold(1.0f64, |a, v| a.max(v.abs())),
    );
    Ok(LinearProbeModel {
        weights: DMatrix::from_row_slice(c, m, &res.x[..c * m]),
        bias: DVector::from_column_slice(&res.x[c * m..]),
        lambda,
        iterations_used: res.iterations,
        converged: res.converged,
        objective_trace: res.history,
    })
}

/// Predicted classes (ties → lowest index) and the `n × C` probability rows.
pub fn predict_logistic(model: &LinearProbeModel, x: &DMatrix<f64>) -> Result<(Vec<usize>, DMatrix<f64>)> {
    if x.ncols() != model.dim() {
        return Err(Error::Shape(format!("model expects dim {}, got {}", model.dim(), x.ncols())));
    }
    let mut probs = x * model.weights.transpose();
    let mut classes = Vec::with_capacity(x.nrows());
    for i in 0..x.nrows() {
        let mut row = probs.row_mut(i);
        for (k, v) in row.iter_mut().enumerate() {
            *v += model.bias[k];
        }
        let mut best = 0;
        for k in 1..row.len() {
            if row[k] > row[best] {
                best = k;
            }
        }
        classes.push(best);
        let mx = row[best];
        row.iter_mut().for_each(|v| *v = (*v - mx).exp());
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= z);
    }
    Ok((classes, probs))
}
