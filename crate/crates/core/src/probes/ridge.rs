//! Closed-form ridge regression through the thin SVD of the centred design.
//!
//! With `X_c = U Σ Vᵀ`, `W = V diag(σ / (σ² + α)) Uᵀ Y_c` and
//! `b = ȳ − x̄ᵀ W`. Singular values below `1e-12 · σ_max` are treated as zero.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use super::scaled_penalty;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RidgeOptions {
    /// α = alpha_scale / (M × T) unless `alpha` is set.
    pub alpha_scale: f64,
    pub alpha: Option<f64>,
    pub rank_cutoff: f64,
}

impl Default for RidgeOptions {
    fn default() -> Self {
        Self { alpha_scale: 100.0, alpha: None, rank_cutoff: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    /// `M × T`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub alpha: f64,
}

pub fn fit_ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, opts: &RidgeOptions) -> Result<RidgeModel> {
    let (n, m) = x.shape();
    if y.nrows() != n {
        return Err(Error::Shape(format!("{n} rows but {} targets", y.nrows())));
    }
    if n == 0 || y.ncols() == 0 {
        return Err(Error::Argument("empty ridge problem".into()));
    }
    let t = y.ncols();
    let alpha = opts.alpha.unwrap_or_else(|| scaled_penalty(opts.alpha_scale, m, t));
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::Argument(format!("alpha must be positive, got {alpha}")));
    }
    let x_mean: RowDVector<f64> = x.row_mean();
    let y_mean: RowDVector<f64> = y.row_mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let mut yc = y.clone();
    for mut row in yc.row_iter_mut() {
        row -= &y_mean;
    }
    let svd = xc.svd(true, true);
    let u = svd.u.as_ref().expect("U requested");
    let v_t = svd.v_t.as_ref().expect("Vᵀ requested");
    let sigma_max = svd.singular_values.max();
    let shrink = svd.singular_values.map(|s| if s <= opts.rank_cutoff * sigma_max { 0.0 } else { s / (s * s + alpha) });
    let mut uty = u.transpose() * &yc;
    for (mut row, d) in uty.row_iter_mut().zip(shrink.iter()) {
        row *= *d;
    }
    let weights = v_t.transpose() * uty;
    let bias = (y_mean - x_mean * &weights).transpose();
    Ok(RidgeModel { weights, bias, alpha })
}

/// `n × T` predictions.
pub fn predict_ridge(model: &RidgeModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != model.weights.nrows() {
        return Err(Error::Shape(format!("model expects dim {}, got {}", model.weights.nrows(), x.ncols())));
    }
    let mut out = x * &model.weights;
    for mut row in out.row_iter_mut() {
        row += model.bias.transpose();
    }
    Ok(out)
}
