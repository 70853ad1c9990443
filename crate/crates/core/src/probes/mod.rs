//! Probes fitted on frozen embeddings: multinomial logistic regression
//! (L-BFGS), k-nearest-neighbour voting and closed-form SVD ridge.

pub mod knn;
pub mod lbfgs;
pub mod logistic;
pub mod ridge;

use nalgebra::DMatrix;

use crate::dataspec::EmbeddingTable;
use crate::error::{Error, Result};

pub use knn::{knn_predict, KnnIndex};
pub use logistic::{fit_logistic, predict_logistic, LinearProbeModel, LogisticOptions};
pub use ridge::{fit_ridge, predict_ridge, RidgeModel, RidgeOptions};

/// Gathers `rows` of `table` into an `n × dim` f64 design matrix.
pub fn design_matrix(table: &EmbeddingTable, rows: &[usize]) -> Result<DMatrix<f64>> {
    if let Some(&r) = rows.iter().find(|&&r| r >= table.n_rows()) {
        return Err(Error::Range(format!("row {r} >= {}", table.n_rows())));
    }
    Ok(DMatrix::from_fn(rows.len(), table.dim(), |i, j| table.row(rows[i])[j] as f64))
}

/// Regularisation strength `scale / (dim × outputs)`.
pub fn scaled_penalty(scale: f64, dim: usize, outputs: usize) -> f64 {
    scale / (dim as f64 * outputs as f64)
}
