//! Copy detection: does each augmented query retrieve its own original
//! under cosine similarity?

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::dataspec::EmbeddingTable;
use crate::error::{Error, Result};
use crate::metrics::topk_accuracy;
use crate::rng;

/// Family label of the permuted-query chance row.
pub const SHUFFLED: &str = "shuffled";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CopyDetectRow {
    pub model: String,
    pub family: String,
    pub k: usize,
    pub accuracy: f64,
}

/// Rows scaled to unit length; zero rows stay zero.
fn unit_rows(t: &EmbeddingTable) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(t.n_rows(), t.dim(), |i, j| t.row(i)[j] as f64);
    for mut row in m.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    m
}

/// Row-major `queries × gallery` cosine similarities.
pub fn cosine_similarity(queries: &EmbeddingTable, gallery: &EmbeddingTable) -> Result<Vec<f64>> {
    if queries.dim() != gallery.dim() {
        return Err(Error::Shape(format!("query dim {} vs gallery dim {}", queries.dim(), gallery.dim())));
    }
    let s = unit_rows(queries) * unit_rows(gallery).transpose();
    Ok(s.transpose().as_slice().to_vec())
}

/// Top-k accuracy of each augmented table (query `i` must retrieve original
/// `i`), plus an optional chance row whose queries are the originals in a
/// seeded random order.
pub fn run_copy_detection(
    model: &str,
    original: &EmbeddingTable,
    augmented: &[(String, EmbeddingTable)],
    ks: &[usize],
    shuffled_seed: Option<u64>,
) -> Result<Vec<CopyDetectRow>> {
    let n = original.n_rows();
    let mut rows = Vec::new();
    let mut score = |family: &str, sim: &[f64], truth: &[usize]| -> Result<()> {
        for &k in ks {
            rows.push(CopyDetectRow {
                model: model.to_string(),
                family: family.to_string(),
                k,
                accuracy: topk_accuracy(sim, n, truth, k.min(n))?,
            });
        }
        Ok(())
    };
    let identity: Vec<usize> = (0..n).collect();
    for (family, table) in augmented {
        if table.n_rows() != n {
            return Err(Error::Alignment(format!("family `{family}` has {} rows, originals have {n}", table.n_rows())));
        }
        score(family, &cosine_similarity(table, original)?, &identity)?;
    }
    if let Some(seed) = shuffled_seed {
        let mut perm = identity.clone();
        perm.shuffle(&mut rng::stream(seed, "shuffled-queries", &[n as u64]));
        let queries = original.select(&perm)?;
        score(SHUFFLED, &cosine_similarity(&queries, original)?, &identity)?;
    }
    Ok(rows)
}

pub const COPYDETECT_HEADER: [&str; 4] = ["model", "family", "k", "accuracy"];

pub fn write_copydetect_csv<W: Write>(writer: W, rows: &[CopyDetectRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COPYDETECT_HEADER)?;
    for r in rows {
        w.write_record([r.model.clone(), r.family.clone(), r.k.to_string(), r.accuracy.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<copydetect>", e))?;
    Ok(())
}
