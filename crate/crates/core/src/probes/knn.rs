//! k-nearest-neighbour majority vote under squared Euclidean distance.
//!
//! Neighbour ranking is by `(distance, training row)`. Vote ties go to the
//! class whose tied neighbours have the smaller summed distance, then to the
//! lower class index.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KnnIndex {
    points: DMatrix<f64>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl KnnIndex {
    pub fn new(points: DMatrix<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if points.nrows() != labels.len() {
            return Err(Error::Shape(format!("{} points but {} labels", points.nrows(), labels.len())));
        }
        if points.nrows() == 0 {
            return Err(Error::Argument("empty kNN index".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= n_classes) {
            return Err(Error::Range(format!("label {bad} >= {n_classes}")));
        }
        Ok(Self { points, labels, n_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The `k` nearest training rows of `query` as `(distance², row)`,
    /// nearest first.
    pub fn neighbours(&self, query: &[f64], k: usize) -> Vec<(f64, usize)> {
        let mut d: Vec<(f64, usize)> = (0..self.points.nrows())
            .map(|r| {
                let dist = self.points.row(r).iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                (dist, r)
            })
            .collect();
        let k = k.min(d.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k, cmp);
            d.truncate(k);
        }
        d.sort_unstable_by(cmp);
        d
    }

    pub fn vote(&self, neighbours: &[(f64, usize)]) -> usize {
        let mut counts = vec![0usize; self.n_classes];
        let mut dist = vec![0.0f64; self.n_classes];
        for &(d, r) in neighbours {
            counts[self.labels[r]] += 1;
            dist[self.labels[r]] += d.sqrt();
        }
        let mut best = 0;
        for c in 1..self.n_classes {
            if counts[c] > counts[best] || (counts[c] == counts[best] && dist[c] < dist[best]) {
                best = c;
            }
        }
        best
    }
}

/// Predicted class for every row of `queries`.
pub fn knn_predict(index: &KnnIndex, queries: &DMatrix<f64>, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Argument("k must be positive".into()));
    }
    if queries.ncols() != index.points.ncols() {
        return Err(Error::Shape(format!("index dim {}, query dim {}", index.points.ncols(), queries.ncols())));
    }
    Ok((0..queries.nrows())
        .map(|i| {
            let q: Vec<f64> = queries.row(i).iter().copied().collect();
            index.vote(&index.neighbours(&q, k))
        })
        .collect())
}
