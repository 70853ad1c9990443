//! Benchmark fixtures, built from the seeded streams of the core crate so
//! every run measures the same inputs.

use embench_core::abmil::{AbmilParams, Head};
use embench_core::probes::KnnIndex;
use embench_core::rng;
use embench_core::stats::SamplePool;
use embench_core::synth::{self, TileTaskSpec};
use nalgebra::DMatrix;
use rand::Rng;

/// Two-class tiles as a design matrix and labels.
pub fn tile_design(n: usize, dim: usize) -> (DMatrix<f64>, Vec<usize>) {
    let spec = TileTaskSpec { n_tiles: n, n_groups: (n / 20).max(2), dim, margin: 1.0, shuffle_labels: false };
    let (table, manifest) = synth::tile_task(&spec, 0).expect("valid fixture");
    let x = DMatrix::from_fn(n, dim, |r, c| table.row(r)[c] as f64);
    let y = manifest.entries.iter().map(|e| e.label.class().expect("class label")).collect();
    (x, y)
}

pub fn knn_fixture(n_train: usize, n_query: usize, dim: usize) -> (KnnIndex, DMatrix<f64>) {
    let (x, y) = tile_design(n_train + n_query, dim);
    let train = x.rows(0, n_train).into_owned();
    let queries = x.rows(n_train, n_query).into_owned();
    let index = KnnIndex::new(train, y[..n_train].to_vec(), 2).expect("valid index");
    (index, queries)
}

/// Binary predictions from one seed with roughly 80% accuracy.
pub fn class_pool(n: usize) -> SamplePool {
    let mut r = rng::stream(0, "bench-pool", &[]);
    let samples = (0..n)
        .map(|_| {
            let truth = r.random_range(0..2usize);
            let pred = if r.random_bool(0.8) { truth } else { 1 - truth };
            (truth, vec![pred])
        })
        .collect();
    SamplePool::Classes { n_classes: 2, samples }
}

pub fn paired_scores(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng::stream(0, "bench-scores", &[]);
    (0..n).map(|_| (r.random_range(0.5..0.9), r.random_range(0.5..0.9))).unzip()
}

pub fn histogram() -> [u64; 256] {
    let mut r = rng::stream(0, "bench-hist", &[]);
    std::array::from_fn(|_| r.random_range(0..5000))
}

/// Parameters and one bag of `k` instances for an ABMIL step.
pub fn abmil_fixture(d: usize, m: usize, l: usize, k: usize) -> (AbmilParams, DMatrix<f64>, Head) {
    let mut r = rng::stream(0, "bench-abmil", &[]);
    let head = Head::Classes(2);
    let params = AbmilParams::init(d, m, l, head.outputs(), &mut r);
    let x = DMatrix::from_fn(d, k, |_, _| r.random_range(-1.0..1.0));
    (params, x, head)
}
