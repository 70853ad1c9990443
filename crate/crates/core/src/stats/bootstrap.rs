//! Paired bootstrap over per-sample prediction pools.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Summary;
use crate::error::{Error, Result};
use crate::metrics::{self, ConfusionMatrix};
use crate::rng;

/// `B × n` table of sample indices drawn with replacement. One table is
/// generated per task and shared by every model so replicates are paired.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResampleTable {
    n: usize,
    b: usize,
    indices: Vec<u32>,
    id: String,
}

impl ResampleTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn replicates(&self) -> usize {
        self.b
    }

    pub fn replicate(&self, r: usize) -> &[u32] {
        &self.indices[r * self.n..(r + 1) * self.n]
    }

    /// Content hash of the table; equal ids mean identical tables.
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.indices.len());
        out.extend_from_slice(&(self.n as u64).to_le_bytes());
        out.extend_from_slice(&(self.b as u64).to_le_bytes());
        for i in &self.indices {
            out.extend_from_slice(&i.to_le_bytes());
        }
        out
    }
}

pub fn paired_resample_table(n: usize, b: usize, seed: u64) -> Result<ResampleTable> {
    if n == 0 || b == 0 {
        return Err(Error::Argument(format!("resample table needs n, B >= 1 (got {n}, {b})")));
    }
    if n > u32::MAX as usize {
        return Err(Error::Argument(format!("too many samples: {n}")));
    }
    let mut s = rng::stream(seed, "bootstrap", &[n as u64, b as u64]);
    let indices: Vec<u32> = (0..n * b).map(|_| s.random_range(0..n as u32)).collect();
    let mut table = ResampleTable { n, b, indices, id: String::new() };
    let digest = Sha256::digest(table.to_bytes());
    table.id = digest.iter().map(|x| format!("{x:02x}")).collect();
    Ok(table)
}

/// Ground truth and the 1–3 seed predictions of every sample, in sample
/// order.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplePool {
    Classes { n_classes: usize, samples: Vec<(usize, Vec<usize>)> },
    Reals { samples: Vec<(f64, Vec<f64>)> },
}

impl SamplePool {
    pub fn len(&self) -> usize {
        match self {
            SamplePool::Classes { samples, .. } => samples.len(),
            SamplePool::Reals { samples } => samples.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        let counts: Vec<usize> = match self {
            SamplePool::Classes { samples, .. } => samples.iter().map(|s| s.1.len()).collect(),
            SamplePool::Reals { samples } => samples.iter().map(|s| s.1.len()).collect(),
        };
        if counts.contains(&0) {
            return Err(Error::Argument("sample without predictions".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mcc,
    Accuracy,
    Pearson,
    R2,
}

impl Metric {
    /// Metric over pooled pairs; `None` when undefined even under the
    /// metric's degenerate convention.
    pub fn evaluate(self, pool: &SamplePool, draw: impl Iterator<Item = usize>) -> Result<Option<f64>> {
        match (self, pool) {
            (Metric::Mcc | Metric::Accuracy, SamplePool::Classes { n_classes, samples }) => {
                let mut cm = ConfusionMatrix::new(*n_classes);
                for i in draw {
                    let (truth, preds) = &samples[i];
                    for &p in preds {
                        cm.add(*truth, p)?;
                    }
                }
                Ok(Some(match self {
                    Metric::Mcc => metrics::mcc(&cm),
                    _ => (0..*n_classes).map(|c| cm.get(c, c)).sum::<u64>() as f64 / cm.total() as f64,
                }))
            }
            (Metric::Pearson | Metric::R2, SamplePool::Reals { samples }) => {
                let mut truth = Vec::new();
                let mut pred = Vec::new();
                for i in draw {
                    let (t, preds) = &samples[i];
                    for &p in preds {
                        truth.push(*t);
                        pred.push(p);
                    }
                }
                if self == Metric::Pearson {
                    if truth.len() < 2 {
                        return Ok(Some(0.0));
                    }
                    return metrics::pearson(&pred, &truth).map(Some);
                }
                match metrics::r2(&pred, &truth) {
                    Ok(v) => Ok(Some(v)),
                    Err(Error::Undefined(_)) => Ok(None),
                    Err(e) => Err(e),
                }
            }
            (m, _) => Err(Error::Argument(format!("metric {m:?} does not apply to this label kind"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDistribution {
    pub model_id: String,
    /// One value per replicate; NaN marks a replicate on which the metric
    /// is undefined.
    pub values: Vec<f64>,
    pub flagged: usize,
    pub table_id: String,
}

impl BootstrapDistribution {
    pub fn replicates(&self) -> usize {
        self.values.len()
    }

    pub fn finite_values(&self) -> Vec<f64> {
        self.values.iter().copied().filter(|v| v.is_finite()).collect()
    }

    pub fn summary(&self) -> Result<Summary> {
        Summary::of(&self.finite_values())
    }
}

/// Replicate `b` draws `n` samples from row `b` of `table` and pools all
/// seed predictions of every drawn sample.
pub fn bootstrap(model_id: &str, pool: &SamplePool, metric: Metric, table: &ResampleTable) -> Result<BootstrapDistribution> {
    pool.validate()?;
    if pool.len() < 2 {
        return Err(Error::Argument(format!("bootstrap needs >= 2 samples, got {}", pool.len())));
    }
    if table.n() != pool.len() {
        return Err(Error::Alignment(format!("resample table has n = {}, pool has {} samples", table.n(), pool.len())));
    }
    let values: Vec<f64> = (0..table.replicates())
        .into_par_iter()
        .map(|r| {
            let draw = table.replicate(r).iter().map(|&i| i as usize);
            metric.evaluate(pool, draw).map(|v| v.unwrap_or(f64::NAN))
        })
        .collect::<Result<_>>()?;
    let flagged = values.iter().filter(|v| v.is_nan()).count();
    Ok(BootstrapDistribution { model_id: model_id.to_string(), values, flagged, table_id: table.id().to_string() })
}
