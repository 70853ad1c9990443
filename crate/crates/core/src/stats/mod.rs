//! Bootstrap uncertainty and the post-hoc comparison stack: Friedman gate,
//! pairwise Wilcoxon signed-rank tests, Holm adjustment and compact letter
//! display.

pub mod bootstrap;
pub mod cld;
pub mod hypothesis;

use serde::Serialize;

use crate::error::{Error, Result};

pub use bootstrap::{bootstrap, paired_resample_table, BootstrapDistribution, Metric, ResampleTable, SamplePool};
pub use cld::{cld_is_valid, compact_letter_display};
pub use hypothesis::{friedman, holm_bonferroni, wilcoxon_signed_rank, WilcoxonResult};

/// Linear-interpolation quantile of ascending `sorted` data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("summary of no values".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Self {
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceReport {
    /// Model ids in input order; matrices and `cld` follow this order.
    pub models: Vec<String>,
    pub friedman_stat: f64,
    pub friedman_p: f64,
    pub raw_p: Vec<Vec<f64>>,
    pub adj_p: Vec<Vec<f64>>,
    pub alpha: f64,
    /// False when the Friedman gate was not passed; the matrices are then
    /// all ones and every model is in group `a`.
    pub pairwise_performed: bool,
    pub cld: Vec<String>,
    /// Model ids by median descending (ties: mean descending, then id).
    pub ranking: Vec<String>,
    pub summaries: Vec<Summary>,
    /// Replicates usable in every model.
    pub replicates_used: usize,
}

/// Compares paired bootstrap distributions. All distributions must come
/// from the same resample table.
pub fn compare(dists: &[BootstrapDistribution], alpha: f64) -> Result<SignificanceReport> {
    let k = dists.len();
    if k < 2 {
        return Err(Error::Argument(format!("comparison needs >= 2 models, got {k}")));
    }
    let b = dists[0].replicates();
    for d in dists {
        if d.table_id != dists[0].table_id || d.replicates() != b {
            return Err(Error::Alignment(format!("model {} was not bootstrapped on the shared resample table", d.model_id)));
        }
    }
    let usable: Vec<usize> = (0..b).filter(|&r| dists.iter().all(|d| d.values[r].is_finite())).collect();
    if usable.len() < 2 {
        return Err(Error::Undefined(format!("only {} usable replicates", usable.len())));
    }
    let columns: Vec<Vec<f64>> = dists.iter().map(|d| usable.iter().map(|&r| d.values[r]).collect()).collect();
    let summaries = columns.iter().map(|c| Summary::of(c)).collect::<Result<Vec<_>>>()?;
    let mut ranking: Vec<usize> = (0..k).collect();
    ranking.sort_by(|&a, &b| {
        summaries[b]
            .median
            .total_cmp(&summaries[a].median)
            .then(summaries[b].mean.total_cmp(&summaries[a].mean))
            .then(dists[a].model_id.cmp(&dists[b].model_id))
    });
    let rows: Vec<Vec<f64>> = (0..usable.len()).map(|r| columns.iter().map(|c| c[r]).collect()).collect();
    let (friedman_stat, friedman_p) = friedman(&rows)?;

    let mut raw_p = vec![vec![1.0; k]; k];
    let mut adj_p = vec![vec![1.0; k]; k];
    let pairwise_performed = friedman_p < alpha;
    if pairwise_performed {
        let mut pairs = Vec::new();
        let mut ps = Vec::new();
        for i in 0..k {
            for j in i + 1..k {
                let w = wilcoxon_signed_rank(&columns[i], &columns[j])?;
                pairs.push((i, j));
                ps.push(w.p);
            }
        }
        let adj = holm_bonferroni(&ps);
        for (((i, j), p), a) in pairs.into_iter().zip(ps).zip(adj) {
            raw_p[i][j] = p;
            raw_p[j][i] = p;
            adj_p[i][j] = a;
            adj_p[j][i] = a;
        }
    }
    let cld = compact_letter_display(&adj_p, alpha, &ranking);
    debug_assert!(cld_is_valid(&cld, &adj_p, alpha));
    if !cld_is_valid(&cld, &adj_p, alpha) {
        return Err(Error::Undefined("letter display violates the coverage laws".into()));
    }
    Ok(SignificanceReport {
        models: dists.iter().map(|d| d.model_id.clone()).collect(),
        friedman_stat,
        friedman_p,
        raw_p,
        adj_p,
        alpha,
        pairwise_performed,
        cld,
        ranking: ranking.iter().map(|&i| dists[i].model_id.clone()).collect(),
        summaries,
        replicates_used: usable.len(),
    })
}
