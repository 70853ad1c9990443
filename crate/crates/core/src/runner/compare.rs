//! Paired bootstrap of a ledger and the cross-model comparison tables.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ledger::PredictionLedger;
use crate::error::{Error, Result};
use crate::stats::{self, BootstrapDistribution, Metric, SignificanceReport, Summary};

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapRun {
    /// Samples predicted by every model, in pool order.
    pub samples: Vec<String>,
    pub table_id: String,
    pub dists: Vec<BootstrapDistribution>,
}

/// One shared resample table over the samples every model predicted, and
/// one distribution per model in ledger order.
pub fn bootstrap_ledger(ledger: &PredictionLedger, metric: Metric, replicates: usize, seed: u64) -> Result<BootstrapRun> {
    let models = ledger.models();
    if models.is_empty() {
        return Err(Error::Argument("empty prediction ledger".into()));
    }
    let samples = ledger.shared_samples();
    let table = stats::paired_resample_table(samples.len(), replicates, seed)?;
    let pools = models.iter().map(|m| ledger.pool(m, &samples)).collect::<Result<Vec<_>>>()?;
    let dists =
        models.par_iter().zip(pools.par_iter()).map(|(m, pool)| stats::bootstrap(m, pool, metric, &table)).collect::<Result<Vec<_>>>()?;
    Ok(BootstrapRun { samples, table_id: table.id().to_string(), dists })
}

/// Bootstrap followed by the Friedman-gated pairwise comparison.
pub fn compare_models(
    ledger: &PredictionLedger,
    metric: Metric,
    replicates: usize,
    seed: u64,
    alpha: f64,
) -> Result<(BootstrapRun, SignificanceReport)> {
    let n = ledger.models().len();
    if n < 2 {
        return Err(Error::Argument(format!("comparison needs >= 2 models, got {n}")));
    }
    let run = bootstrap_ledger(ledger, metric, replicates, seed)?;
    let report = stats::compare(&run.dists, alpha)?;
    Ok((run, report))
}

pub const BOOTSTRAP_HEADER: [&str; 3] = ["model", "replicate", "value"];

/// All replicates; a flagged replicate has an empty value.
pub fn write_bootstrap_csv<W: Write>(writer: W, dists: &[BootstrapDistribution]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(BOOTSTRAP_HEADER)?;
    for d in dists {
        for (r, v) in d.values.iter().enumerate() {
            let value = if v.is_finite() { v.to_string() } else { String::new() };
            w.write_record([d.model_id.as_str(), &r.to_string(), &value])?;
        }
    }
    w.flush().map_err(|e| Error::io("<bootstrap>", e))?;
    Ok(())
}

#[derive(Deserialize)]
struct BootstrapRecord {
    model: String,
    replicate: usize,
    value: Option<f64>,
}

/// Reads `bootstrap.csv` back into per-model value vectors (NaN for
/// flagged replicates), models in order of appearance.
pub fn read_bootstrap_csv<R: Read>(reader: R) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.iter().collect::<Vec<_>>() != BOOTSTRAP_HEADER {
        return Err(Error::Format(format!("bootstrap header must be `{}`", BOOTSTRAP_HEADER.join(","))));
    }
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for rec in rdr.deserialize::<BootstrapRecord>() {
        let rec = rec?;
        if out.last().is_none_or(|(m, _)| *m != rec.model) {
            if out.iter().any(|(m, _)| *m == rec.model) {
                return Err(Error::Format(format!("rows of model `{}` are not contiguous", rec.model)));
            }
            out.push((rec.model.clone(), Vec::new()));
        }
        let values = &mut out.last_mut().expect("pushed").1;
        if rec.replicate != values.len() {
            return Err(Error::Format(format!("model `{}` replicate {} out of order", rec.model, rec.replicate)));
        }
        values.push(rec.value.unwrap_or(f64::NAN));
    }
    Ok(out)
}

/// `pvalues.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValues {
    pub models: Vec<String>,
    pub ranking: Vec<String>,
    pub alpha: f64,
    pub friedman_stat: f64,
    pub friedman_p: f64,
    pub pairwise_performed: bool,
    pub raw_p: Vec<Vec<f64>>,
    pub adj_p: Vec<Vec<f64>>,
    pub replicates_used: usize,
    pub table_id: String,
}

impl PValues {
    pub fn new(report: &SignificanceReport, table_id: &str) -> Self {
        Self {
            models: report.models.clone(),
            ranking: report.ranking.clone(),
            alpha: report.alpha,
            friedman_stat: report.friedman_stat,
            friedman_p: report.friedman_p,
            pairwise_performed: report.pairwise_performed,
            raw_p: report.raw_p.clone(),
            adj_p: report.adj_p.clone(),
            replicates_used: report.replicates_used,
            table_id: table_id.to_string(),
        }
    }
}

pub const CLD_HEADER: [&str; 8] = ["cld", "model", "min", "q1", "median", "mean", "q3", "max"];

/// One row per model, sorted by median descending.
#[derive(Debug, Clone, PartialEq)]
pub struct CldRow {
    pub cld: String,
    pub model: String,
    pub summary: Summary,
}

pub fn cld_rows(report: &SignificanceReport) -> Vec<CldRow> {
    report
        .ranking
        .iter()
        .map(|id| {
            let i = report.models.iter().position(|m| m == id).expect("ranked model");
            CldRow { cld: report.cld[i].clone(), model: id.clone(), summary: report.summaries[i] }
        })
        .collect()
}

/// Single-model table: letter `a` and the summary of the finite replicates.
pub fn single_cld_row(dist: &BootstrapDistribution) -> Result<CldRow> {
    Ok(CldRow { cld: "a".into(), model: dist.model_id.clone(), summary: dist.summary()? })
}

pub fn write_cld_csv<W: Write>(writer: W, rows: &[CldRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CLD_HEADER)?;
    for r in rows {
        let s = &r.summary;
        w.write_record([
            r.cld.clone(),
            r.model.clone(),
            s.min.to_string(),
            s.q1.to_string(),
            s.median.to_string(),
            s.mean.to_string(),
            s.q3.to_string(),
            s.max.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<cld>", e))?;
    Ok(())
}

/// `pvalue_heatmap.json`: adjusted p-values with rows and columns in
/// ranking order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub models: Vec<String>,
    pub alpha: f64,
    pub adj_p: Vec<Vec<f64>>,
    pub significant: Vec<Vec<bool>>,
}

pub fn heatmap(p: &PValues) -> Result<Heatmap> {
    let order = p
        .ranking
        .iter()
        .map(|id| p.models.iter().position(|m| m == id).ok_or_else(|| Error::Format(format!("ranked model `{id}` missing from models"))))
        .collect::<Result<Vec<_>>>()?;
    let adj_p: Vec<Vec<f64>> = order.iter().map(|&i| order.iter().map(|&j| p.adj_p[i][j]).collect()).collect();
    let significant = (0..order.len()).map(|i| (0..order.len()).map(|j| i != j && adj_p[i][j] < p.alpha).collect()).collect();
    Ok(Heatmap { models: p.ranking.clone(), alpha: p.alpha, adj_p, significant })
}
