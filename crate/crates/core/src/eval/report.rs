//! Run reports: one row per fold and method, plus per-method summaries.
//!
//! Reports hold only quantities that are a function of the configuration and
//! data, so rerunning a configuration reproduces them byte for byte. Wall-clock
//! timings go to the log instead.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::ExperimentSpec;
use super::metrics::mean_std;
use crate::error::Result;
use crate::privacy::{BetaLabel, Hypothesis};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub method: String,
    pub fold: usize,
    /// Mean of the sampled privacy ratios.
    pub mean_ratio: f64,
    /// Fraction of training ratings marked private.
    pub private_fraction: f64,
    pub rmse: Option<f64>,
    pub ndcg_at_10: Option<f64>,
    pub n_test: usize,
    pub aux_bytes: Option<u64>,
    pub server_digest: Option<String>,
    pub error: Option<String>,
}

impl FoldRow {
    pub(crate) fn failed(method: String, fold: usize, n_test: usize, error: String) -> Self {
        FoldRow {
            method,
            fold,
            mean_ratio: f64::NAN,
            private_fraction: f64::NAN,
            rmse: None,
            ndcg_at_10: None,
            n_test,
            aux_bytes: None,
            server_digest: None,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub folds: usize,
    pub failed_folds: usize,
    pub mean_ratio: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub ndcg_mean: f64,
    pub ndcg_std: f64,
    pub aux_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub seed: u64,
    pub n_folds: usize,
    pub hypothesis: Hypothesis,
    pub alpha: f64,
    pub beta: f64,
    pub beta_label: BetaLabel,
    pub rows: Vec<FoldRow>,
    pub summaries: Vec<MethodSummary>,
}

impl RunReport {
    pub fn new(spec: &ExperimentSpec, rows: Vec<FoldRow>) -> Self {
        let mut labels: Vec<String> = Vec::new();
        for m in &spec.methods {
            let l = m.label();
            if !labels.contains(&l) {
                labels.push(l);
            }
        }
        let summaries = labels.iter().map(|l| summarize(l, &rows)).collect();
        RunReport {
            schema_version: SCHEMA_VERSION,
            seed: spec.seed,
            n_folds: spec.n_folds,
            hypothesis: spec.hypothesis,
            alpha: spec.beta.alpha,
            beta: spec.beta.beta,
            beta_label: spec.beta.label,
            rows,
            summaries,
        }
    }

    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// Per-fold RMSE of `method`, in fold order; `None` entries for failed folds.
    pub fn fold_rmse(&self, method: &str) -> Vec<Option<f64>> {
        let mut rows: Vec<&FoldRow> = self.rows.iter().filter(|r| r.method == method).collect();
        rows.sort_by_key(|r| r.fold);
        rows.iter().map(|r| r.rmse).collect()
    }

    pub fn errors(&self) -> Vec<String> {
        self.rows
            .iter()
            .filter_map(|r| r.error.as_ref().map(|e| format!("fold {} {}: {e}", r.fold, r.method)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One CSV row per fold and method.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "fold",
            "hypothesis",
            "alpha",
            "beta",
            "mean_ratio",
            "private_fraction",
            "rmse",
            "ndcg_at_10",
            "n_test",
            "aux_bytes",
            "error",
        ])?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                r.fold.to_string(),
                format!("{:?}", self.hypothesis),
                self.alpha.to_string(),
                self.beta.to_string(),
                r.mean_ratio.to_string(),
                r.private_fraction.to_string(),
                opt(r.rmse),
                opt(r.ndcg_at_10),
                r.n_test.to_string(),
                r.aux_bytes.map(|b| b.to_string()).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.csv")), self.to_csv()?)?;
        fs::write(dir.join(format!("{stem}.json")), self.to_json()?)?;
        Ok(())
    }
}

fn summarize(method: &str, rows: &[FoldRow]) -> MethodSummary {
    let mine: Vec<&FoldRow> = rows.iter().filter(|r| r.method == method).collect();
    let ok: Vec<&FoldRow> = mine.iter().copied().filter(|r| r.error.is_none()).collect();
    let rmses: Vec<f64> = ok.iter().filter_map(|r| r.rmse).collect();
    let ndcgs: Vec<f64> = ok.iter().filter_map(|r| r.ndcg_at_10).collect();
    let ratios: Vec<f64> = ok.iter().map(|r| r.mean_ratio).collect();
    let (rmse_mean, rmse_std) = mean_std(&rmses);
    let (ndcg_mean, ndcg_std) = mean_std(&ndcgs);
    MethodSummary {
        method: method.to_owned(),
        folds: mine.len(),
        failed_folds: mine.len() - ok.len(),
        mean_ratio: mean_std(&ratios).0,
        rmse_mean,
        rmse_std,
        ndcg_mean,
        ndcg_std,
        aux_bytes: ok.iter().find_map(|r| r.aux_bytes),
    }
}
