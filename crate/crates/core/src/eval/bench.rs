//! Side-by-side comparison of KR, MLKR, KR_PCA and KR_SML on shared splits.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate, grid_search, EvalReport, GridSpec};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::learners::{train, Learner, PipelineOptions, TrainConfig};
use crate::metric::DEFAULT_RANK_TOL;

pub const BENCH_SCHEMA: &str = "krsml-bench/1";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Settings for KR_SML; its kernel is shared by every learner.
    pub sml: TrainConfig,
    /// Settings for MLKR (`mu` unused).
    pub mlkr: TrainConfig,
    pub pipeline: PipelineOptions,
    /// When set, KR_SML's `(alpha, mu)` and MLKR's `alpha` are chosen by
    /// cross-validation on each training split before the final fit.
    pub tuning: Option<GridSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub learner: Learner,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
    /// Step size and regularization weight the final model was trained with.
    pub alpha: Option<f64>,
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub rows: Vec<BenchRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub learner: Learner,
    pub mean_rmse: Option<f64>,
    pub mean_mare: Option<f64>,
    pub mean_accumulated_error: Option<f64>,
    pub mean_rank: Option<f64>,
    pub model_dim: Option<usize>,
    pub failed_splits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: String,
    pub standardized: bool,
    pub k_neighbors: usize,
    pub sigma: f64,
    pub variance_threshold: f64,
    pub rank_rel_tol: f64,
    /// How split results are combined in `summary`.
    pub aggregation: String,
    pub splits: Vec<SplitReport>,
    pub summary: Vec<SummaryRow>,
}

fn run_learner(
    learner: Learner,
    train_set: &Dataset,
    test: &Dataset,
    cfg: &BenchConfig,
) -> Result<(EvalReport, TrainConfig)> {
    let mut chosen = match learner {
        Learner::Mlkr => TrainConfig { mu: 0.0, ..cfg.mlkr },
        _ => cfg.sml,
    };
    if let (Some(grid), Learner::Mlkr | Learner::KrSml) = (&cfg.tuning, learner) {
        let spec = match learner {
            Learner::Mlkr => GridSpec {
                mus: vec![0.0],
                ..grid.clone()
            },
            _ => grid.clone(),
        };
        chosen = grid_search(train_set, &spec, &chosen, learner, &cfg.pipeline)?.best;
    }
    let (model, trace) = train(train_set, learner, &chosen, &cfg.pipeline)?;
    let report = evaluate(&model, test)?.with_trace(trace.as_ref());
    Ok((report, chosen))
}

fn bench_split(train_set: &Dataset, test: &Dataset, cfg: &BenchConfig) -> Result<SplitReport> {
    if train_set.dim() != test.dim() {
        return Err(Error::invalid(format!(
            "train dimension {} differs from test dimension {}",
            train_set.dim(),
            test.dim()
        )));
    }
    let rows = Learner::ALL
        .iter()
        .map(|&learner| match run_learner(learner, train_set, test, cfg) {
            Ok((report, used)) => {
                let trained = matches!(learner, Learner::Mlkr | Learner::KrSml);
                BenchRow {
                    learner,
                    report: Some(report),
                    error: None,
                    alpha: trained.then_some(used.alpha),
                    mu: (learner == Learner::KrSml).then_some(used.mu),
                }
            }
            Err(e) => BenchRow {
                learner,
                report: None,
                error: Some(e.to_string()),
                alpha: None,
                mu: None,
            },
        })
        .collect();
    Ok(SplitReport {
        n_train: train_set.len(),
        n_test: test.len(),
        dim: train_set.dim(),
        rows,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Trains and evaluates all four learners on every `(train, test)` split.
///
/// Each learner sees the same standardized data; a learner that fails on a
/// split is reported in its row without affecting the others. Per-learner
/// summaries average the per-split values.
pub fn bench(splits: &[(Dataset, Dataset)], cfg: &BenchConfig) -> Result<BenchReport> {
    if splits.is_empty() {
        return Err(Error::invalid("bench needs at least one train/test split"));
    }
    let split_reports: Vec<SplitReport> = splits
        .iter()
        .map(|(tr, te)| bench_split(tr, te, cfg))
        .collect::<Result<_>>()?;

    let summary = Learner::ALL
        .iter()
        .enumerate()
        .map(|(idx, &learner)| {
            let ok: Vec<&EvalReport> = split_reports
                .iter()
                .filter_map(|s| s.rows[idx].report.as_ref())
                .collect();
            SummaryRow {
                learner,
                mean_rmse: mean(ok.iter().map(|r| r.rmse)),
                mean_mare: mean(ok.iter().filter_map(|r| r.mare)),
                mean_accumulated_error: mean(ok.iter().map(|r| r.accumulated_error)),
                mean_rank: mean(ok.iter().map(|r| r.metric_rank as f64)),
                model_dim: ok.last().map(|r| r.model_dim),
                failed_splits: split_reports.len() - ok.len(),
            }
        })
        .collect();

    Ok(BenchReport {
        schema: BENCH_SCHEMA.into(),
        standardized: cfg.pipeline.standardize,
        k_neighbors: cfg.sml.kernel.k_neighbors,
        sigma: cfg.sml.kernel.sigma,
        variance_threshold: cfg.pipeline.variance_threshold,
        rank_rel_tol: DEFAULT_RANK_TOL,
        aggregation: "mean of per-split values".into(),
        splits: split_reports,
        summary,
    })
}

pub fn render_bench_json(report: &BenchReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("bench report serializes");
    s.push('\n');
    s
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.6}"))
}

/// Aligned plain-text table of the per-learner summary.
pub fn render_bench_table(report: &BenchReport) -> String {
    let mut out = String::new();
    let dim = report.splits.first().map_or(0, |s| s.dim);
    let _ = writeln!(
        out,
        "{:<8} {:>12} {:>12} {:>14} {:>8} {:>6} {:>8}",
        "learner", "RMSE", "MARE", "L", "rank", "d", "model_d"
    );
    for row in &report.summary {
        let _ = writeln!(
            out,
            "{:<8} {:>12} {:>12} {:>14} {:>8} {:>6} {:>8}",
            row.learner.tag(),
            cell(row.mean_rmse),
            cell(row.mean_mare),
            cell(row.mean_accumulated_error),
            row.mean_rank.map_or_else(|| "-".into(), |r| format!("{r:.2}")),
            dim,
            row.model_dim.map_or_else(|| "-".into(), |d| d.to_string()),
        );
    }
    for (i, split) in report.splits.iter().enumerate() {
        for row in &split.rows {
            if let Some(err) = &row.error {
                let _ = writeln!(out, "split {i}: {} failed: {err}", row.learner.tag());
            }
        }
    }
    let _ = writeln!(
        out,
        "splits: {} ({}); rank threshold {:e} x largest eigenvalue",
        report.splits.len(),
        report.aggregation,
        report.rank_rel_tol
    );
    out
}
