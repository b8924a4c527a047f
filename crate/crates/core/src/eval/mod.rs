//! Error metrics, evaluation reports, model files, hyperparameter search and
//! the four-learner benchmark.

mod bench;
mod grid;
mod model_file;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::engine::quadratic_loss;
use crate::error::{Error, Result};
use crate::learners::{Learner, Model, TrainTrace};

pub use bench::{
    bench, render_bench_json, render_bench_table, BenchConfig, BenchReport, BenchRow, SplitReport,
    SummaryRow, BENCH_SCHEMA,
};
pub use grid::{grid_search, GridCell, GridSearchResult, GridSpec};
pub use model_file::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION};

/// Targets with `|y| <= DEFAULT_ZERO_TOL` are left out of MARE.
pub const DEFAULT_ZERO_TOL: f64 = 1e-12;

fn check_pair(targets: &[f64], predictions: &[f64]) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::invalid("no points to score"));
    }
    if targets.len() != predictions.len() {
        return Err(Error::invalid(format!(
            "{} targets but {} predictions",
            targets.len(),
            predictions.len()
        )));
    }
    Ok(())
}

/// Root mean squared error.
pub fn rmse(targets: &[f64], predictions: &[f64]) -> Result<f64> {
    check_pair(targets, predictions)?;
    Ok((quadratic_loss(targets, predictions)? / targets.len() as f64).sqrt())
}

/// Mean absolute relative error over points with `|y| > zero_tol`.
///
/// Returns the error and the number of points skipped for having a
/// (near-)zero target.
pub fn mare(targets: &[f64], predictions: &[f64], zero_tol: f64) -> Result<(f64, usize)> {
    check_pair(targets, predictions)?;
    if !(zero_tol >= 0.0) {
        return Err(Error::invalid("zero tolerance must be nonnegative"));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for (y, p) in targets.iter().zip(predictions) {
        if y.abs() > zero_tol {
            sum += (y - p).abs() / y.abs();
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::DegenerateData(
            "every target is zero; relative error undefined".into(),
        ));
    }
    Ok((sum / used as f64, targets.len() - used))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub final_loss: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
}

impl From<&TrainTrace> for TraceSummary {
    fn from(t: &TrainTrace) -> Self {
        Self {
            final_loss: t.final_loss().unwrap_or(f64::NAN),
            iterations: t.iterations(),
            accepted_steps: t.accepted_steps(),
        }
    }
}

/// Test-set scores of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub learner: Learner,
    pub rmse: f64,
    /// `None` when every test target is zero.
    pub mare: Option<f64>,
    /// `sum (y - yhat)^2` over the test set.
    pub accumulated_error: f64,
    pub metric_rank: usize,
    pub original_dim: usize,
    /// Dimension the kernel regression runs in (PCA dimension for KR_PCA).
    pub model_dim: usize,
    pub n_test: usize,
    pub skipped_mare_points: usize,
    pub train_trace_summary: Option<TraceSummary>,
    #[serde(skip)]
    pub targets: Vec<f64>,
    #[serde(skip)]
    pub predictions: Vec<f64>,
}

impl EvalReport {
    pub fn with_trace(mut self, trace: Option<&TrainTrace>) -> Self {
        self.train_trace_summary = trace.map(TraceSummary::from);
        self
    }

    /// Per-point predictions as CSV with columns `index,y,y_hat`.
    pub fn prediction_dump(&self) -> String {
        let mut out = String::from("index,y,y_hat\n");
        for (i, (y, p)) in self.targets.iter().zip(&self.predictions).enumerate() {
            let _ = writeln!(out, "{i},{y},{p}");
        }
        out
    }
}

/// Predicts every test example with `model` (no exclusion) and scores it.
pub fn evaluate(model: &Model, test: &Dataset) -> Result<EvalReport> {
    if test.dim() != model.input_dim() {
        return Err(Error::invalid(format!(
            "test data has dimension {}, model expects {}",
            test.dim(),
            model.input_dim()
        )));
    }
    let predictions = model.predict(test)?;
    let targets = test.targets().to_vec();
    let (mare_value, skipped) = match mare(&targets, &predictions, DEFAULT_ZERO_TOL) {
        Ok((m, s)) => (Some(m), s),
        Err(Error::DegenerateData(_)) => (None, targets.len()),
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        learner: model.learner(),
        rmse: rmse(&targets, &predictions)?,
        mare: mare_value,
        accumulated_error: quadratic_loss(&targets, &predictions)?,
        metric_rank: model.rank(),
        original_dim: model.input_dim(),
        model_dim: model.metric().dim(),
        n_test: targets.len(),
        skipped_mare_points: skipped,
        train_trace_summary: None,
        targets,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::KernelConfig;
    use crate::learners::kr_model;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!((rmse(&[2.0, 4.0], &[1.0, 2.0]).unwrap() - 2.5f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mare_examples() {
        assert_eq!(mare(&[1.0, -3.0], &[1.0, -3.0], 1e-12).unwrap(), (0.0, 0));
        assert_eq!(mare(&[2.0, 4.0], &[1.0, 2.0], 1e-12).unwrap(), (0.5, 0));
        assert_eq!(mare(&[0.0, 2.0], &[1.0, 1.0], 1e-12).unwrap(), (0.5, 1));
        assert!(matches!(
            mare(&[0.0, 0.0], &[1.0, 1.0], 1e-12),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn self_evaluation_with_one_neighbor_is_exact() {
        let ds = Dataset::from_rows(
            &[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]],
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        let model = kr_model(&ds, &KernelConfig::new(1, 0.5).unwrap()).unwrap();
        let report = evaluate(&model, &ds).unwrap();
        assert_eq!(report.rmse, 0.0);
        assert_eq!(report.accumulated_error, 0.0);
        assert_eq!(report.mare, Some(0.0));
        assert_eq!(report.metric_rank, 2);
        assert!(evaluate(&model, &ds.subset(&[0]).unwrap().map_rows(1, |_, o| o[0] = 0.0).unwrap())
            .is_err());
    }

    #[test]
    fn dump_lists_every_point() {
        let ds = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![3.0]], vec![1.0, 2.0, 0.0]).unwrap();
        let model = kr_model(&ds, &KernelConfig::new(2, 0.5).unwrap()).unwrap();
        let report = evaluate(&model, &ds).unwrap();
        assert_eq!(report.skipped_mare_points, 1);
        let dump = report.prediction_dump();
        assert_eq!(dump.lines().count(), 4);
        assert!(dump.starts_with("index,y,y_hat\n0,1,"));
    }
}
