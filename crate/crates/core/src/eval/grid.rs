//! Cross-validated grid search over step size and regularization weight.

use serde::{Deserialize, Serialize};

use super::rmse;
use crate::data::kfold_splits;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::learners::{train, Learner, PipelineOptions, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub alphas: Vec<f64>,
    pub mus: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub alpha: f64,
    pub mu: f64,
    /// Mean of the per-fold held-out RMSEs; `None` when the cell failed.
    pub mean_rmse: Option<f64>,
    pub fold_rmse: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: TrainConfig,
    pub best_index: usize,
    /// Cells in `alphas`-major order.
    pub table: Vec<GridCell>,
}

impl GridSearchResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,mu,mean_rmse,error\n");
        for cell in &self.table {
            let score = cell.mean_rmse.map(|v| v.to_string()).unwrap_or_default();
            let err = cell.error.as_deref().unwrap_or("").replace(',', ";");
            out.push_str(&format!("{},{},{score},{err}\n", cell.alpha, cell.mu));
        }
        out
    }
}

/// Scores every `(alpha, mu)` pair by `folds`-fold cross-validated RMSE of
/// `learner` and returns the best configuration. Ties go to the smaller `mu`,
/// then the smaller `alpha`, then the earlier cell.
///
/// A cell whose training fails is recorded with its error and skipped.
pub fn grid_search(
    data: &Dataset,
    spec: &GridSpec,
    base: &TrainConfig,
    learner: Learner,
    opts: &PipelineOptions,
) -> Result<GridSearchResult> {
    if spec.alphas.is_empty() || spec.mus.is_empty() {
        return Err(Error::invalid("grid must contain at least one alpha and one mu"));
    }
    if spec.folds < 2 {
        return Err(Error::invalid("grid search needs at least 2 folds"));
    }
    let splits = kfold_splits(data, spec.folds, spec.seed)?;

    let mut table = Vec::with_capacity(spec.alphas.len() * spec.mus.len());
    for &alpha in &spec.alphas {
        for &mu in &spec.mus {
            let cfg = TrainConfig { alpha, mu, ..*base };
            let scored: Result<Vec<f64>> = splits
                .iter()
                .map(|(train_part, held_out)| {
                    let (model, _) = train(train_part, learner, &cfg, opts)?;
                    rmse(held_out.targets(), &model.predict(held_out)?)
                })
                .collect();
            table.push(match scored {
                Ok(fold_rmse) => GridCell {
                    alpha,
                    mu,
                    mean_rmse: Some(fold_rmse.iter().sum::<f64>() / fold_rmse.len() as f64),
                    fold_rmse,
                    error: None,
                },
                Err(e) => GridCell {
                    alpha,
                    mu,
                    mean_rmse: None,
                    fold_rmse: Vec::new(),
                    error: Some(e.to_string()),
                },
            });
        }
    }

    let best_index = table
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.mean_rmse.map(|s| (i, s, c)))
        .min_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(a.2.mu.total_cmp(&b.2.mu))
                .then(a.2.alpha.total_cmp(&b.2.alpha))
                .then(a.0.cmp(&b.0))
        })
        .map(|(i, _, _)| i)
        .ok_or_else(|| Error::numeric("every grid cell failed to train"))?;

    let best = TrainConfig {
        alpha: table[best_index].alpha,
        mu: table[best_index].mu,
        ..*base
    };
    Ok(GridSearchResult {
        best,
        best_index,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::KernelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data() -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let targets = rows.iter().map(|r| r[0] * 3.0).collect();
        Dataset::from_rows(&rows, targets).unwrap()
    }

    fn base() -> TrainConfig {
        TrainConfig {
            max_iters: 3,
            kernel: KernelConfig::new(5, 0.7).unwrap(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_cell() {
        let spec = GridSpec {
            alphas: vec![0.01],
            mus: vec![0.2],
            folds: 4,
            seed: 1,
        };
        let r = grid_search(&data(), &spec, &base(), Learner::KrSml, &PipelineOptions::default())
            .unwrap();
        assert_eq!(r.table.len(), 1);
        assert_eq!((r.best.alpha, r.best.mu), (0.01, 0.2));
        assert_eq!(r.table[0].fold_rmse.len(), 4);
    }

    #[test]
    fn duplicate_cells_pick_first() {
        let spec = GridSpec {
            alphas: vec![0.01],
            mus: vec![0.0, 0.0],
            folds: 3,
            seed: 2,
        };
        let r = grid_search(&data(), &spec, &base(), Learner::KrSml, &PipelineOptions::default())
            .unwrap();
        assert_eq!(r.table[0].mean_rmse, r.table[1].mean_rmse);
        assert_eq!(r.best_index, 0);
    }

    #[test]
    fn failed_cells_are_recorded() {
        let spec = GridSpec {
            alphas: vec![-1.0, 0.01],
            mus: vec![0.0],
            folds: 3,
            seed: 3,
        };
        let r = grid_search(&data(), &spec, &base(), Learner::KrSml, &PipelineOptions::default())
            .unwrap();
        assert!(r.table[0].error.is_some());
        assert_eq!(r.best_index, 1);
        assert!(grid_search(&data(), &GridSpec { folds: 1, ..spec }, &base(), Learner::KrSml,
            &PipelineOptions::default()).is_err());
    }
}
