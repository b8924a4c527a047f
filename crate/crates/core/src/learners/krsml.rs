//! Kernel regression with a sparse (low-rank) learned metric.
//!
//! Minimizes `L(M) = sum_i (y_i - yhat_i)^2 + mu * Tr(M)` over PSD `M` by
//! projected gradient descent starting from `M = I`. The trace is the
//! smallest mixed (2,1)-norm attainable for `M`, so penalizing it drives
//! eigenvalues to zero; projection onto the PSD cone after each step clamps
//! them there.

use nalgebra::DMatrix;

use super::{descend, loo_state, Descent, Learner, LooState, Model, TrainConfig, TrainTrace};
use crate::data::Standardizer;
use crate::dataset::Dataset;
use crate::engine::{loo_predictions, quadratic_loss};
use crate::error::{Error, Result};
use crate::metric::{project_psd, symmetrize, MetricMatrix};

struct TraceRegularized {
    mu: f64,
    sigma: f64,
}

impl TraceRegularized {
    fn gradient_from_state(&self, state: &LooState, data: &Dataset) -> DMatrix<f64> {
        let d = data.dim();
        let data_term = state.data_term(data) / (self.sigma * self.sigma);
        symmetrize(&(data_term + DMatrix::identity(d, d) * self.mu))
    }
}

impl Descent for TraceRegularized {
    fn metric(&self, param: &DMatrix<f64>) -> Result<MetricMatrix> {
        Ok(MetricMatrix::from_entries_unchecked(param.clone()))
    }

    fn embedding(&self, _param: &DMatrix<f64>, metric: &MetricMatrix) -> Result<DMatrix<f64>> {
        metric.factor()
    }

    fn objective(&self, loss: f64, metric: &MetricMatrix) -> f64 {
        loss + self.mu * metric.trace()
    }

    fn gradient(&self, _param: &DMatrix<f64>, state: &LooState, data: &Dataset) -> DMatrix<f64> {
        self.gradient_from_state(state, data)
    }

    fn step(&self, param: &DMatrix<f64>, grad: &DMatrix<f64>, step: f64) -> Result<DMatrix<f64>> {
        Ok(project_psd(&(param - grad * step))?.into_inner())
    }
}

fn check_training_data(data: &Dataset, metric_dim: usize) -> Result<()> {
    if data.len() < 2 {
        return Err(Error::insufficient("training needs at least 2 examples"));
    }
    if data.dim() != metric_dim {
        return Err(Error::invalid(format!(
            "metric dimension {metric_dim} does not match data dimension {}",
            data.dim()
        )));
    }
    Ok(())
}

/// Gradient of the trace-regularized leave-one-out objective at `M`:
///
/// `(1/sigma^2) sum_i (yhat_i - y_i) [sum_j (yhat_i - y_j) K_ij x_ij x_ij^T / sum_j K_ij] + mu I`
///
/// with `j` over the leave-one-out neighbors of `i` under `M`. At the default
/// bandwidth `sigma = 1/sqrt(2)` the leading factor is 2.
pub fn krsml_gradient(data: &Dataset, metric: &MetricMatrix, cfg: &TrainConfig) -> Result<DMatrix<f64>> {
    check_training_data(data, metric.dim())?;
    cfg.validate()?;
    let state = loo_state(data, &metric.factor()?, &cfg.kernel)?;
    let desc = TraceRegularized {
        mu: cfg.mu,
        sigma: cfg.kernel.sigma,
    };
    Ok(desc.gradient_from_state(&state, data))
}

/// `quadratic_loss(loo_predictions(M)) + mu * Tr(M)`, evaluated through the
/// public engine path.
pub fn krsml_objective(data: &Dataset, metric: &MetricMatrix, cfg: &TrainConfig) -> Result<f64> {
    let preds = loo_predictions(data, metric, &cfg.kernel)?;
    Ok(quadratic_loss(data.targets(), &preds)? + cfg.mu * metric.trace())
}

/// Trains the sparse-metric regressor on (standardized) `data`.
///
/// Starting from `M = I`, each iteration recomputes neighbor sets under the
/// current metric, steps along the negative gradient, and projects back onto
/// the PSD cone. A step that raises the objective is retried at half the size
/// up to [`super::MAX_HALVINGS`] times; if none succeeds the run stops.
/// The returned model holds the lowest-objective iterate.
pub fn krsml_train(data: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainTrace)> {
    check_training_data(data, data.dim())?;
    let desc = TraceRegularized {
        mu: cfg.mu,
        sigma: cfg.kernel.sigma,
    };
    let d = data.dim();
    let result = descend(&desc, data, cfg, DMatrix::identity(d, d))?;
    let model = Model::assemble(
        result.best_metric,
        data.clone(),
        cfg.kernel,
        Standardizer::identity(d),
        Learner::KrSml,
        None,
    )?;
    Ok((model, result.trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::KernelConfig;
    use crate::learners::{fd_gradient_check, krsml_frozen_objective};
    use crate::metric::min_eigenvalue;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let targets = (0..n)
            .map(|i| features[i * d] * 2.0 + rng.random_range(-0.3..0.3))
            .collect();
        Dataset::new(features, targets, d).unwrap()
    }

    fn cfg(k: usize, mu: f64) -> TrainConfig {
        TrainConfig {
            mu,
            kernel: KernelConfig::new(k, std::f64::consts::FRAC_1_SQRT_2).unwrap(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn constant_targets_give_regularizer_only() {
        let base = random_dataset(12, 4, 1);
        let data = Dataset::new(base.features().to_vec(), vec![1.7; 12], 4).unwrap();
        let m = MetricMatrix::identity(4);
        let g = krsml_gradient(&data, &m, &cfg(5, 0.0)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let g = krsml_gradient(&data, &m, &cfg(5, 0.3)).unwrap();
        assert!((g - DMatrix::<f64>::identity(4, 4) * 0.3).norm() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = random_dataset(15, 4, 2);
        let c = cfg(6, 0.1);
        let m = project_psd(&(DMatrix::identity(4, 4) + DMatrix::from_element(4, 4, 0.1)))
            .unwrap();
        let analytic = krsml_gradient(&data, &m, &c).unwrap();
        let f = krsml_frozen_objective(&data, &m, &c).unwrap();
        let err = fd_gradient_check(f, m.entries(), &analytic, 1e-5).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn non_default_bandwidth_gradient() {
        let data = random_dataset(14, 3, 3);
        let mut c = cfg(5, 0.0);
        c.kernel.sigma = 1.3;
        let m = MetricMatrix::identity(3);
        let analytic = krsml_gradient(&data, &m, &c).unwrap();
        let f = krsml_frozen_objective(&data, &m, &c).unwrap();
        assert!(fd_gradient_check(f, m.entries(), &analytic, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn zero_iterations_is_identity() {
        let data = random_dataset(20, 3, 4);
        let mut c = cfg(5, 0.0);
        c.max_iters = 0;
        let (model, trace) = krsml_train(&data, &c).unwrap();
        assert_eq!(model.metric(), &MetricMatrix::identity(3));
        assert_eq!(trace.records.len(), 1);
    }

    #[test]
    fn iterates_stay_psd_and_objective_descends() {
        let data = random_dataset(40, 4, 5);
        let mut c = cfg(8, 0.5);
        c.alpha = 0.05;
        c.max_iters = 30;
        c.theta = 1e-12;
        let (model, trace) = krsml_train(&data, &c).unwrap();
        assert!(min_eigenvalue(model.metric().entries()).unwrap() >= -1e-10);
        let accepted: Vec<f64> = trace.records.iter().filter(|r| r.accepted).map(|r| r.loss).collect();
        for w in accepted.windows(2) {
            assert!(w[1] <= w[0]);
        }
        for r in &trace.records {
            assert!(r.min_eigenvalue >= -1e-10);
        }
        for w in trace.records.windows(2) {
            assert!(w[1].iteration > w[0].iteration);
        }
        let recomputed = krsml_objective(&data, model.metric(), &c).unwrap();
        assert!((recomputed - trace.best_loss().unwrap()).abs() < 1e-10 * recomputed.max(1.0));
    }

    #[test]
    fn large_mu_shrinks_trace() {
        let data = random_dataset(30, 3, 6);
        let mut c = cfg(6, 1e3);
        c.alpha = 1e-5;
        c.max_iters = 40;
        c.theta = 1e-12;
        let (_, trace) = krsml_train(&data, &c).unwrap();
        let traces: Vec<f64> = trace.records.iter().filter(|r| r.accepted).map(|r| r.trace).collect();
        assert!(traces.len() > 10);
        for w in traces.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(traces.last().unwrap() < &traces[0]);
    }

    #[test]
    fn rejects_tiny_datasets() {
        let data = Dataset::from_rows(&[vec![1.0]], vec![1.0]).unwrap();
        assert!(matches!(
            krsml_train(&data, &cfg(3, 0.0)),
            Err(Error::InsufficientData(_))
        ));
    }
}
