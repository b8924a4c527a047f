//! Metric learning for kernel regression: gradient descent on a square
//! factor `A`, with the metric recovered as `M = A^T A`.

use nalgebra::DMatrix;

use super::{descend, loo_state, Descent, Learner, LooState, Model, TrainConfig, TrainTrace};
use crate::data::Standardizer;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metric::MetricMatrix;

struct Factored {
    sigma: f64,
}

impl Factored {
    fn gradient_from_state(&self, a: &DMatrix<f64>, state: &LooState, data: &Dataset) -> DMatrix<f64> {
        // dL/dA = 2 A dL/dM since d_ij = |A x_ij|^2.
        a * state.data_term(data) * (2.0 / (self.sigma * self.sigma))
    }
}

impl Descent for Factored {
    fn metric(&self, param: &DMatrix<f64>) -> Result<MetricMatrix> {
        MetricMatrix::from_factor(param)
    }

    fn embedding(&self, param: &DMatrix<f64>, _metric: &MetricMatrix) -> Result<DMatrix<f64>> {
        Ok(param.clone())
    }

    fn objective(&self, loss: f64, _metric: &MetricMatrix) -> f64 {
        loss
    }

    fn gradient(&self, param: &DMatrix<f64>, state: &LooState, data: &Dataset) -> DMatrix<f64> {
        self.gradient_from_state(param, state, data)
    }

    fn step(&self, param: &DMatrix<f64>, grad: &DMatrix<f64>, step: f64) -> Result<DMatrix<f64>> {
        Ok(param - grad * step)
    }
}

/// Gradient of `sum_i (y_i - yhat_i)^2` with respect to the factor `A`.
pub fn mlkr_gradient(data: &Dataset, a: &DMatrix<f64>, cfg: &TrainConfig) -> Result<DMatrix<f64>> {
    if data.len() < 2 {
        return Err(Error::insufficient("training needs at least 2 examples"));
    }
    if a.nrows() != data.dim() || a.ncols() != data.dim() {
        return Err(Error::invalid(format!(
            "factor must be {0}x{0}, got {1}x{2}",
            data.dim(),
            a.nrows(),
            a.ncols()
        )));
    }
    cfg.validate()?;
    let state = loo_state(data, a, &cfg.kernel)?;
    Ok(Factored {
        sigma: cfg.kernel.sigma,
    }
    .gradient_from_state(a, &state, data))
}

/// Trains MLKR from `A = I`. `cfg.mu` is ignored.
pub fn mlkr_train(data: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainTrace)> {
    if data.len() < 2 {
        return Err(Error::insufficient("training needs at least 2 examples"));
    }
    let d = data.dim();
    let desc = Factored {
        sigma: cfg.kernel.sigma,
    };
    let result = descend(&desc, data, cfg, DMatrix::identity(d, d))?;
    let model = Model::assemble(
        result.best_metric,
        data.clone(),
        cfg.kernel,
        Standardizer::identity(d),
        Learner::Mlkr,
        None,
    )?;
    Ok((model, result.trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::KernelConfig;
    use crate::learners::{fd_gradient_check, mlkr_frozen_objective};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let targets = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        Dataset::new(features, targets, d).unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            kernel: KernelConfig::new(5, std::f64::consts::FRAC_1_SQRT_2).unwrap(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn constant_targets_zero_gradient() {
        let base = random_dataset(12, 3, 1);
        let data = Dataset::new(base.features().to_vec(), vec![0.4; 12], 3).unwrap();
        let g = mlkr_gradient(&data, &DMatrix::identity(3, 3), &cfg()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_factor_zero_gradient() {
        let data = random_dataset(12, 3, 2);
        let g = mlkr_gradient(&data, &DMatrix::zeros(3, 3), &cfg()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = random_dataset(12, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = DMatrix::from_fn(3, 3, |i, j| {
            f64::from(u8::from(i == j)) + rng.random_range(-0.2..0.2)
        });
        let c = cfg();
        let analytic = mlkr_gradient(&data, &a, &c).unwrap();
        let f = mlkr_frozen_objective(&data, &a, &c).unwrap();
        let err = fd_gradient_check(f, &a, &analytic, 1e-5).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn zero_iterations_is_identity() {
        let data = random_dataset(10, 2, 4);
        let mut c = cfg();
        c.max_iters = 0;
        let (model, _) = mlkr_train(&data, &c).unwrap();
        assert_eq!(model.metric(), &MetricMatrix::identity(2));
    }

    #[test]
    fn accepted_losses_never_increase() {
        let data = random_dataset(30, 3, 5);
        let mut c = cfg();
        c.alpha = 0.1;
        c.max_iters = 25;
        c.theta = 1e-12;
        let (_, trace) = mlkr_train(&data, &c).unwrap();
        let losses: Vec<f64> = trace.records.iter().filter(|r| r.accepted).map(|r| r.loss).collect();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }
}
