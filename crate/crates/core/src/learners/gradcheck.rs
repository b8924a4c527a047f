//! Central finite differences for checking matrix gradients.

use nalgebra::DMatrix;

use super::TrainConfig;
use crate::dataset::Dataset;
use crate::engine::{loo_neighbor_sets, loo_predictions_frozen, quadratic_loss};
use crate::error::{Error, Result};
use crate::metric::MetricMatrix;

/// Entry-wise central differences `(f(X + h E_ij) - f(X - h E_ij)) / 2h`.
pub fn central_difference<F>(loss_fn: F, point: &DMatrix<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DMatrix<f64>) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("step h must be positive, got {h}")));
    }
    let mut probe = point.clone();
    let mut grad = DMatrix::zeros(point.nrows(), point.ncols());
    for c in 0..point.ncols() {
        for r in 0..point.nrows() {
            let orig = probe[(r, c)];
            probe[(r, c)] = orig + h;
            let plus = loss_fn(&probe)?;
            probe[(r, c)] = orig - h;
            let minus = loss_fn(&probe)?;
            probe[(r, c)] = orig;
            if !(plus.is_finite() && minus.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite loss while probing entry ({r}, {c})"
                )));
            }
            grad[(r, c)] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// Worst entry-wise relative error between `analytic` and the central
/// difference of `loss_fn` at `point`, using the denominator
/// `max(|analytic|, |numeric|, 1e-12)`.
pub fn fd_gradient_check<F>(
    loss_fn: F,
    point: &DMatrix<f64>,
    analytic: &DMatrix<f64>,
    h: f64,
) -> Result<f64>
where
    F: Fn(&DMatrix<f64>) -> Result<f64>,
{
    if analytic.shape() != point.shape() {
        return Err(Error::invalid("analytic gradient shape differs from point"));
    }
    let numeric = central_difference(loss_fn, point, h)?;
    Ok(analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-12))
        .fold(0.0, f64::max))
}

/// `M -> sum_i (y_i - yhat_i(M))^2 + mu Tr(M)` with every example's
/// leave-one-out neighbor set frozen at its value under `at`.
pub fn krsml_frozen_objective<'a>(
    data: &'a Dataset,
    at: &MetricMatrix,
    cfg: &TrainConfig,
) -> Result<impl Fn(&DMatrix<f64>) -> Result<f64> + 'a> {
    let sets = loo_neighbor_sets(data, at, cfg.kernel.k_neighbors)?;
    let (sigma, mu) = (cfg.kernel.sigma, cfg.mu);
    Ok(move |m: &DMatrix<f64>| {
        let preds = loo_predictions_frozen(data, m, sigma, &sets)?;
        Ok(quadratic_loss(data.targets(), &preds)? + mu * m.trace())
    })
}

/// `A -> sum_i (y_i - yhat_i(A^T A))^2` with neighbor sets frozen at `A`.
pub fn mlkr_frozen_objective<'a>(
    data: &'a Dataset,
    at: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<impl Fn(&DMatrix<f64>) -> Result<f64> + 'a> {
    let sets = loo_neighbor_sets(data, &MetricMatrix::from_factor(at)?, cfg.kernel.k_neighbors)?;
    let sigma = cfg.kernel.sigma;
    Ok(move |a: &DMatrix<f64>| {
        let m = a.transpose() * a;
        let preds = loo_predictions_frozen(data, &m, sigma, &sets)?;
        quadratic_loss(data.targets(), &preds)
    })
}
