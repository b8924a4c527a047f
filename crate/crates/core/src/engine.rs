//! Nadaraya-Watson kernel regression under a Mahalanobis metric.
//!
//! A prediction for a query is the Gaussian-kernel weighted average of the
//! targets of its `k` nearest training examples. Neighbor search is exhaustive;
//! ties in distance go to the lower training index.
//!
//! Weights are evaluated as `exp(-(d_j - d_min) / (2 sigma^2))`. The kernel's
//! `1/(sigma sqrt(2 pi))` prefactor and the shift by the smallest neighbor
//! distance both cancel in the weighted average, and the shift keeps at least
//! one weight equal to 1 however far the query is from the data.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metric::{quad_form, MetricMatrix};

pub const DEFAULT_K_NEIGHBORS: usize = 30;

/// Bandwidth at which the kernel exponent is exactly `-d(xi, xj)`.
pub const DEFAULT_SIGMA: f64 = FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub k_neighbors: usize,
    pub sigma: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            k_neighbors: DEFAULT_K_NEIGHBORS,
            sigma: DEFAULT_SIGMA,
        }
    }
}

impl KernelConfig {
    pub fn new(k_neighbors: usize, sigma: f64) -> Result<Self> {
        let cfg = Self { k_neighbors, sigma };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(Error::invalid("k_neighbors must be at least 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Gaussian kernel `exp(-dist_sq / (2 sigma^2)) / (sigma sqrt(2 pi))`.
pub fn gaussian_kernel(dist_sq: f64, sigma: f64) -> f64 {
    (-dist_sq / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt())
}

/// A selected neighbor and its squared distance to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.dist_sq
        .total_cmp(&b.dist_sq)
        .then_with(|| a.index.cmp(&b.index))
}

/// The `k` closest of `n` candidates under `dist`, sorted by distance then index.
pub(crate) fn select_neighbors(
    n: usize,
    k: usize,
    exclude: Option<usize>,
    mut dist: impl FnMut(usize) -> f64,
) -> Result<Vec<Neighbor>> {
    let mut all: Vec<Neighbor> = (0..n)
        .filter(|&j| Some(j) != exclude)
        .map(|j| Neighbor {
            index: j,
            dist_sq: dist(j),
        })
        .collect();
    if all.is_empty() {
        return Err(Error::insufficient("no training examples left to act as neighbors"));
    }
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, neighbor_order);
        all.truncate(k);
    }
    all.sort_unstable_by(neighbor_order);
    Ok(all)
}

/// Normalized kernel weights for a neighbor list (shift-stabilized).
pub(crate) fn normalized_weights(neighbors: &[Neighbor], sigma: f64) -> Vec<f64> {
    let d_min = neighbors
        .iter()
        .map(|nb| nb.dist_sq)
        .fold(f64::INFINITY, f64::min);
    let scale = 1.0 / (2.0 * sigma * sigma);
    let mut w: Vec<f64> = neighbors
        .iter()
        .map(|nb| (-(nb.dist_sq - d_min) * scale).exp())
        .collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 && total.is_finite() {
        w.iter_mut().for_each(|v| *v /= total);
    } else {
        // Unreachable after the shift; fall back to the plain neighbor mean.
        let uniform = 1.0 / neighbors.len() as f64;
        w.iter_mut().for_each(|v| *v = uniform);
    }
    w
}

pub(crate) fn weighted_estimate(neighbors: &[Neighbor], weights: &[f64], targets: &[f64]) -> f64 {
    // Offsets from the nearest target keep constant targets exact.
    let base = targets[neighbors[0].index];
    base + neighbors
        .iter()
        .zip(weights)
        .map(|(nb, w)| w * (targets[nb.index] - base))
        .sum::<f64>()
}

fn check_query(query: &[f64], data: &Dataset, metric: &MetricMatrix) -> Result<()> {
    if metric.dim() != data.dim() {
        return Err(Error::invalid(format!(
            "metric dimension {} does not match data dimension {}",
            metric.dim(),
            data.dim()
        )));
    }
    if query.len() != data.dim() {
        return Err(Error::invalid(format!(
            "query has length {}, expected {}",
            query.len(),
            data.dim()
        )));
    }
    Ok(())
}

fn neighbors_under(
    query: &[f64],
    data: &Dataset,
    m: &DMatrix<f64>,
    k: usize,
    exclude: Option<usize>,
) -> Result<Vec<Neighbor>> {
    let mut diff = vec![0.0; data.dim()];
    select_neighbors(data.len(), k, exclude, |j| {
        for ((d, a), b) in diff.iter_mut().zip(query).zip(data.row(j)) {
            *d = a - b;
        }
        quad_form(m, &diff).max(0.0)
    })
}

/// Indices of the `k` nearest training examples to `query`, nearest first.
pub fn knn_indices(
    query: &[f64],
    data: &Dataset,
    metric: &MetricMatrix,
    k: usize,
    exclude: Option<usize>,
) -> Result<Vec<usize>> {
    check_query(query, data, metric)?;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    Ok(neighbors_under(query, data, metric.entries(), k, exclude)?
        .into_iter()
        .map(|nb| nb.index)
        .collect())
}

/// Kernel-weighted average of the targets of the query's neighbors.
pub fn predict_one(
    query: &[f64],
    data: &Dataset,
    metric: &MetricMatrix,
    cfg: &KernelConfig,
    exclude: Option<usize>,
) -> Result<f64> {
    check_query(query, data, metric)?;
    cfg.validate()?;
    let neighbors = neighbors_under(query, data, metric.entries(), cfg.k_neighbors, exclude)?;
    let w = normalized_weights(&neighbors, cfg.sigma);
    Ok(weighted_estimate(&neighbors, &w, data.targets()))
}

/// Predictions for every row of `queries` (no exclusion).
pub fn predict_batch<'a>(
    queries: impl IntoIterator<Item = &'a [f64]>,
    data: &Dataset,
    metric: &MetricMatrix,
    cfg: &KernelConfig,
) -> Result<Vec<f64>> {
    queries
        .into_iter()
        .map(|q| predict_one(q, data, metric, cfg, None))
        .collect()
}

/// Leave-one-out predictions: element `i` is predicted with example `i`
/// removed from its own neighbor set.
pub fn loo_predictions(data: &Dataset, metric: &MetricMatrix, cfg: &KernelConfig) -> Result<Vec<f64>> {
    if data.len() < 2 {
        return Err(Error::insufficient(
            "leave-one-out prediction needs at least 2 examples",
        ));
    }
    (0..data.len())
        .map(|i| predict_one(data.row(i), data, metric, cfg, Some(i)))
        .collect()
}

/// Leave-one-out neighbor lists of every training example under `metric`.
pub fn loo_neighbor_sets(data: &Dataset, metric: &MetricMatrix, k: usize) -> Result<Vec<Vec<usize>>> {
    if data.len() < 2 {
        return Err(Error::insufficient(
            "leave-one-out neighbor sets need at least 2 examples",
        ));
    }
    (0..data.len())
        .map(|i| knn_indices(data.row(i), data, metric, k, Some(i)))
        .collect()
}

/// Leave-one-out predictions with the neighbor sets held fixed and distances
/// evaluated under an arbitrary square matrix `m`.
///
/// The loss is piecewise smooth across neighbor-set changes; freezing the sets
/// gives the smooth piece that finite-difference checks probe.
pub fn loo_predictions_frozen(
    data: &Dataset,
    m: &DMatrix<f64>,
    sigma: f64,
    neighbor_sets: &[Vec<usize>],
) -> Result<Vec<f64>> {
    if neighbor_sets.len() != data.len() {
        return Err(Error::invalid(format!(
            "{} neighbor sets for {} examples",
            neighbor_sets.len(),
            data.len()
        )));
    }
    if m.nrows() != data.dim() || m.ncols() != data.dim() {
        return Err(Error::invalid("matrix does not match data dimension"));
    }
    let mut diff = vec![0.0; data.dim()];
    neighbor_sets
        .iter()
        .enumerate()
        .map(|(i, set)| {
            if set.is_empty() {
                return Err(Error::insufficient(format!("empty neighbor set for example {i}")));
            }
            let neighbors: Vec<Neighbor> = set
                .iter()
                .map(|&j| {
                    for ((d, a), b) in diff.iter_mut().zip(data.row(i)).zip(data.row(j)) {
                        *d = a - b;
                    }
                    Neighbor {
                        index: j,
                        dist_sq: quad_form(m, &diff),
                    }
                })
                .collect();
            let w = normalized_weights(&neighbors, sigma);
            Ok(weighted_estimate(&neighbors, &w, data.targets()))
        })
        .collect()
}

/// Accumulated squared error `sum (y_i - yhat_i)^2`.
pub fn quadratic_loss(targets: &[f64], predictions: &[f64]) -> Result<f64> {
    if targets.len() != predictions.len() {
        return Err(Error::invalid(format!(
            "{} targets but {} predictions",
            targets.len(),
            predictions.len()
        )));
    }
    Ok(targets
        .iter()
        .zip(predictions)
        .map(|(y, p)| (y - p) * (y - p))
        .sum())
}
