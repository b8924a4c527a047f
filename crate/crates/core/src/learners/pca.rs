use nalgebra::DMatrix;

use super::{project_row, Learner, Model, TrainConfig};
use crate::data::Standardizer;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metric::{symmetric_eigen, MetricMatrix};

pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.95;

// Absorbs rounding in the cumulative variance ratio (e.g. at threshold 1.0).
const RATIO_SLACK: f64 = 1e-12;

/// Leading principal directions of the feature covariance.
///
/// Returns a `d x p` matrix with orthonormal columns, where `p` is the
/// smallest count whose cumulative explained variance reaches
/// `variance_threshold`.
pub fn pca_fit(data: &Dataset, variance_threshold: f64) -> Result<DMatrix<f64>> {
    if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "variance threshold must be in (0, 1], got {variance_threshold}"
        )));
    }
    let n = data.len();
    if n < 2 {
        return Err(Error::insufficient("PCA needs at least 2 examples"));
    }
    let x = data.feature_matrix();
    let means = x.row_mean();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    let cov = centered.transpose() * &centered / n as f64;
    let eig = symmetric_eigen(&cov)?;

    let variances: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = variances.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateData(
            "features have zero variance; no principal directions".into(),
        ));
    }
    let mut cumulative = 0.0;
    let mut p = variances.len();
    for (k, v) in variances.iter().enumerate() {
        cumulative += v;
        if cumulative / total >= variance_threshold - RATIO_SLACK {
            p = k + 1;
            break;
        }
    }
    Ok(eig.eigenvectors.columns(0, p).into_owned())
}

/// Kernel regression on the leading principal components, Euclidean metric
/// in the projected space.
pub fn krpca_train(data: &Dataset, cfg: &TrainConfig, variance_threshold: f64) -> Result<Model> {
    let basis = pca_fit(data, variance_threshold)?;
    let p = basis.ncols();
    let projected = data.map_rows(p, |row, out| out.copy_from_slice(&project_row(&basis, row)))?;
    Model::assemble(
        MetricMatrix::identity(p),
        projected,
        cfg.kernel,
        Standardizer::identity(data.dim()),
        Learner::KrPca,
        Some(basis),
    )
}
