//! Mahalanobis metric representation, matrix norms, PSD-cone projection and
//! rank diagnostics.
//!
//! A [`MetricMatrix`] is a symmetric positive semidefinite `d x d` matrix `M`
//! defining the squared distance `(xi - xj)^T M (xi - xj)`. Low-rank metrics
//! are allowed, so the induced distance is in general a pseudometric: distinct
//! points can sit at distance zero.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Default relative eigenvalue threshold used by [`numerical_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Slack allowed below zero for the smallest eigenvalue of a PSD matrix.
pub const PSD_SLACK: f64 = 1e-10;

/// Maximum asymmetry accepted when wrapping a matrix as a metric.
pub const SYMMETRY_TOL: f64 = 1e-12;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITERS: usize = 10_000;

/// A symmetric positive semidefinite metric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMatrix {
    entries: DMatrix<f64>,
}

impl MetricMatrix {
    /// The Euclidean metric on `dim` features.
    pub fn identity(dim: usize) -> Self {
        Self {
            entries: DMatrix::identity(dim, dim),
        }
    }

    /// Wraps an existing matrix, checking that it is square, finite,
    /// symmetric and positive semidefinite.
    pub fn from_psd(entries: DMatrix<f64>) -> Result<Self> {
        check_square(&entries)?;
        check_finite(&entries)?;
        if entries.nrows() == 0 {
            return Err(Error::invalid("metric dimension must be positive"));
        }
        let asym = max_asymmetry(&entries);
        if asym > SYMMETRY_TOL {
            return Err(Error::invalid(format!(
                "metric is not symmetric (max |M_ij - M_ji| = {asym:e})"
            )));
        }
        let entries = symmetrize(&entries);
        let min_eig = symmetric_eigen(&entries)?.min_eigenvalue();
        if min_eig < -PSD_SLACK {
            return Err(Error::invalid(format!(
                "metric is not positive semidefinite (smallest eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self { entries })
    }

    /// Builds `M = A^T A`, which is PSD by construction.
    pub fn from_factor(a: &DMatrix<f64>) -> Result<Self> {
        check_square(a)?;
        check_finite(a)?;
        Ok(Self {
            entries: symmetrize(&(a.transpose() * a)),
        })
    }

    pub(crate) fn from_entries_unchecked(entries: DMatrix<f64>) -> Self {
        Self { entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn mahalanobis_sq(&self, xi: &[f64], xj: &[f64]) -> Result<f64> {
        mahalanobis_sq(self, xi, xj)
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn mixed_21_norm(&self) -> f64 {
        row_norm_sum(&self.entries)
    }

    pub fn rank(&self, rel_tol: f64) -> usize {
        numerical_rank(self, rel_tol)
    }

    /// Multiplies every entry by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid(format!("scale must be positive, got {c}")));
        }
        Ok(Self {
            entries: &self.entries * c,
        })
    }

    /// Returns `L` (r x d, r = number of positive eigenvalues) with `M = L^T L`.
    ///
    /// Distances under `M` equal squared Euclidean distances after `x -> L x`.
    pub fn factor(&self) -> Result<DMatrix<f64>> {
        let eig = symmetric_eigen(&self.entries)?;
        let d = self.dim();
        let kept: Vec<usize> = (0..d).filter(|&k| eig.eigenvalues[k] > 0.0).collect();
        let mut l = DMatrix::zeros(kept.len(), d);
        for (row, &k) in kept.iter().enumerate() {
            let s = eig.eigenvalues[k].sqrt();
            for c in 0..d {
                l[(row, c)] = s * eig.eigenvectors[(c, k)];
            }
        }
        Ok(l)
    }
}

impl AsRef<DMatrix<f64>> for MetricMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

/// Eigendecomposition of a symmetric matrix: `M = V diag(lambda) V^T`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Eigenvalues in descending order.
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, aligned with `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `V diag(lambda) V^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = &self.eigenvectors * DMatrix::from_diagonal(&self.eigenvalues);
        &scaled * self.eigenvectors.transpose()
    }
}

/// Eigendecomposition of `(M + M^T)/2`. This is the one backend behind PSD
/// projection, rank diagnostics and PCA.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<EigenDecomposition> {
    check_square(m)?;
    check_finite(m)?;
    let sym = symmetrize(m);
    let eig = SymmetricEigen::try_new(sym, EIGEN_EPS, EIGEN_MAX_ITERS)
        .ok_or_else(|| Error::numeric("symmetric eigendecomposition did not converge"))?;

    let d = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let eigenvalues = DVector::from_iterator(d, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut eigenvectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Squared Mahalanobis distance `(xi - xj)^T M (xi - xj)`.
pub fn mahalanobis_sq(m: &MetricMatrix, xi: &[f64], xj: &[f64]) -> Result<f64> {
    let d = m.dim();
    if xi.len() != d || xj.len() != d {
        return Err(Error::invalid(format!(
            "vector lengths ({}, {}) do not match metric dimension {d}",
            xi.len(),
            xj.len()
        )));
    }
    let diff: Vec<f64> = xi.iter().zip(xj).map(|(a, b)| a - b).collect();
    // Rounding can leave a tiny negative value for PSD M.
    Ok(quad_form(&m.entries, &diff).max(0.0))
}

/// `v^T M v` for an arbitrary square `M` (no symmetry assumed).
pub(crate) fn quad_form(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let d = v.len();
    let mut acc = 0.0;
    for c in 0..d {
        let col = m.column(c);
        let mut dot = 0.0;
        for r in 0..d {
            dot += v[r] * col[r];
        }
        acc += dot * v[c];
    }
    acc
}

/// Mixed (2,1)-norm: the sum of the Euclidean norms of the rows.
pub fn mixed_21_norm(m: &DMatrix<f64>) -> Result<f64> {
    check_square(m)?;
    Ok(row_norm_sum(m))
}

fn row_norm_sum(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|row| row.norm()).sum()
}

pub fn trace(m: &DMatrix<f64>) -> Result<f64> {
    check_square(m)?;
    Ok(m.trace())
}

/// Nearest PSD matrix in Frobenius norm: eigenvalues clamped at zero.
///
/// Already-PSD inputs are returned as-is (after symmetrization), which makes
/// the projection exactly idempotent.
pub fn project_psd(m: &DMatrix<f64>) -> Result<MetricMatrix> {
    let eig = symmetric_eigen(m)?;
    if eig.min_eigenvalue() >= 0.0 {
        return Ok(MetricMatrix::from_entries_unchecked(symmetrize(m)));
    }
    let clamped = EigenDecomposition {
        eigenvalues: eig.eigenvalues.map(|l| l.max(0.0)),
        eigenvectors: eig.eigenvectors,
    };
    Ok(MetricMatrix::from_entries_unchecked(symmetrize(
        &clamped.reconstruct(),
    )))
}

/// Number of eigenvalues strictly above `rel_tol * lambda_max`; zero when
/// `lambda_max <= 0`.
pub fn numerical_rank(m: &MetricMatrix, rel_tol: f64) -> usize {
    let Ok(eig) = symmetric_eigen(&m.entries) else {
        return 0;
    };
    let top = eig.max_eigenvalue();
    if !(top > 0.0) {
        return 0;
    }
    let threshold = rel_tol * top;
    eig.eigenvalues.iter().filter(|&&l| l > threshold).count()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    Ok(symmetric_eigen(m)?.min_eigenvalue())
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in (i + 1)..d {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::invalid(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric("matrix contains non-finite entries"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn random_psd(d: usize, seed: u64, rank: usize) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(rank, d, |_, _| rng.random_range(-1.0..1.0));
        symmetrize(&(a.transpose() * a))
    }

    #[test]
    fn mahalanobis_examples() {
        let id = MetricMatrix::identity(2);
        assert_eq!(id.mahalanobis_sq(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);

        let m = MetricMatrix::from_psd(random_psd(3, 4, 3)).unwrap();
        let x = [0.3, -1.2, 2.0];
        assert_eq!(m.mahalanobis_sq(&x, &x).unwrap(), 0.0);

        let diag = MetricMatrix::from_psd(dmatrix![2.0, 0.0; 0.0, 3.0]).unwrap();
        let v = diag.mahalanobis_sq(&[1.5, 2.0], &[0.5, 1.0]).unwrap();
        assert!((v - 5.0).abs() < 1e-15);
    }

    #[test]
    fn mahalanobis_dimension_mismatch() {
        let id = MetricMatrix::identity(2);
        assert!(matches!(
            id.mahalanobis_sq(&[1.0], &[0.0, 0.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn norm_and_trace_examples() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_eq!(mixed_21_norm(&i3).unwrap(), 3.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert_eq!(mixed_21_norm(&d).unwrap(), 6.0);
        let ones = dmatrix![1.0, 1.0; 1.0, 1.0];
        assert!((mixed_21_norm(&ones).unwrap() - 2.0 * 2f64.sqrt()).abs() < 1e-15);

        assert_eq!(trace(&DMatrix::<f64>::identity(5, 5)).unwrap(), 5.0);
        assert_eq!(trace(&d).unwrap(), 6.0);
        assert_eq!(trace(&dmatrix![2.0, 9.0; 9.0, 3.0]).unwrap(), 5.0);
        assert!(trace(&DMatrix::<f64>::zeros(2, 3)).is_err());
    }

    #[test]
    fn projection_examples() {
        let p = project_psd(&dmatrix![1.0, 0.0; 0.0, -2.0]).unwrap();
        assert!((p.entries() - dmatrix![1.0, 0.0; 0.0, 0.0]).norm() < 1e-12);

        let p = project_psd(&dmatrix![0.0, 1.0; 1.0, 0.0]).unwrap();
        assert!((p.entries() - dmatrix![0.5, 0.5; 0.5, 0.5]).norm() < 1e-12);

        let psd = random_psd(5, 9, 3);
        let p = project_psd(&psd).unwrap();
        assert!((p.entries() - &psd).norm() < 1e-10);
    }

    #[test]
    fn projection_rejects_non_finite() {
        let bad = dmatrix![f64::NAN, 0.0; 0.0, 1.0];
        assert!(matches!(project_psd(&bad), Err(Error::Numeric(_))));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numerical_rank(&MetricMatrix::identity(8), DEFAULT_RANK_TOL), 8);
        let zero = MetricMatrix::from_psd(DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(numerical_rank(&zero, DEFAULT_RANK_TOL), 0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-12, 3.0]));
        let m = MetricMatrix::from_psd(d).unwrap();
        assert_eq!(numerical_rank(&m, 1e-8), 2);
    }

    #[test]
    fn from_psd_validates() {
        assert!(MetricMatrix::from_psd(dmatrix![1.0, 0.5; 0.0, 1.0]).is_err());
        assert!(MetricMatrix::from_psd(dmatrix![1.0, 0.0; 0.0, -1.0]).is_err());
        assert!(MetricMatrix::from_psd(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn eigen_reconstructs_and_is_orthonormal() {
        for seed in 0..20 {
            let d = 2 + (seed as usize % 9);
            let mut m = random_psd(d, seed, d);
            m[(0, 0)] -= 1.5;
            let eig = symmetric_eigen(&m).unwrap();
            let scale = m.norm().max(1.0);
            assert!((eig.reconstruct() - &m).norm() <= 1e-8 * scale);
            let vtv = eig.eigenvectors.transpose() * &eig.eigenvectors;
            assert!((vtv - DMatrix::<f64>::identity(d, d)).norm() <= 1e-8);
            for k in 1..d {
                assert!(eig.eigenvalues[k - 1] >= eig.eigenvalues[k]);
            }
        }
    }

    #[test]
    fn factor_reproduces_distances() {
        let m = MetricMatrix::from_psd(random_psd(4, 2, 2)).unwrap();
        let l = m.factor().unwrap();
        assert_eq!(l.nrows(), 2);
        let x = [0.1, 2.0, -0.7, 1.1];
        let y = [1.0, -0.4, 0.2, 0.0];
        let diff = DVector::from_iterator(4, x.iter().zip(&y).map(|(a, b)| a - b));
        let via_factor = (&l * diff).norm_squared();
        assert!((via_factor - m.mahalanobis_sq(&x, &y).unwrap()).abs() < 1e-12);
    }

    fn matrix_strategy() -> impl Strategy<Value = DMatrix<f64>> {
        (2usize..7).prop_flat_map(|d| {
            proptest::collection::vec(-3.0f64..3.0, d * d)
                .prop_map(move |v| symmetrize(&DMatrix::from_vec(d, d, v)))
        })
    }

    proptest! {
        #[test]
        fn projection_is_psd_and_idempotent(m in matrix_strategy()) {
            let p = project_psd(&m).unwrap();
            prop_assert!(min_eigenvalue(p.entries()).unwrap() >= -PSD_SLACK);
            let pp = project_psd(p.entries()).unwrap();
            prop_assert!((pp.entries() - p.entries()).norm() <= 1e-10 * p.entries().norm().max(1.0));
        }

        #[test]
        fn projection_is_nearest_among_sampled_psd(m in matrix_strategy(), seed in 0u64..1000) {
            let p = project_psd(&m).unwrap();
            let best = (p.entries() - &m).norm();
            let d = m.nrows();
            for s in 0..8 {
                let n = random_psd(d, seed * 31 + s, 1 + (s as usize % d));
                prop_assert!(best <= (n - &m).norm() + 1e-10);
            }
        }

        #[test]
        fn mahalanobis_symmetric_nonnegative(m in matrix_strategy(),
                                             x in proptest::collection::vec(-5.0f64..5.0, 6),
                                             y in proptest::collection::vec(-5.0f64..5.0, 6)) {
            let p = project_psd(&m).unwrap();
            let d = p.dim();
            let a = p.mahalanobis_sq(&x[..d], &y[..d]).unwrap();
            let b = p.mahalanobis_sq(&y[..d], &x[..d]).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn factor_form_matches_quadratic_form(a in proptest::collection::vec(-2.0f64..2.0, 9),
                                              x in proptest::collection::vec(-3.0f64..3.0, 3),
                                              y in proptest::collection::vec(-3.0f64..3.0, 3)) {
            let a = DMatrix::from_vec(3, 3, a);
            let m = MetricMatrix::from_factor(&a).unwrap();
            let diff = DVector::from_iterator(3, x.iter().zip(&y).map(|(p, q)| p - q));
            let direct = (&a * diff).norm_squared();
            prop_assert!((m.mahalanobis_sq(&x, &y).unwrap() - direct).abs() <= 1e-10);
        }
    }
}
