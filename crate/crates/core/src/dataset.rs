use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Regression examples: an `n x d` feature matrix (row-major) and `n` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    targets: Vec<f64>,
    dim: usize,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset from row-major features.
    pub fn new(features: Vec<f64>, targets: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        if targets.is_empty() {
            return Err(Error::insufficient("dataset has no examples"));
        }
        if features.len() != targets.len() * dim {
            return Err(Error::invalid(format!(
                "{} feature values cannot form {} rows of dimension {dim}",
                features.len(),
                targets.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        if let Some(pos) = targets.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite target at row {pos}")));
        }
        Ok(Self {
            features,
            targets,
            dim,
            feature_names: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], targets: Vec<f64>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.len() != targets.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} targets",
                rows.len(),
                targets.len()
            )));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("feature rows have inconsistent lengths"));
        }
        Self::new(rows.concat(), targets, dim)
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.dim {
            return Err(Error::invalid(format!(
                "{} feature names for dimension {}",
                names.len(),
                self.dim
            )));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Features as an `n x d` matrix.
    pub fn feature_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.features)
    }

    /// Examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::insufficient("subset is empty"));
        }
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!(
                    "index {i} out of range for {} examples",
                    self.len()
                )));
            }
            features.extend_from_slice(self.row(i));
            targets.push(self.targets[i]);
        }
        Ok(Self {
            features,
            targets,
            dim: self.dim,
            feature_names: self.feature_names.clone(),
        })
    }

    /// Same targets, new features of a possibly different dimension.
    pub(crate) fn with_features(&self, features: Vec<f64>, dim: usize) -> Result<Self> {
        Self::new(features, self.targets.clone(), dim)
    }

    /// Maps every row through `f`, producing rows of dimension `dim`.
    pub(crate) fn map_rows(&self, dim: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Result<Self> {
        let mut out = vec![0.0; self.len() * dim];
        for (src, dst) in self.rows().zip(out.chunks_exact_mut(dim)) {
            f(src, dst);
        }
        self.with_features(out, dim)
    }
}
