//! Trainable kernel regressors.
//!
//! * [`krsml_train`]: trace-regularized metric learning by projected gradient
//!   descent on `M` (the sparse-metric learner).
//! * [`mlkr_train`]: full-rank metric learning by gradient descent on the
//!   factor `A` with `M = A^T A`.
//! * [`krpca_train`]: PCA projection followed by Euclidean kernel regression.
//! * [`kr_model`]: plain Euclidean kernel regression (no training).

mod gradcheck;
mod krsml;
mod mlkr;
mod pca;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{fit_standardizer, Standardizer};
use crate::dataset::Dataset;
use crate::engine::{self, select_neighbors, KernelConfig, Neighbor};
use crate::error::{Error, Result};
use crate::metric::{numerical_rank, MetricMatrix, DEFAULT_RANK_TOL};

pub use gradcheck::{
    central_difference, fd_gradient_check, krsml_frozen_objective, mlkr_frozen_objective,
};
pub use krsml::{krsml_gradient, krsml_objective, krsml_train};
pub use mlkr::{mlkr_gradient, mlkr_train};
pub use pca::{krpca_train, pca_fit, DEFAULT_VARIANCE_THRESHOLD};

/// Maximum number of step halvings tried before a step is rejected.
pub const MAX_HALVINGS: usize = 20;

/// Hyperparameters shared by the gradient-based learners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Initial step size of every iteration.
    pub alpha: f64,
    /// Weight of the trace regularizer (KR_SML only).
    pub mu: f64,
    /// Stop once the objective changes by at most this much in one step.
    pub theta: f64,
    /// Iteration cap; zero returns the identity initialization.
    pub max_iters: usize,
    pub kernel: KernelConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            mu: 0.0,
            theta: 1e-4,
            max_iters: 200,
            kernel: KernelConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid(format!("mu must be nonnegative, got {}", self.mu)));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::invalid(format!("theta must be positive, got {}", self.theta)));
        }
        Ok(())
    }
}

/// One optimizer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Objective after this iteration (unchanged when the step was rejected).
    pub loss: f64,
    pub trace: f64,
    pub rank: usize,
    pub min_eigenvalue: f64,
    /// Step size actually taken; zero for the initial record and rejections.
    pub step: f64,
    pub accepted: bool,
}

/// Per-iteration history of a training run. Record 0 is the initialization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<IterationRecord>,
}

impl TrainTrace {
    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iteration)
    }

    pub fn accepted_steps(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.accepted && r.iteration > 0)
            .count()
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.records.iter().map(|r| r.loss).reduce(f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Learner {
    #[serde(rename = "KR")]
    Kr,
    #[serde(rename = "MLKR")]
    Mlkr,
    #[serde(rename = "KR_PCA")]
    KrPca,
    #[serde(rename = "KR_SML")]
    KrSml,
}

impl Learner {
    pub const ALL: [Learner; 4] = [Learner::Kr, Learner::Mlkr, Learner::KrPca, Learner::KrSml];

    pub fn tag(&self) -> &'static str {
        match self {
            Learner::Kr => "KR",
            Learner::Mlkr => "MLKR",
            Learner::KrPca => "KR_PCA",
            Learner::KrSml => "KR_SML",
        }
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Learner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "KR" => Ok(Learner::Kr),
            "MLKR" => Ok(Learner::Mlkr),
            "KR_PCA" | "KRPCA" => Ok(Learner::KrPca),
            "KR_SML" | "KRSML" => Ok(Learner::KrSml),
            _ => Err(Error::invalid(format!("unknown learner '{s}'"))),
        }
    }
}

/// A trained regressor. Queries are standardized, projected onto the PCA
/// basis when present, then predicted by kernel regression over the stored
/// training examples under `metric`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub(crate) metric: MetricMatrix,
    pub(crate) training_data: Dataset,
    pub(crate) kernel: KernelConfig,
    pub(crate) standardizer: Standardizer,
    pub(crate) learner: Learner,
    pub(crate) pca_basis: Option<DMatrix<f64>>,
}

impl Model {
    pub(crate) fn assemble(
        metric: MetricMatrix,
        training_data: Dataset,
        kernel: KernelConfig,
        standardizer: Standardizer,
        learner: Learner,
        pca_basis: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let input_dim = standardizer.dim();
        let model_dim = match &pca_basis {
            Some(b) => {
                if b.nrows() != input_dim {
                    return Err(Error::invalid("PCA basis rows do not match input dimension"));
                }
                b.ncols()
            }
            None => input_dim,
        };
        if metric.dim() != model_dim || training_data.dim() != model_dim {
            return Err(Error::invalid(format!(
                "metric ({}) and training data ({}) must have dimension {model_dim}",
                metric.dim(),
                training_data.dim()
            )));
        }
        kernel.validate()?;
        Ok(Self {
            metric,
            training_data,
            kernel,
            standardizer,
            learner,
            pca_basis,
        })
    }

    pub fn metric(&self) -> &MetricMatrix {
        &self.metric
    }

    /// Training examples in model space (standardized and projected).
    pub fn training_data(&self) -> &Dataset {
        &self.training_data
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn learner(&self) -> Learner {
        self.learner
    }

    pub fn pca_basis(&self) -> Option<&DMatrix<f64>> {
        self.pca_basis.as_ref()
    }

    /// Dimension of raw queries.
    pub fn input_dim(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn rank(&self) -> usize {
        numerical_rank(&self.metric, DEFAULT_RANK_TOL)
    }

    /// Maps a raw query into model space.
    pub fn transform_query(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "query has dimension {}, model expects {}",
                raw.len(),
                self.input_dim()
            )));
        }
        let mut z = vec![0.0; raw.len()];
        self.standardizer.transform_row(raw, &mut z);
        Ok(match &self.pca_basis {
            Some(b) => project_row(b, &z),
            None => z,
        })
    }

    pub fn predict_row(&self, raw: &[f64]) -> Result<f64> {
        let q = self.transform_query(raw)?;
        engine::predict_one(&q, &self.training_data, &self.metric, &self.kernel, None)
    }

    pub fn predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        data.rows().map(|row| self.predict_row(row)).collect()
    }

    pub(crate) fn with_standardizer(mut self, s: Standardizer) -> Result<Self> {
        let expected = match &self.pca_basis {
            Some(b) => b.nrows(),
            None => self.metric.dim(),
        };
        if s.dim() != expected {
            return Err(Error::invalid("standardizer dimension mismatch"));
        }
        self.standardizer = s;
        Ok(self)
    }
}

pub(crate) fn project_row(basis: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..basis.ncols())
        .map(|c| basis.column(c).iter().zip(x).map(|(b, v)| b * v).sum())
        .collect()
}

/// Euclidean kernel regression: `M = I`, nothing learned.
pub fn kr_model(data: &Dataset, kernel: &KernelConfig) -> Result<Model> {
    Model::assemble(
        MetricMatrix::identity(data.dim()),
        data.clone(),
        *kernel,
        Standardizer::identity(data.dim()),
        Learner::Kr,
        None,
    )
}

/// Options for [`train`], which wraps the learners with preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub standardize: bool,
    pub variance_threshold: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            standardize: true,
            variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
        }
    }
}

/// Fits the standardizer on `raw` (unless disabled), trains `learner` on the
/// standardized data and returns a model that accepts raw queries.
pub fn train(
    raw: &Dataset,
    learner: Learner,
    cfg: &TrainConfig,
    opts: &PipelineOptions,
) -> Result<(Model, Option<TrainTrace>)> {
    let standardizer = if opts.standardize {
        fit_standardizer(raw)?
    } else {
        Standardizer::identity(raw.dim())
    };
    let data = standardizer.apply(raw)?;
    let (model, trace) = match learner {
        Learner::Kr => (kr_model(&data, &cfg.kernel)?, None),
        Learner::Mlkr => {
            let (m, t) = mlkr_train(&data, cfg)?;
            (m, Some(t))
        }
        Learner::KrPca => (krpca_train(&data, cfg, opts.variance_threshold)?, None),
        Learner::KrSml => {
            let (m, t) = krsml_train(&data, cfg)?;
            (m, Some(t))
        }
    };
    Ok((model.with_standardizer(standardizer)?, trace))
}

/// Leave-one-out neighbors, weights and predictions under one metric.
pub(crate) struct LooState {
    pub neighbors: Vec<Vec<Neighbor>>,
    pub weights: Vec<Vec<f64>>,
    pub predictions: Vec<f64>,
}

impl LooState {
    pub fn loss(&self, targets: &[f64]) -> f64 {
        targets
            .iter()
            .zip(&self.predictions)
            .map(|(y, p)| (y - p) * (y - p))
            .sum()
    }

    /// `sum_i (yhat_i - y_i) sum_j (yhat_i - y_j) w_ij x_ij x_ij^T` with
    /// normalized weights `w_ij`. Exactly symmetric.
    pub fn data_term(&self, data: &Dataset) -> DMatrix<f64> {
        let d = data.dim();
        let y = data.targets();
        let mut acc = vec![0.0; d * d];
        let mut diff = vec![0.0; d];
        for (i, (nbs, ws)) in self.neighbors.iter().zip(&self.weights).enumerate() {
            let yhat = self.predictions[i];
            let outer = yhat - y[i];
            if outer == 0.0 {
                continue;
            }
            for (nb, w) in nbs.iter().zip(ws) {
                let c = outer * (yhat - y[nb.index]) * w;
                if c == 0.0 {
                    continue;
                }
                for ((o, a), b) in diff.iter_mut().zip(data.row(i)).zip(data.row(nb.index)) {
                    *o = a - b;
                }
                for r in 0..d {
                    let cr = c * diff[r];
                    let row = &mut acc[r * d..(r + 1) * d];
                    for s in r..d {
                        row[s] += cr * diff[s];
                    }
                }
            }
        }
        let mut g = DMatrix::zeros(d, d);
        for r in 0..d {
            for s in r..d {
                g[(r, s)] = acc[r * d + s];
                g[(s, r)] = acc[r * d + s];
            }
        }
        g
    }
}

/// Evaluates leave-one-out predictions with neighbor search done in the
/// embedded space `x -> embed * x`, where `M = embed^T embed`.
pub(crate) fn loo_state(data: &Dataset, embed: &DMatrix<f64>, kernel: &KernelConfig) -> Result<LooState> {
    let n = data.len();
    if n < 2 {
        return Err(Error::insufficient("training needs at least 2 examples"));
    }
    let r = embed.nrows();
    let mut z = vec![0.0; n * r];
    for (i, row) in data.rows().enumerate() {
        for k in 0..r {
            z[i * r + k] = embed.row(k).iter().zip(row).map(|(a, b)| a * b).sum();
        }
    }
    let mut neighbors = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut predictions = Vec::with_capacity(n);
    for i in 0..n {
        let zi = &z[i * r..(i + 1) * r];
        let nbs = select_neighbors(n, kernel.k_neighbors, Some(i), |j| {
            zi.iter()
                .zip(&z[j * r..(j + 1) * r])
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })?;
        let w = engine::normalized_weights(&nbs, kernel.sigma);
        predictions.push(engine::weighted_estimate(&nbs, &w, data.targets()));
        neighbors.push(nbs);
        weights.push(w);
    }
    Ok(LooState {
        neighbors,
        weights,
        predictions,
    })
}

/// Projected/plain gradient descent with per-step backtracking, shared by
/// KR_SML (parameter `M`) and MLKR (parameter `A`).
pub(crate) trait Descent {
    /// Metric induced by a parameter value.
    fn metric(&self, param: &DMatrix<f64>) -> Result<MetricMatrix>;
    /// Embedding used for neighbor search (`M = E^T E`).
    fn embedding(&self, param: &DMatrix<f64>, metric: &MetricMatrix) -> Result<DMatrix<f64>>;
    fn objective(&self, loss: f64, metric: &MetricMatrix) -> f64;
    fn gradient(&self, param: &DMatrix<f64>, state: &LooState, data: &Dataset) -> DMatrix<f64>;
    /// Parameter after a step of size `step` along `-grad`.
    fn step(&self, param: &DMatrix<f64>, grad: &DMatrix<f64>, step: f64) -> Result<DMatrix<f64>>;
}

pub(crate) struct DescentResult {
    pub best_metric: MetricMatrix,
    pub trace: TrainTrace,
}

struct Evaluated {
    param: DMatrix<f64>,
    metric: MetricMatrix,
    state: LooState,
    objective: f64,
}

fn evaluate<D: Descent>(
    desc: &D,
    data: &Dataset,
    kernel: &KernelConfig,
    param: DMatrix<f64>,
) -> Result<Evaluated> {
    let metric = desc.metric(&param)?;
    let embed = desc.embedding(&param, &metric)?;
    let state = loo_state(data, &embed, kernel)?;
    let objective = desc.objective(state.loss(data.targets()), &metric);
    Ok(Evaluated {
        param,
        metric,
        state,
        objective,
    })
}

fn record(iteration: usize, e: &Evaluated, step: f64, accepted: bool) -> Result<IterationRecord> {
    let min_eigenvalue = crate::metric::min_eigenvalue(e.metric.entries())?;
    Ok(IterationRecord {
        iteration,
        loss: e.objective,
        trace: e.metric.trace(),
        rank: numerical_rank(&e.metric, DEFAULT_RANK_TOL),
        min_eigenvalue,
        step,
        accepted,
    })
}

pub(crate) fn descend<D: Descent>(
    desc: &D,
    data: &Dataset,
    cfg: &TrainConfig,
    init: DMatrix<f64>,
) -> Result<DescentResult> {
    cfg.validate()?;
    let mut current = evaluate(desc, data, &cfg.kernel, init)?;
    if !current.objective.is_finite() {
        return Err(Error::numeric("non-finite objective at iteration 0"));
    }
    let mut trace = TrainTrace {
        records: vec![record(0, &current, 0.0, true)?],
    };
    let mut best = (current.metric.clone(), current.objective);

    for iteration in 1..=cfg.max_iters {
        let grad = desc.gradient(&current.param, &current.state, data);
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite gradient at iteration {iteration}"
            )));
        }
        let mut step = cfg.alpha;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = evaluate(desc, data, &cfg.kernel, desc.step(&current.param, &grad, step)?)?;
            if !candidate.objective.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite objective at iteration {iteration}"
                )));
            }
            if candidate.objective <= current.objective {
                accepted = Some(candidate);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            trace.records.push(record(iteration, &current, 0.0, false)?);
            break;
        };
        let change = (current.objective - next.objective).abs();
        current = next;
        trace.records.push(record(iteration, &current, step, true)?);
        if current.objective < best.1 {
            best = (current.metric.clone(), current.objective);
        }
        if change <= cfg.theta {
            break;
        }
    }
    Ok(DescentResult {
        best_metric: best.0,
        trace,
    })
}
