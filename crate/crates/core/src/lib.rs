//! Kernel regression with sparse Mahalanobis metric learning.
//!
//! The crate learns a low-rank PSD metric `M` for Nadaraya-Watson kernel
//! regression by minimizing the leave-one-out squared error plus a trace
//! penalty, and ships the usual baselines next to it:
//!
//! * [`metric`]: metric matrices, norms, PSD projection, numerical rank.
//! * [`engine`]: neighbor search and kernel-weighted prediction.
//! * [`learners`]: KR_SML, MLKR, KR_PCA and a finite-difference checker.
//! * [`data`]: CSV and series input, standardization, splits, windowing.
//! * [`eval`]: RMSE/MARE, reports, model files, grid search, benchmarks.

pub mod data;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod eval;
pub mod learners;
pub mod metric;

pub use dataset::Dataset;
pub use engine::KernelConfig;
pub use error::{Error, Result};
pub use learners::{Learner, Model, TrainConfig, TrainTrace};
pub use metric::MetricMatrix;
