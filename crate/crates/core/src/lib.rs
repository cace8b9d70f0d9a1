//! Non-normal diffusion models at desk scale.
//!
//! Forward processes are structured random walks: each step adds a linear drift
//! term and a scaled draw from a standardized increment distribution (Gaussian,
//! Laplace or Uniform). This crate computes their closed-form moments, the
//! per-step KL losses between increment families, ELBO decompositions, and
//! reverse-time samples and likelihoods for low-dimensional toy targets.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod divergence;
pub mod error;
pub mod increments;
pub mod loss;
pub mod points;
pub mod process;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod score;
pub mod walk;

pub use analysis::{Metric, SweepRow, SweepTable, TwoSampleResult};
pub use error::{Error, Result};
pub use increments::IncrementKind;
pub use loss::{ElboReport, Pairing, StepWeights};
pub use points::PointCloud;
pub use process::{
    DiffusionSpec, DriftSpec, MomentTable, ProcessSpec, Schedule, ScheduleConfig, Spacing, TimeGrid,
};
pub use score::{
    ForwardSampling, GaussianMixture, LrSchedule, MlpDenoiser, ScoreModel, TrainConfig,
};
pub use walk::{PathEnsemble, WalkPath};
