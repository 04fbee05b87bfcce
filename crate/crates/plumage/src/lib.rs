//! Minimum-variance unbiased low-rank gradient estimation and the projected
//! optimizers built on it.
//!
//! The pipeline: decompose a gradient, solve for inclusion probabilities that
//! minimize estimator variance at a fixed rank budget
//! ([`sampler::compute_sampling_probabilities`]), draw exactly-k index sets
//! with those marginals ([`sampler::sample_indices`]), and stack the sampled
//! singular vectors into a one-sided projection whose inverse-probability
//! scaling makes `P D⁻¹ Pᵀ G` an unbiased estimate of `G`. The [`optim`]
//! module keeps Adam/SGDM moments in the projected space, realigning them
//! whenever the projection changes, and [`interval`] adapts the
//! decomposition cadence from the measured subspace overlap. [`harness`]
//! drives desk-scale experiments behind the `plumage` CLI.

pub mod error;
pub mod estimator;
pub mod harness;
pub mod interval;
pub mod linalg;
pub mod optim;
pub mod oracle;
pub mod sampler;

pub use error::{Error, Result};
pub use linalg::{svd, Matrix, SingularDecomposition};
pub use sampler::{
    compute_sampling_probabilities, sample_indices, sample_projections, EstimatorKind,
    LowRankProjection, SamplingPlan, Side,
};
