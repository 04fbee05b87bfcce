//! Error type shared by the numerical modules.

use thiserror::Error;

/// Errors produced by the linear-algebra, sampling, and optimizer layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix data length {len} does not match {rows}x{cols}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        len: usize,
    },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error(
        "dimension mismatch: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}"
    )]
    DimensionMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("SVD failed to converge for a {rows}x{cols} matrix")]
    SvdNotConverged { rows: usize, cols: usize },

    #[error("target rank {k} out of range for spectrum of length {d}")]
    RankOutOfRange { k: usize, d: usize },

    #[error("singular values must be sorted in descending order (violated at index {index})")]
    UnsortedSpectrum { index: usize },

    #[error("singular values must be nonnegative (index {index})")]
    NegativeSingularValue { index: usize },

    #[error("inclusion probabilities must sum to {expected}, got {got}")]
    ProbabilityMassMismatch { expected: f64, got: f64 },

    #[error("inclusion probability out of [0, 1] at index {index}: {value}")]
    ProbabilityOutOfRange { index: usize, value: f64 },

    #[error("sampled index {index} has zero inclusion probability")]
    ZeroProbabilitySample { index: usize },

    #[error("projection scale entry at position {index} must be positive, got {value}")]
    NonPositiveScale { index: usize, value: f64 },

    #[error("systematic sampling degenerated to duplicate indices")]
    SamplingDegenerate,

    #[error("projections have different sides")]
    SideMismatch,

    #[error("ambient dimension mismatch: {left} vs {right}")]
    AmbientMismatch { left: usize, right: usize },

    #[error("negative second-moment entry at ({row}, {col}): {value}")]
    NegativeSecondMoment { row: usize, col: usize, value: f64 },

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("non-finite value after weight update")]
    NonFiniteUpdate,

    #[error("grid search supports dimensions up to {max}, got {got}")]
    GridDimensionTooLarge { max: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
