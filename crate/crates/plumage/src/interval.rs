//! Subspace overlap between consecutive projections and the hysteresis rule
//! that adapts the decomposition interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::svd;
use crate::sampler::{LowRankProjection, Side};

/// Interval bounds, hysteresis thresholds, and the overlap truncation rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalConfig {
    pub tau_min: usize,
    pub tau_max: usize,
    pub tau_initial: usize,
    /// Overlap below this resets the interval to `tau_min`.
    pub gamma_reset: f64,
    /// Overlap below this (but above reset) halves the interval.
    pub gamma_shrink: f64,
    /// Overlap above this doubles the interval.
    pub gamma_expand: f64,
    /// Leading directions used when measuring overlap.
    pub truncation_rank: usize,
}

impl IntervalConfig {
    /// Bounds from the initial interval and, when known, the planned total
    /// step count: `tau_max` is 5% of the total, otherwise `32 * tau_initial`.
    pub fn from_schedule(tau_initial: usize, total_steps: Option<usize>) -> Self {
        let tau_max = match total_steps {
            Some(n) => (n / 20).max(tau_initial),
            None => tau_initial.saturating_mul(32),
        };
        IntervalConfig {
            tau_min: tau_initial,
            tau_max,
            tau_initial,
            gamma_reset: 0.3,
            gamma_shrink: 0.4,
            gamma_expand: 0.6,
            truncation_rank: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau_min == 0
            || !(self.tau_min <= self.tau_initial && self.tau_initial <= self.tau_max)
        {
            return Err(Error::InvalidHyperparameter(format!(
                "interval bounds must satisfy 0 < tau_min <= tau_initial <= tau_max, got {} / {} / {}",
                self.tau_min, self.tau_initial, self.tau_max
            )));
        }
        let g = (self.gamma_reset, self.gamma_shrink, self.gamma_expand);
        let in_range = |x: f64| (0.0..=1.0).contains(&x);
        if !(in_range(g.0) && in_range(g.1) && in_range(g.2)) || !(g.0 <= g.1 && g.1 < g.2) {
            return Err(Error::InvalidHyperparameter(format!(
                "thresholds must satisfy 0 <= gamma_reset <= gamma_shrink < gamma_expand <= 1, got {:?}",
                g
            )));
        }
        if self.truncation_rank == 0 {
            return Err(Error::InvalidHyperparameter(
                "truncation_rank must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for IntervalConfig {
    fn default() -> Self {
        IntervalConfig::from_schedule(200, None)
    }
}

/// Mean cosine of the principal angles between the subspaces spanned by two
/// projections, each truncated to its `truncation_rank` leading directions.
///
/// The cosines are the singular values of the overlap matrix `P1ᵀ P2`; with
/// ranks `r1`, `r2` there are `min(r1, r2)` of them and the mean is over that
/// count.
pub fn mean_cosine_principal_angle(
    p1: &LowRankProjection,
    p2: &LowRankProjection,
    truncation_rank: usize,
) -> Result<f64> {
    if p1.side != p2.side {
        return Err(Error::SideMismatch);
    }
    if p1.ambient_dim() != p2.ambient_dim() {
        return Err(Error::AmbientMismatch {
            left: p1.ambient_dim(),
            right: p2.ambient_dim(),
        });
    }
    let a = p1.truncated(truncation_rank);
    let b = p2.truncated(truncation_rank);
    let overlap = match a.side {
        Side::Left => a.basis.tr_matmul(&b.basis)?,
        Side::Right => a.basis.matmul_tr(&b.basis)?,
    };
    let sigma = svd(&overlap)?.sigma;
    if sigma.is_empty() {
        return Ok(0.0);
    }
    Ok(sigma.iter().sum::<f64>() / sigma.len() as f64)
}

/// Hysteresis update of the decomposition interval from the observed overlap:
/// reset to `tau_min` when `rho < gamma_reset`, halve when `rho < gamma_shrink`,
/// double when `rho > gamma_expand`, otherwise keep.
pub fn update_interval(tau: usize, rho: f64, cfg: &IntervalConfig) -> usize {
    if rho < cfg.gamma_reset {
        cfg.tau_min
    } else if rho < cfg.gamma_shrink {
        (tau / 2).max(cfg.tau_min)
    } else if rho > cfg.gamma_expand {
        tau.saturating_mul(2).min(cfg.tau_max)
    } else {
        tau
    }
}
