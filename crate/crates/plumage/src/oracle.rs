//! Slow, obviously-correct references used by tests to validate the fast
//! paths: an exhaustive grid search over the probability simplex, empirical
//! inclusion frequencies, and a direct rank-one-sum gradient estimate.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{svd, Matrix};
use crate::sampler::{sample_indices, SamplingPlan};

/// Enumeration grid over `{sum p = k, 0 < p <= 1}`.
///
/// Points with any coordinate at or below `resolution / 2` are excluded; the
/// objective diverges at zero.
#[derive(Debug, Clone)]
pub struct SimplexGrid {
    pub dimension: usize,
    pub resolution: f64,
}

impl SimplexGrid {
    pub const MAX_DIMENSION: usize = 4;

    pub fn new(dimension: usize, resolution: f64) -> Result<Self> {
        if dimension == 0 || dimension > Self::MAX_DIMENSION {
            return Err(Error::GridDimensionTooLarge {
                max: Self::MAX_DIMENSION,
                got: dimension,
            });
        }
        if !(resolution > 0.0 && resolution <= 1.0) {
            return Err(Error::InvalidHyperparameter(format!(
                "grid resolution must lie in (0, 1], got {resolution}"
            )));
        }
        Ok(SimplexGrid {
            dimension,
            resolution,
        })
    }
}

/// Exhaustive minimum of `sum_i sigma_i^2 / p_i` over the feasible grid.
/// Returns the best point and its objective value.
///
/// Coordinates with a zero singular value contribute nothing to the objective
/// and are pinned to probability zero rather than enumerated, matching the
/// sampler's convention; the mass constraint then acts on the positive
/// support only.
pub fn brute_force_min_variance(
    sigma: &[f64],
    k: usize,
    grid: &SimplexGrid,
) -> Result<(Vec<f64>, f64)> {
    let d = sigma.len();
    if d != grid.dimension {
        return Err(Error::GridDimensionTooLarge {
            max: grid.dimension,
            got: d,
        });
    }
    if k == 0 || k > d {
        return Err(Error::RankOutOfRange { k, d });
    }
    let support: Vec<usize> = (0..d).filter(|&i| sigma[i] > 0.0).collect();
    if support.len() < d {
        let sigma_pos: Vec<f64> = support.iter().map(|&i| sigma[i]).collect();
        let k_pos = k.min(support.len());
        let sub_grid = SimplexGrid::new(support.len(), grid.resolution)?;
        let (p_pos, best) = brute_force_min_variance(&sigma_pos, k_pos, &sub_grid)?;
        let mut p = vec![0.0; d];
        for (slot, &i) in support.iter().enumerate() {
            p[i] = p_pos[slot];
        }
        return Ok((p, best));
    }
    let h = grid.resolution;
    let levels = (1.0 / h).round() as usize;
    let mut point = vec![0.0; d];
    let mut best_point = vec![0.0; d];
    let mut best = f64::INFINITY;

    fn recurse(
        sigma: &[f64],
        k: f64,
        h: f64,
        levels: usize,
        idx: usize,
        partial: f64,
        point: &mut Vec<f64>,
        best: &mut f64,
        best_point: &mut Vec<f64>,
    ) {
        let d = sigma.len();
        let remaining = d - idx;
        if remaining == 1 {
            let last = k - partial;
            if last > h / 2.0 - 1e-12 && last <= 1.0 + 1e-9 {
                point[idx] = last;
                let mut obj = 0.0;
                for (s, p) in sigma.iter().zip(point.iter()) {
                    if *s > 0.0 {
                        obj += s * s / p;
                    }
                }
                if obj < *best {
                    *best = obj;
                    best_point.copy_from_slice(point);
                }
            }
            return;
        }
        // Feasibility pruning: the rest must be able to reach k.
        for j in 1..=levels {
            let p = j as f64 * h;
            let next = partial + p;
            let rest = remaining - 1;
            if next + rest as f64 * h > k + 1e-9 {
                break; // even minimal completions overshoot
            }
            if next + (rest as f64) < k - 1e-9 {
                continue; // even maximal completions fall short
            }
            point[idx] = p;
            recurse(sigma, k, h, levels, idx + 1, next, point, best, best_point);
        }
    }

    recurse(
        sigma,
        k as f64,
        h,
        levels,
        0,
        0.0,
        &mut point,
        &mut best,
        &mut best_point,
    );
    if best.is_infinite() {
        return Err(Error::InvalidHyperparameter(format!(
            "no feasible grid point for d={d}, k={k}, h={h}"
        )));
    }
    Ok((best_point, best))
}

/// Empirical marginal inclusion frequencies of [`sample_indices`] over
/// repeated draws.
pub fn empirical_inclusion_frequencies(
    p: &[f64],
    k: usize,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; p.len()];
    for _ in 0..trials {
        for idx in sample_indices(p, k, rng)? {
            counts[idx] += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / trials as f64)
        .collect())
}

/// Direct evaluation of `sum_{i in sampled} (1/p_i) sigma_i u_i v_iᵀ` from a
/// fresh decomposition of `g`, independent of the projected code path.
pub fn dense_reference_estimate(
    g: &Matrix,
    sampled: &[usize],
    plan: &SamplingPlan,
) -> Result<Matrix> {
    let dec = svd(g)?;
    let d = dec.rank_dim();
    let (m, n) = g.shape();
    let mut out = Matrix::zeros(m, n);
    for &i in sampled {
        if i >= d {
            return Err(Error::RankOutOfRange { k: i, d });
        }
        let pi = plan.p[i];
        if pi <= 0.0 {
            return Err(Error::ZeroProbabilitySample { index: i });
        }
        let weight = dec.sigma[i] / pi;
        for row in 0..m {
            let coeff = weight * dec.u.get(row, i);
            if coeff == 0.0 {
                continue;
            }
            let out_row = out.row_mut(row);
            for (col, slot) in out_row.iter_mut().enumerate() {
                *slot += coeff * dec.v.get(col, i);
            }
        }
    }
    Ok(out)
}
