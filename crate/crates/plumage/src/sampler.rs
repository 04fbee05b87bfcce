//! Minimum-variance inclusion probabilities and exact-k index sampling.
//!
//! Given a descending spectrum and a target rank `k`, the solver saturates the
//! leading `r*` probabilities at 1 and spreads the remaining mass over the
//! tail proportionally to the singular values. Index sets of exactly `k`
//! distinct entries are then drawn with a systematic "wheel of fortune"
//! scheme: shuffle the sectors, drop `k` equidistant arms on the cumulative
//! circle, and read off the hit sectors.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SingularDecomposition};

/// Which side of the decomposition a projection stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `P` is `m x k`; columns are left singular vectors.
    Left,
    /// `P` is `k x n`; rows are (transposed) right singular vectors.
    Right,
}

/// How a projection was constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Inverse-probability-scaled sampled singular vectors (unbiased).
    Plumage,
    /// Top-k singular vectors, no scaling (biased, minimum MSE).
    TopkDeterministic,
    /// Raw Gaussian sketch, no orthonormalization.
    GaussianRandom,
}

/// Deterministic rank and inclusion probabilities for one spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    /// Number of leading indices included with probability 1.
    pub r_star: usize,
    /// Per-index inclusion probabilities; sums to `k` whenever the spectrum
    /// carries enough mass (zeros appear only where sigma is zero).
    pub p: Vec<f64>,
    /// Target number of sampled indices.
    pub k: usize,
}

impl SamplingPlan {
    pub fn total_mass(&self) -> f64 {
        self.p.iter().sum()
    }

    /// Number of indices with a positive inclusion probability.
    pub fn support_size(&self) -> usize {
        self.p.iter().filter(|&&x| x > 0.0).count()
    }
}

/// A one-sided projection: orthonormal stack of sampled singular vectors plus
/// the inclusion probabilities of the sampled indices.
///
/// Orthonormality holds for the `Plumage` and `TopkDeterministic` kinds; the
/// `GaussianRandom` kind keeps the raw sketch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankProjection {
    pub kind: EstimatorKind,
    pub side: Side,
    /// `m x k` (left) or `k x n` (right).
    pub basis: Matrix,
    /// Sampled inclusion probabilities, one per projection direction, in (0, 1].
    pub d_scale: Vec<f64>,
    /// Spectrum indices behind each direction, ascending.
    pub sampled_indices: Vec<usize>,
}

impl LowRankProjection {
    pub fn rank(&self) -> usize {
        match self.side {
            Side::Left => self.basis.cols(),
            Side::Right => self.basis.rows(),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self.side {
            Side::Left => self.basis.rows(),
            Side::Right => self.basis.cols(),
        }
    }

    /// The projection truncated to its `n` leading directions.
    pub fn truncated(&self, n: usize) -> LowRankProjection {
        let n = n.min(self.rank());
        let basis = match self.side {
            Side::Left => self.basis.leading_columns(n),
            Side::Right => self.basis.leading_rows(n),
        };
        LowRankProjection {
            kind: self.kind,
            side: self.side,
            basis,
            d_scale: self.d_scale[..n].to_vec(),
            sampled_indices: self.sampled_indices[..n].to_vec(),
        }
    }

    /// Identity-like placeholder used before the first spectrum is observed:
    /// the first `k` canonical directions with unit scale.
    pub fn canonical(ambient: usize, k: usize, side: Side) -> LowRankProjection {
        let eye = Matrix::from_fn(ambient, k, |i, j| if i == j { 1.0 } else { 0.0 });
        let basis = match side {
            Side::Left => eye,
            Side::Right => eye.transpose(),
        };
        LowRankProjection {
            kind: EstimatorKind::Plumage,
            side,
            basis,
            d_scale: vec![1.0; k],
            sampled_indices: (0..k).collect(),
        }
    }
}

fn validate_spectrum(sigma: &[f64]) -> Result<()> {
    for (i, &s) in sigma.iter().enumerate() {
        if s < 0.0 || !s.is_finite() {
            return Err(Error::NegativeSingularValue { index: i });
        }
        if i > 0 && sigma[i - 1] < s {
            return Err(Error::UnsortedSpectrum { index: i });
        }
    }
    Ok(())
}

/// Solves for the deterministic rank `r*` and the minimum-variance inclusion
/// probabilities of a descending spectrum.
///
/// `r*` is the smallest `r` such that `(k - r) * sigma[r] / sum(sigma[r..]) < 1`
/// (tail sums clipped below by `eps`); indices before `r*` get probability 1
/// and the tail gets `(k - r*) * sigma[i] / sum(sigma[r*..])`.
pub fn compute_sampling_probabilities(sigma: &[f64], k: usize, eps: f64) -> Result<SamplingPlan> {
    let d = sigma.len();
    if k == 0 || k > d {
        return Err(Error::RankOutOfRange { k, d });
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidHyperparameter(format!(
            "sampling eps must be positive, got {eps}"
        )));
    }
    validate_spectrum(sigma)?;

    // Suffix sums t[i] = sigma[i] + ... + sigma[d-1], clipped below by eps.
    let mut tail = vec![0.0; d];
    let mut acc = 0.0;
    for i in (0..d).rev() {
        acc += sigma[i];
        tail[i] = acc.max(eps);
    }

    // Count spots where the saturation test (k - i) * sigma[i] / t[i] < 1
    // already passes; everything before them is deterministic.
    let passing = (0..d)
        .filter(|&i| (k as f64 - i as f64) * sigma[i] / tail[i] < 1.0)
        .count();
    let r_star = d - passing;

    let mut p = vec![1.0; d];
    if r_star < d {
        let scale = (k - r_star) as f64 / tail[r_star];
        for i in r_star..d {
            p[i] = sigma[i] * scale;
        }
    }
    Ok(SamplingPlan { r_star, p, k })
}

/// Draws exactly `k` distinct indices with the prescribed marginal inclusion
/// probabilities using systematic sampling over a shuffled cumulative circle.
///
/// Returned indices are sorted ascending. Indices with `p = 1` are always
/// included and indices with `p = 0` never are.
pub fn sample_indices(p: &[f64], k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let n = p.len();
    if k == 0 || k > n {
        return Err(Error::RankOutOfRange { k, d: n });
    }
    for (i, &x) in p.iter().enumerate() {
        if !(x >= 0.0 && x <= 1.0 + 1e-9) {
            return Err(Error::ProbabilityOutOfRange { index: i, value: x });
        }
    }
    let total: f64 = p.iter().sum();
    if (total - k as f64).abs() > 1e-6 {
        return Err(Error::ProbabilityMassMismatch {
            expected: k as f64,
            got: total,
        });
    }

    let mut perm: Vec<usize> = (0..n).collect();
    // In exact arithmetic one pass always succeeds; the retries only guard
    // against an arm landing on a cumulative boundary after rounding.
    for _ in 0..4 {
        perm.shuffle(rng);
        let mut cum = Vec::with_capacity(n);
        let mut acc = 0.0;
        for &idx in &perm {
            acc += p[idx];
            cum.push(acc);
        }
        let total = acc;
        let delta = total / k as f64;
        // Offset in (0, delta] so an arm never sits at position 0.
        let beta = delta * (1.0 - rng.gen::<f64>());

        let mut picks = Vec::with_capacity(k);
        let mut sector = 0usize;
        for j in 0..k {
            let arm = beta + j as f64 * delta;
            while sector + 1 < n && cum[sector] < arm {
                sector += 1;
            }
            picks.push(sector);
        }
        let distinct = picks.windows(2).all(|w| w[0] < w[1]);
        let positive = picks.iter().all(|&s| p[perm[s]] > 0.0);
        if distinct && positive {
            let mut out: Vec<usize> = picks.into_iter().map(|s| perm[s]).collect();
            out.sort_unstable();
            return Ok(out);
        }
    }
    Err(Error::SamplingDegenerate)
}

/// Stacks the sampled singular vectors into a one-sided projection together
/// with their inclusion probabilities.
pub fn sample_projections(
    decomp: &SingularDecomposition,
    plan: &SamplingPlan,
    k: usize,
    side: Side,
    rng: &mut impl Rng,
) -> Result<LowRankProjection> {
    let d = decomp.rank_dim();
    if k == 0 || k > d {
        return Err(Error::RankOutOfRange { k, d });
    }
    if plan.p.len() != d {
        return Err(Error::ShapeMismatch {
            rows: d,
            cols: 1,
            len: plan.p.len(),
        });
    }
    let indices = sample_indices(&plan.p, k, rng)?;
    projection_at_indices(decomp, plan, &indices, side)
}

/// Builds the projection for an explicit index set; errors if an index has
/// zero inclusion probability (its direction could not be unbiasedly scaled).
pub fn projection_at_indices(
    decomp: &SingularDecomposition,
    plan: &SamplingPlan,
    indices: &[usize],
    side: Side,
) -> Result<LowRankProjection> {
    let basis = match side {
        Side::Left => &decomp.u,
        Side::Right => &decomp.v,
    };
    projection_from_basis(basis, plan, indices, side)
}

/// Same as [`projection_at_indices`] but from a column-stacked singular-vector
/// basis (`ambient x d`), e.g. one cached from an earlier decomposition.
pub fn projection_from_basis(
    basis_columns: &Matrix,
    plan: &SamplingPlan,
    indices: &[usize],
    side: Side,
) -> Result<LowRankProjection> {
    let mut d_scale = Vec::with_capacity(indices.len());
    for &i in indices {
        let pi = plan.p.get(i).copied().unwrap_or(0.0);
        if pi <= 0.0 {
            return Err(Error::ZeroProbabilitySample { index: i });
        }
        d_scale.push(pi.min(1.0));
    }
    let basis = match side {
        Side::Left => basis_columns.select_columns(indices),
        Side::Right => basis_columns.select_columns(indices).transpose(),
    };
    Ok(LowRankProjection {
        kind: EstimatorKind::Plumage,
        side,
        basis,
        d_scale,
        sampled_indices: indices.to_vec(),
    })
}
