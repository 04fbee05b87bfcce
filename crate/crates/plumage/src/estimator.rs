//! Gradient projection, reconstruction, and the analytic variance of the
//! sampled estimator, plus the deterministic top-k and Gaussian baselines.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SingularDecomposition};
use crate::sampler::{EstimatorKind, LowRankProjection, Side};

/// Projects a gradient into the low-rank space: `Pᵀ G` (left) or `G Pᵀ` (right).
pub fn project(g: &Matrix, proj: &LowRankProjection) -> Result<Matrix> {
    match proj.side {
        Side::Left => proj.basis.tr_matmul(g),
        Side::Right => g.matmul_tr(&proj.basis),
    }
}

/// Maps a projected matrix back to full shape with inverse-probability
/// scaling: `P D⁻¹ Z` (left) or `Z D⁻¹ P` (right).
pub fn expand_scaled(z: &Matrix, proj: &LowRankProjection) -> Result<Matrix> {
    for (i, &s) in proj.d_scale.iter().enumerate() {
        if !(s > 0.0) {
            return Err(Error::NonPositiveScale { index: i, value: s });
        }
    }
    match proj.side {
        Side::Left => {
            if z.rows() != proj.d_scale.len() {
                return Err(Error::DimensionMismatch {
                    left_rows: proj.basis.rows(),
                    left_cols: proj.basis.cols(),
                    right_rows: z.rows(),
                    right_cols: z.cols(),
                });
            }
            let mut scaled = z.clone();
            for (i, &s) in proj.d_scale.iter().enumerate() {
                for x in scaled.row_mut(i) {
                    *x /= s;
                }
            }
            proj.basis.matmul(&scaled)
        }
        Side::Right => {
            if z.cols() != proj.d_scale.len() {
                return Err(Error::DimensionMismatch {
                    left_rows: z.rows(),
                    left_cols: z.cols(),
                    right_rows: proj.basis.rows(),
                    right_cols: proj.basis.cols(),
                });
            }
            let mut scaled = z.clone();
            for row in 0..scaled.rows() {
                for (j, x) in scaled.row_mut(row).iter_mut().enumerate() {
                    *x /= proj.d_scale[j];
                }
            }
            scaled.matmul(&proj.basis)
        }
    }
}

/// Full-shape estimate `P D⁻¹ Pᵀ G` (left) or `G Pᵀ D⁻¹ P` (right).
///
/// Training never materializes this; it exists for verification and for
/// reconstruction at the boundary.
pub fn estimate(g: &Matrix, proj: &LowRankProjection) -> Result<Matrix> {
    let projected = project(g, proj)?;
    expand_scaled(&projected, proj)
}

/// Estimator variance `sum_i (1/p_i - 1) sigma_i^2` over indices with a
/// positive singular value. Returns infinity if such an index has `p = 0`.
pub fn analytic_variance(sigma: &[f64], p: &[f64]) -> f64 {
    sigma
        .iter()
        .zip(p)
        .filter(|(s, _)| **s > 0.0)
        .map(|(s, pi)| (1.0 / pi - 1.0) * s * s)
        .sum()
}

/// Deterministic projection onto the top-k singular vectors with unit scale.
pub fn topk_projection(
    decomp: &SingularDecomposition,
    k: usize,
    side: Side,
) -> Result<LowRankProjection> {
    let d = decomp.rank_dim();
    if k == 0 || k > d {
        return Err(Error::RankOutOfRange { k, d });
    }
    let indices: Vec<usize> = (0..k).collect();
    let basis = match side {
        Side::Left => decomp.u.select_columns(&indices),
        Side::Right => decomp.v.select_columns(&indices).transpose(),
    };
    Ok(LowRankProjection {
        kind: EstimatorKind::TopkDeterministic,
        side,
        basis,
        d_scale: vec![1.0; k],
        sampled_indices: indices,
    })
}

/// Raw Gaussian sketch with i.i.d. `N(0, 1/k)` entries and unit scale.
/// Columns are deliberately not orthonormalized; `E[P Pᵀ] = I` makes the
/// reconstruction unbiased in expectation.
pub fn gaussian_projection(
    dim: usize,
    k: usize,
    side: Side,
    rng: &mut impl Rng,
) -> Result<LowRankProjection> {
    if k == 0 || k > dim {
        return Err(Error::RankOutOfRange { k, d: dim });
    }
    let scale = 1.0 / (k as f64).sqrt();
    let mut draw = |_: usize, _: usize| -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        z * scale
    };
    let basis = match side {
        Side::Left => Matrix::from_fn(dim, k, &mut draw),
        Side::Right => Matrix::from_fn(k, dim, &mut draw),
    };
    Ok(LowRankProjection {
        kind: EstimatorKind::GaussianRandom,
        side,
        basis,
        d_scale: vec![1.0; k],
        sampled_indices: (0..k).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::svd;
    use crate::sampler::{compute_sampling_probabilities, sample_projections};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn project_full_rank_preserves_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let g = random_matrix(5, 5, &mut rng);
        let base = random_matrix(5, 5, &mut rng);
        let dec = svd(&base).unwrap();
        let proj = topk_projection(&dec, 5, Side::Left).unwrap();
        let r = project(&g, &proj).unwrap();
        assert!((r.frobenius_norm() - g.frobenius_norm()).abs() < 1e-10);
    }

    #[test]
    fn project_canonical_picks_rows() {
        let g = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let proj = LowRankProjection::canonical(2, 1, Side::Left);
        let r = project(&g, &proj).unwrap();
        assert_eq!(r.shape(), (1, 2));
        assert_eq!(r.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn project_is_a_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = random_matrix(6, 9, &mut rng);
        let dec = svd(&g).unwrap();
        let proj = topk_projection(&dec, 3, Side::Left).unwrap();
        let r = project(&g, &proj).unwrap();
        assert!(r.frobenius_norm() <= g.frobenius_norm() + 1e-12);
    }

    #[test]
    fn estimate_exact_when_rank_one_and_k_one() {
        let u = [0.6, 0.8];
        let v = [2.0, 1.0, -2.0];
        let g = Matrix::from_fn(2, 3, |i, j| u[i] * v[j]);
        let dec = svd(&g).unwrap();
        let plan = compute_sampling_probabilities(&dec.sigma, 1, 1e-12).unwrap();
        assert!((plan.p[0] - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let proj = sample_projections(&dec, &plan, 1, Side::Left, &mut rng).unwrap();
        let est = estimate(&g, &proj).unwrap();
        assert!(est.sub(&g).frobenius_norm() < 1e-10 * g.frobenius_norm().max(1.0));
    }

    #[test]
    fn estimate_exact_when_k_equals_d() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let g = random_matrix(4, 7, &mut rng);
        let dec = svd(&g).unwrap();
        let plan = compute_sampling_probabilities(&dec.sigma, 4, 1e-12).unwrap();
        let proj = sample_projections(&dec, &plan, 4, Side::Left, &mut rng).unwrap();
        let est = estimate(&g, &proj).unwrap();
        assert!(est.sub(&g).frobenius_norm() < 1e-10 * g.frobenius_norm());
    }

    #[test]
    fn estimate_monte_carlo_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let g = random_matrix(8, 12, &mut rng);
        let dec = svd(&g).unwrap();
        let plan = compute_sampling_probabilities(&dec.sigma, 4, 1e-12).unwrap();
        let trials = 50_000;
        let mut mean = Matrix::zeros(8, 12);
        for _ in 0..trials {
            let proj = sample_projections(&dec, &plan, 4, Side::Left, &mut rng).unwrap();
            mean.add_assign_scaled(&estimate(&g, &proj).unwrap(), 1.0 / trials as f64);
        }
        let rel = mean.sub(&g).frobenius_norm() / g.frobenius_norm();
        assert!(rel < 0.01, "relative deviation {rel}");
    }

    #[test]
    fn analytic_variance_cases() {
        assert_eq!(analytic_variance(&[3.0, 2.0], &[1.0, 1.0]), 0.0);
        let v = analytic_variance(&[4.0, 2.0, 1.0, 1.0], &[1.0, 0.5, 0.25, 0.25]);
        assert!((v - 10.0).abs() < 1e-12);
        let uniform = analytic_variance(&[4.0, 2.0, 1.0, 1.0], &[0.5; 4]);
        assert!((uniform - 22.0).abs() < 1e-12);
        assert!(uniform > v);
    }

    #[test]
    fn topk_matches_plumage_at_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let g = random_matrix(4, 6, &mut rng);
        let dec = svd(&g).unwrap();
        let plan = compute_sampling_probabilities(&dec.sigma, 4, 1e-12).unwrap();
        let plumage = sample_projections(&dec, &plan, 4, Side::Left, &mut rng).unwrap();
        let topk = topk_projection(&dec, 4, Side::Left).unwrap();
        assert_eq!(plumage.sampled_indices, topk.sampled_indices);
        assert!(plumage.basis.sub(&topk.basis).frobenius_norm() < 1e-12);
    }

    #[test]
    fn topk_of_diagonal_is_leading_axis() {
        let mut g = Matrix::zeros(3, 3);
        g.set(0, 0, 4.0);
        g.set(1, 1, 2.0);
        g.set(2, 2, 1.0);
        let dec = svd(&g).unwrap();
        let proj = topk_projection(&dec, 1, Side::Left).unwrap();
        assert!((proj.basis.get(0, 0).abs() - 1.0).abs() < 1e-12);
        assert!(proj.basis.get(1, 0).abs() < 1e-12);
    }

    #[test]
    fn topk_exact_when_tail_is_zero() {
        // sigma = [3, 1, 0]: rank-2 matrix reconstructed exactly at k = 2.
        let mut core = Matrix::zeros(3, 4);
        core.set(0, 0, 3.0);
        core.set(1, 1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let q1 = svd(&random_matrix(3, 3, &mut rng)).unwrap().u;
        let q2 = svd(&random_matrix(4, 4, &mut rng)).unwrap().u;
        let g = q1.matmul(&core).unwrap().matmul_tr(&q2).unwrap();
        let dec = svd(&g).unwrap();
        let proj = topk_projection(&dec, 2, Side::Left).unwrap();
        let est = estimate(&g, &proj).unwrap();
        assert!(est.sub(&g).frobenius_norm() < 1e-10);
    }

    #[test]
    fn topk_bias_equals_truncated_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        for _ in 0..10 {
            let g = random_matrix(5, 8, &mut rng);
            let dec = svd(&g).unwrap();
            let k = 2;
            let proj = topk_projection(&dec, k, Side::Left).unwrap();
            let est = estimate(&g, &proj).unwrap();
            let bias_sq = est.sub(&g).frobenius_norm().powi(2);
            let tail_sq: f64 = dec.sigma[k..].iter().map(|s| s * s).sum();
            assert!((bias_sq - tail_sq).abs() < 1e-10 * tail_sq.max(1.0));
        }
    }

    #[test]
    fn gaussian_gram_expectation_is_identity_at_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let (m, k) = (6, 6);
        let trials = 10_000;
        let mut mean = Matrix::zeros(k, k);
        for _ in 0..trials {
            let proj = gaussian_projection(m, k, Side::Left, &mut rng).unwrap();
            mean.add_assign_scaled(
                &proj.basis.tr_matmul(&proj.basis).unwrap(),
                1.0 / trials as f64,
            );
        }
        let eye = Matrix::identity(k);
        for i in 0..k {
            for j in 0..k {
                assert!(
                    (mean.get(i, j) - eye.get(i, j)).abs() < 0.05,
                    "entry ({i}, {j}) = {}",
                    mean.get(i, j)
                );
            }
        }
    }

    #[test]
    fn gaussian_reconstruction_unbiased_at_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let g = random_matrix(5, 4, &mut rng);
        let trials = 20_000;
        let mut mean = Matrix::zeros(5, 4);
        for _ in 0..trials {
            let proj = gaussian_projection(5, 5, Side::Left, &mut rng).unwrap();
            mean.add_assign_scaled(&estimate(&g, &proj).unwrap(), 1.0 / trials as f64);
        }
        let rel = mean.sub(&g).frobenius_norm() / g.frobenius_norm();
        assert!(rel < 0.05, "relative deviation {rel}");
    }

    #[test]
    fn gaussian_is_deterministic_for_a_seed() {
        let a = gaussian_projection(7, 3, Side::Left, &mut ChaCha8Rng::seed_from_u64(30)).unwrap();
        let b = gaussian_projection(7, 3, Side::Left, &mut ChaCha8Rng::seed_from_u64(30)).unwrap();
        assert_eq!(a.basis, b.basis);
    }

    #[test]
    fn right_side_estimate_mirrors_left_on_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let g = random_matrix(9, 5, &mut rng);
        let dec_t = svd(&g.transpose()).unwrap();
        let plan = compute_sampling_probabilities(&dec_t.sigma, 3, 1e-12).unwrap();
        let left = sample_projections(&dec_t, &plan, 3, Side::Left, &mut rng).unwrap();
        // The same stacked directions used as a right projection of G must give
        // the transpose of the left-side estimate of Gᵀ.
        let right = LowRankProjection {
            kind: left.kind,
            side: Side::Right,
            basis: left.basis.transpose(),
            d_scale: left.d_scale.clone(),
            sampled_indices: left.sampled_indices.clone(),
        };
        let est_left = estimate(&g.transpose(), &left).unwrap();
        let est_right = estimate(&g, &right).unwrap();
        assert!(est_left.transpose().sub(&est_right).frobenius_norm() < 1e-10);
    }
}
