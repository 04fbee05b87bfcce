//! C ABI for the plumage estimator and optimizer.
//!
//! Every function returns a [`PlumageStatus`]; resources are handed out as
//! opaque pointers with matching `_free` functions. Matrices cross the
//! boundary as row-major `double` buffers with explicit dimensions. A
//! thread-local message with details of the last failure is available via
//! [`plumage_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use plumage::estimator;
use plumage::interval::{self, IntervalConfig};
use plumage::linalg::Matrix;
use plumage::optim::{
    low_rank_adam_step, low_rank_sgdm_step, LowRankOptimizerState, OptimizerHyperparams,
    RealignMode,
};
use plumage::sampler::{self, EstimatorKind, LowRankProjection, SamplingPlan, Side};

/// Result of every fallible call in this API.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlumageStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonFinite = 4,
    SvdFailed = 5,
    Panic = 6,
}

/// Which moments the optimizer carries across projection updates.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlumageRealign {
    None = 0,
    FirstMoment = 1,
    FirstAndSecond = 2,
}

/// Projection construction used by the optimizer.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlumageEstimator {
    Sampled = 0,
    TopK = 1,
    Gaussian = 2,
}

/// Moment family of the optimizer.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlumageFamily {
    Adam = 0,
    Sgdm = 1,
}

/// Deterministic random source (opaque).
pub struct PlumageRng {
    inner: ChaCha8Rng,
}

/// Inclusion-probability plan for one spectrum (opaque).
pub struct PlumagePlan {
    inner: SamplingPlan,
}

/// Per-layer projected optimizer with its own random stream (opaque).
pub struct PlumageOptimizer {
    state: LowRankOptimizerState,
    hp: OptimizerHyperparams,
    rng: ChaCha8Rng,
    rows: usize,
    cols: usize,
    family: PlumageFamily,
}

/// Hyperparameters for [`plumage_optimizer_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PlumageOptimizerConfig {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub rank: usize,
    /// Steps between gradient decompositions.
    pub svd_interval: usize,
    /// Steps between projection redraws from the cached spectrum.
    pub resample_interval: usize,
    pub realign: PlumageRealign,
    pub estimator: PlumageEstimator,
    pub family: PlumageFamily,
    /// Nonzero enables the adaptive interval controller.
    pub adaptive_interval: i32,
    pub tau_min: usize,
    pub tau_max: usize,
    pub truncation_rank: usize,
    pub gamma_reset: f64,
    pub gamma_shrink: f64,
    pub gamma_expand: f64,
    /// Learning-rate scale applied only to the top-k estimator.
    pub alpha: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &plumage::Error) -> PlumageStatus {
    use plumage::Error::*;
    set_error(&err.to_string());
    match err {
        DimensionMismatch { .. } | ShapeMismatch { .. } | AmbientMismatch { .. } | SideMismatch => {
            PlumageStatus::DimensionMismatch
        }
        NonFinite { .. } | NonFiniteGradient | NonFiniteUpdate => PlumageStatus::NonFinite,
        SvdNotConverged { .. } => PlumageStatus::SvdFailed,
        _ => PlumageStatus::InvalidArgument,
    }
}

fn guard(body: impl FnOnce() -> PlumageStatus) -> PlumageStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            PlumageStatus::Panic
        }
    }
}

/// Message describing the most recent failure on this thread. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn plumage_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn plumage_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// --- random source -----------------------------------------------------------

#[no_mangle]
pub extern "C" fn plumage_rng_new(seed: u64) -> *mut PlumageRng {
    Box::into_raw(Box::new(PlumageRng {
        inner: ChaCha8Rng::seed_from_u64(seed),
    }))
}

/// # Safety
/// `rng` must come from [`plumage_rng_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn plumage_rng_free(rng: *mut PlumageRng) {
    if !rng.is_null() {
        drop(Box::from_raw(rng));
    }
}

// --- sampling plan -----------------------------------------------------------

/// Solves for the minimum-variance inclusion probabilities of a descending
/// spectrum; on success `*out_plan` owns the result.
///
/// # Safety
/// `sigma` must point to `len` doubles; `out_plan` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plumage_plan_new(
    sigma: *const f64,
    len: usize,
    k: usize,
    eps: f64,
    out_plan: *mut *mut PlumagePlan,
) -> PlumageStatus {
    guard(|| {
        if sigma.is_null() || out_plan.is_null() {
            set_error("null pointer");
            return PlumageStatus::NullPointer;
        }
        let spectrum = std::slice::from_raw_parts(sigma, len);
        match sampler::compute_sampling_probabilities(spectrum, k, eps) {
            Ok(plan) => {
                *out_plan = Box::into_raw(Box::new(PlumagePlan { inner: plan }));
                PlumageStatus::Ok
            }
            Err(err) => status_of(&err),
        }
    })
}

/// Number of leading indices included with probability one.
///
/// # Safety
/// `plan` must come from [`plumage_plan_new`].
#[no_mangle]
pub unsafe extern "C" fn plumage_plan_deterministic_rank(plan: *const PlumagePlan) -> usize {
    if plan.is_null() {
        return 0;
    }
    (*plan).inner.r_star
}

/// Copies the inclusion probabilities into `out` (`len` must equal the
/// spectrum length).
///
/// # Safety
/// `plan` from [`plumage_plan_new`]; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn plumage_plan_probabilities(
    plan: *const PlumagePlan,
    out: *mut f64,
    len: usize,
) -> PlumageStatus {
    guard(|| {
        if plan.is_null() || out.is_null() {
            set_error("null pointer");
            return PlumageStatus::NullPointer;
        }
        let p = &(*plan).inner.p;
        if p.len() != len {
            set_error(&format!(
                "plan has {} probabilities, buffer holds {len}",
                p.len()
            ));
            return PlumageStatus::DimensionMismatch;
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(p);
        PlumageStatus::Ok
    })
}

/// # Safety
/// `plan` must come from [`plumage_plan_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn plumage_plan_free(plan: *mut PlumagePlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Draws exactly `k` distinct indices with the plan's marginals into
/// `out_indices` (ascending order). `k` must equal the plan's target rank.
///
/// # Safety
/// All pointers must be valid; `out_indices` must hold `k` entries.
#[no_mangle]
pub unsafe extern "C" fn plumage_sample_indices(
    plan: *const PlumagePlan,
    rng: *mut PlumageRng,
    out_indices: *mut usize,
    k: usize,
) -> PlumageStatus {
    guard(|| {
        if plan.is_null() || rng.is_null() || out_indices.is_null() {
            set_error("null pointer");
            return PlumageStatus::NullPointer;
        }
        let plan = &(*plan).inner;
        if k != plan.k {
            set_error(&format!(
                "plan targets rank {}, caller asked for {k}",
                plan.k
            ));
            return PlumageStatus::InvalidArgument;
        }
        match sampler::sample_indices(&plan.p, k, &mut (*rng).inner) {
            Ok(indices) => {
                std::slice::from_raw_parts_mut(out_indices, k).copy_from_slice(&indices);
                PlumageStatus::Ok
            }
            Err(err) => status_of(&err),
        }
    })
}

/// Estimator variance `sum (1/p_i - 1) sigma_i^2`; infinite if some positive
/// singular value has zero probability.
///
/// # Safety
/// `sigma` and `p` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn plumage_analytic_variance(
    sigma: *const f64,
    p: *const f64,
    len: usize,
) -> f64 {
    if sigma.is_null() || p.is_null() {
        return f64::NAN;
    }
    estimator::analytic_variance(
        std::slice::from_raw_parts(sigma, len),
        std::slice::from_raw_parts(p, len),
    )
}

/// One-shot unbiased rank-`k` estimate of a row-major `rows x cols` gradient:
/// decompose, solve the plan, sample a projection, and write `P D⁻¹ Pᵀ G`
/// into `out`.
///
/// # Safety
/// `gradient` and `out` must each point to `rows * cols` doubles.
#[no_mangle]
pub unsafe extern "C" fn plumage_estimate(
    gradient: *const f64,
    rows: usize,
    cols: usize,
    k: usize,
    rng: *mut PlumageRng,
    out: *mut f64,
) -> PlumageStatus {
    guard(|| {
        if gradient.is_null() || rng.is_null() || out.is_null() {
            set_error("null pointer");
            return PlumageStatus::NullPointer;
        }
        let data = std::slice::from_raw_parts(gradient, rows * cols).to_vec();
        let g = match Matrix::from_vec(rows, cols, data) {
            Ok(g) => g,
            Err(err) => return status_of(&err),
        };
        let side = if rows <= cols {
            Side::Left
        } else {
            Side::Right
        };
        let result = (|| {
            let dec = plumage::svd(&g)?;
            let plan = sampler::compute_sampling_probabilities(&dec.sigma, k, 1e-12)?;
            let proj = sampler::sample_projections(&dec, &plan, k, side, &mut (*rng).inner)?;
            estimator::estimate(&g, &proj)
        })();
        match result {
            Ok(est) => {
                std::slice::from_raw_parts_mut(out, rows * cols).copy_from_slice(est.data());
                PlumageStatus::Ok
            }
            Err(err) => status_of(&err),
        }
    })
}

/// Mean cosine of the principal angles between two column-stacked orthonormal
/// bases (`ambient x r1` and `ambient x r2`, row-major), truncated to
/// `truncation_rank` leading columns.
///
/// # Safety
/// Basis buffers must hold `ambient * r` doubles each; `out_rho` valid.
#[no_mangle]
pub unsafe extern "C" fn plumage_mean_cosine_principal_angle(
    basis1: *const f64,
    r1: usize,
    basis2: *const f64,
    r2: usize,
    ambient: usize,
    truncation_rank: usize,
    out_rho: *mut f64,
) -> PlumageStatus {
    guard(|| {
        if basis1.is_null() || basis2.is_null() || out_rho.is_null() {
            set_error("null pointer");
            return PlumageStatus::NullPointer;
        }
        let wrap = |ptr: *const f64, r: usize| -> Result<LowRankProjection, plumage::Error> {
            let data = std::slice::from_raw_parts(ptr, ambient * r).to_vec();
            Ok(LowRankProjection {
                kind: EstimatorKind::Plumage,
                side: Side::Left,
                basis: Matrix::from_vec(ambient, r, data)?,
                d_scale: vec![1.0; r],
                sampled_indices: (0..r).collect(),
            })
        };
        let result = (|| {
            let p1 = wrap(basis1, r1)?;
            let p2 = wrap(basis2, r2)?;
            interval::mean_cosine_principal_angle(&p1, &p2, truncation_rank)
        })();
        match result {
            Ok(rho) => {
                *out_rho = rho;
                PlumageStatus::Ok
            }
            Err(err) => status_of(&err),
        }
    })
}

/// Hysteresis interval update; see the optimizer configuration for threshold
/// semantics.
///
/// # Safety
/// `out_tau` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plumage_update_interval(
    tau: usize,
    rho: f64,
    tau_min: usize,
    tau_max: usize,
    gamma_reset: f64,
    gamma_shrink: f64,
    gamma_expand: f64,
    out_tau: *mut usize,
) -> PlumageStatus {
    guard(|| {
        if out_tau.is_null() {
            set_error("null pointer");
            return PlumageStatus::NullPointer;
        }
        let cfg = IntervalConfig {
            tau_min,
            tau_max,
            tau_initial: tau.clamp(tau_min, tau_max),
            gamma_reset,
            gamma_shrink,
            gamma_expand,
            truncation_rank: 64,
        };
        if let Err(err) = cfg.validate() {
            return status_of(&err);
        }
        *out_tau = interval::update_interval(tau, rho, &cfg);
        PlumageStatus::Ok
    })
}

// --- optimizer ---------------------------------------------------------------

/// Fills `out` with defaults for the given rank, decomposition interval, and
/// learning rate: Adam family, sampled estimator, full realignment.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plumage_optimizer_config_default(
    rank: usize,
    svd_interval: usize,
    eta: f64,
    out: *mut PlumageOptimizerConfig,
) -> PlumageStatus {
    guard(|| {
        if out.is_null() {
            set_error("null pointer");
            return PlumageStatus::NullPointer;
        }
        let hp = OptimizerHyperparams::new(eta, rank, svd_interval);
        *out = PlumageOptimizerConfig {
            eta: hp.eta,
            beta1: hp.beta1,
            beta2: hp.beta2,
            epsilon: hp.epsilon,
            rank: hp.rank,
            svd_interval: hp.svd_interval,
            resample_interval: hp.resample_interval,
            realign: PlumageRealign::FirstAndSecond,
            estimator: PlumageEstimator::Sampled,
            family: PlumageFamily::Adam,
            adaptive_interval: 0,
            tau_min: hp.interval.tau_min,
            tau_max: hp.interval.tau_max,
            truncation_rank: hp.interval.truncation_rank,
            gamma_reset: hp.interval.gamma_reset,
            gamma_shrink: hp.interval.gamma_shrink,
            gamma_expand: hp.interval.gamma_expand,
            alpha: hp.alpha,
        };
        PlumageStatus::Ok
    })
}

fn hyperparams_from(config: &PlumageOptimizerConfig) -> OptimizerHyperparams {
    OptimizerHyperparams {
        eta: config.eta,
        beta1: config.beta1,
        beta2: config.beta2,
        epsilon: config.epsilon,
        rank: config.rank,
        svd_interval: config.svd_interval,
        resample_interval: config.resample_interval,
        realign_mode: match config.realign {
            PlumageRealign::None => RealignMode::None,
            PlumageRealign::FirstMoment => RealignMode::Mp,
            PlumageRealign::FirstAndSecond => RealignMode::Smp,
        },
        adaptive_interval: config.adaptive_interval != 0,
        interval: IntervalConfig {
            tau_min: config.tau_min,
            tau_max: config.tau_max,
            tau_initial: config.svd_interval,
            gamma_reset: config.gamma_reset,
            gamma_shrink: config.gamma_shrink,
            gamma_expand: config.gamma_expand,
            truncation_rank: config.truncation_rank,
        },
        alpha: config.alpha,
        sampling_eps: 1e-12,
    }
}

/// Creates a projected optimizer for one `rows x cols` weight. The projection
/// side is chosen from the shape; `seed` fixes the sampling stream.
///
/// # Safety
/// `config` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn plumage_optimizer_new(
    rows: usize,
    cols: usize,
    config: *const PlumageOptimizerConfig,
    seed: u64,
    out: *mut *mut PlumageOptimizer,
) -> PlumageStatus {
    guard(|| {
        if config.is_null() || out.is_null() {
            set_error("null pointer");
            return PlumageStatus::NullPointer;
        }
        let config = &*config;
        let hp = hyperparams_from(config);
        if let Err(err) = hp.validate() {
            return status_of(&err);
        }
        let kind = match config.estimator {
            PlumageEstimator::Sampled => EstimatorKind::Plumage,
            PlumageEstimator::TopK => EstimatorKind::TopkDeterministic,
            PlumageEstimator::Gaussian => EstimatorKind::GaussianRandom,
        };
        let state = match config.family {
            PlumageFamily::Adam => LowRankOptimizerState::new_adam(rows, cols, kind, &hp),
            PlumageFamily::Sgdm => LowRankOptimizerState::new_sgdm(rows, cols, kind, &hp),
        };
        match state {
            Ok(state) => {
                *out = Box::into_raw(Box::new(PlumageOptimizer {
                    state,
                    hp,
                    rng: ChaCha8Rng::seed_from_u64(seed),
                    rows,
                    cols,
                    family: config.family,
                }));
                PlumageStatus::Ok
            }
            Err(err) => status_of(&err),
        }
    })
}

/// Applies one optimizer step, updating `weights` in place from `gradient`
/// (both row-major `rows x cols`, matching the constructor).
///
/// # Safety
/// `weights` and `gradient` must each point to `rows * cols` doubles.
#[no_mangle]
pub unsafe extern "C" fn plumage_optimizer_step(
    opt: *mut PlumageOptimizer,
    weights: *mut f64,
    gradient: *const f64,
    rows: usize,
    cols: usize,
) -> PlumageStatus {
    guard(|| {
        if opt.is_null() || weights.is_null() || gradient.is_null() {
            set_error("null pointer");
            return PlumageStatus::NullPointer;
        }
        let opt = &mut *opt;
        if rows != opt.rows || cols != opt.cols {
            set_error(&format!(
                "optimizer was built for {}x{}, got {rows}x{cols}",
                opt.rows, opt.cols
            ));
            return PlumageStatus::DimensionMismatch;
        }
        let g_data = std::slice::from_raw_parts(gradient, rows * cols).to_vec();
        let g = match Matrix::from_vec(rows, cols, g_data) {
            Ok(g) => g,
            Err(err) => return status_of(&err),
        };
        let w_slice = std::slice::from_raw_parts_mut(weights, rows * cols);
        let mut w = Matrix::from_fn(rows, cols, |i, j| w_slice[i * cols + j]);
        let result = match opt.family {
            PlumageFamily::Adam => {
                low_rank_adam_step(&mut w, &g, &mut opt.state, &opt.hp, &mut opt.rng)
            }
            PlumageFamily::Sgdm => {
                low_rank_sgdm_step(&mut w, &g, &mut opt.state, &opt.hp, &mut opt.rng)
            }
        };
        match result {
            Ok(_) => {
                w_slice.copy_from_slice(w.data());
                PlumageStatus::Ok
            }
            Err(err) => status_of(&err),
        }
    })
}

/// Updates the learning rate (for external schedules).
///
/// # Safety
/// `opt` must come from [`plumage_optimizer_new`].
#[no_mangle]
pub unsafe extern "C" fn plumage_optimizer_set_eta(
    opt: *mut PlumageOptimizer,
    eta: f64,
) -> PlumageStatus {
    guard(|| {
        if opt.is_null() {
            set_error("null pointer");
            return PlumageStatus::NullPointer;
        }
        if !(eta > 0.0) {
            set_error(&format!("learning rate must be positive, got {eta}"));
            return PlumageStatus::InvalidArgument;
        }
        (*opt).hp.eta = eta;
        PlumageStatus::Ok
    })
}

/// Completed steps.
///
/// # Safety
/// `opt` must come from [`plumage_optimizer_new`].
#[no_mangle]
pub unsafe extern "C" fn plumage_optimizer_step_count(opt: *const PlumageOptimizer) -> u64 {
    if opt.is_null() {
        return 0;
    }
    (*opt).state.t
}

/// Current decomposition interval (changes only when the adaptive controller
/// is enabled).
///
/// # Safety
/// `opt` must come from [`plumage_optimizer_new`].
#[no_mangle]
pub unsafe extern "C" fn plumage_optimizer_current_interval(opt: *const PlumageOptimizer) -> usize {
    if opt.is_null() {
        return 0;
    }
    (*opt).state.tau_current
}

/// # Safety
/// `opt` must come from [`plumage_optimizer_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn plumage_optimizer_free(opt: *mut PlumageOptimizer) {
    if !opt.is_null() {
        drop(Box::from_raw(opt));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn plan_round_trip() {
        unsafe {
            let sigma = [4.0, 2.0, 1.0, 1.0];
            let mut plan: *mut PlumagePlan = ptr::null_mut();
            let status = plumage_plan_new(sigma.as_ptr(), 4, 2, 1e-12, &mut plan);
            assert_eq!(status, PlumageStatus::Ok);
            assert_eq!(plumage_plan_deterministic_rank(plan), 1);
            let mut p = [0.0; 4];
            assert_eq!(
                plumage_plan_probabilities(plan, p.as_mut_ptr(), 4),
                PlumageStatus::Ok
            );
            for (got, want) in p.iter().zip([1.0, 0.5, 0.25, 0.25]) {
                assert!((got - want).abs() < 1e-12);
            }
            let variance = plumage_analytic_variance(sigma.as_ptr(), p.as_ptr(), 4);
            assert!((variance - 10.0).abs() < 1e-12);
            plumage_plan_free(plan);
        }
    }

    #[test]
    fn plan_rejects_bad_input() {
        unsafe {
            let sigma = [1.0, 2.0]; // ascending
            let mut plan: *mut PlumagePlan = ptr::null_mut();
            let status = plumage_plan_new(sigma.as_ptr(), 2, 1, 1e-12, &mut plan);
            assert_eq!(status, PlumageStatus::InvalidArgument);
            let msg = std::ffi::CStr::from_ptr(plumage_last_error_message());
            assert!(msg.to_string_lossy().contains("descending"));
            let status = plumage_plan_new(ptr::null(), 2, 1, 1e-12, &mut plan);
            assert_eq!(status, PlumageStatus::NullPointer);
        }
    }

    #[test]
    fn sample_indices_deterministic_for_seed() {
        unsafe {
            let sigma = [4.0, 2.0, 1.0, 1.0];
            let mut plan: *mut PlumagePlan = ptr::null_mut();
            plumage_plan_new(sigma.as_ptr(), 4, 2, 1e-12, &mut plan);
            let draw = |seed: u64| {
                let rng = plumage_rng_new(seed);
                let mut idx = [0usize; 2];
                let status = plumage_sample_indices(plan, rng, idx.as_mut_ptr(), 2);
                assert_eq!(status, PlumageStatus::Ok);
                plumage_rng_free(rng);
                idx
            };
            assert_eq!(draw(9), draw(9));
            let idx = draw(10);
            assert_eq!(idx[0], 0, "leading index always included");
            assert!(idx[1] >= 1 && idx[1] < 4);
            plumage_plan_free(plan);
        }
    }

    #[test]
    fn estimate_is_exact_at_full_rank() {
        unsafe {
            let rows = 3;
            let cols = 4;
            let g: Vec<f64> = (0..rows * cols)
                .map(|i| ((i * 7 % 5) as f64) - 2.0)
                .collect();
            let mut out = vec![0.0; rows * cols];
            let rng = plumage_rng_new(3);
            let status = plumage_estimate(g.as_ptr(), rows, cols, 3, rng, out.as_mut_ptr());
            assert_eq!(status, PlumageStatus::Ok);
            for (a, b) in g.iter().zip(&out) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
            plumage_rng_free(rng);
        }
    }

    #[test]
    fn principal_angle_and_interval() {
        unsafe {
            let e1 = [1.0, 0.0];
            let mid = [1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()];
            let mut rho = 0.0;
            let status = plumage_mean_cosine_principal_angle(
                e1.as_ptr(),
                1,
                mid.as_ptr(),
                1,
                2,
                64,
                &mut rho,
            );
            assert_eq!(status, PlumageStatus::Ok);
            assert!((rho - 1.0 / 2f64.sqrt()).abs() < 1e-9);

            let mut tau = 0usize;
            let status = plumage_update_interval(400, 0.25, 200, 1000, 0.3, 0.4, 0.6, &mut tau);
            assert_eq!(status, PlumageStatus::Ok);
            assert_eq!(tau, 200);
        }
    }

    #[test]
    fn optimizer_matches_library_stepper() {
        unsafe {
            let (rows, cols) = (4, 6);
            let mut config = std::mem::MaybeUninit::<PlumageOptimizerConfig>::uninit();
            assert_eq!(
                plumage_optimizer_config_default(2, 4, 0.05, config.as_mut_ptr()),
                PlumageStatus::Ok
            );
            let config = config.assume_init();
            let mut opt: *mut PlumageOptimizer = ptr::null_mut();
            assert_eq!(
                plumage_optimizer_new(rows, cols, &config, 11, &mut opt),
                PlumageStatus::Ok
            );

            // Reference path through the Rust API with the same seed.
            let hp = hyperparams_from(&config);
            let mut state =
                LowRankOptimizerState::new_adam(rows, cols, EstimatorKind::Plumage, &hp).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);

            let mut w_ffi: Vec<f64> = (0..rows * cols).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut w_ref = Matrix::from_vec(rows, cols, w_ffi.clone()).unwrap();
            for step in 0..10 {
                let g: Vec<f64> = (0..rows * cols)
                    .map(|i| ((i + step) as f64 * 0.61).cos())
                    .collect();
                let status =
                    plumage_optimizer_step(opt, w_ffi.as_mut_ptr(), g.as_ptr(), rows, cols);
                assert_eq!(status, PlumageStatus::Ok);
                let g_ref = Matrix::from_vec(rows, cols, g).unwrap();
                low_rank_adam_step(&mut w_ref, &g_ref, &mut state, &hp, &mut rng).unwrap();
            }
            assert_eq!(plumage_optimizer_step_count(opt), 10);
            for (a, b) in w_ffi.iter().zip(w_ref.data()) {
                assert_eq!(a, b, "FFI and library trajectories must be identical");
            }
            plumage_optimizer_free(opt);
        }
    }

    #[test]
    fn optimizer_rejects_mismatched_shapes_and_non_finite() {
        unsafe {
            let mut config = std::mem::MaybeUninit::<PlumageOptimizerConfig>::uninit();
            plumage_optimizer_config_default(2, 4, 0.05, config.as_mut_ptr());
            let config = config.assume_init();
            let mut opt: *mut PlumageOptimizer = ptr::null_mut();
            assert_eq!(
                plumage_optimizer_new(4, 6, &config, 0, &mut opt),
                PlumageStatus::Ok
            );
            let mut w = vec![0.0; 24];
            let g = [0.0; 12];
            assert_eq!(
                plumage_optimizer_step(opt, w.as_mut_ptr(), g.as_ptr(), 3, 4),
                PlumageStatus::DimensionMismatch
            );
            let mut g_bad = [0.0; 24];
            g_bad[5] = f64::NAN;
            assert_eq!(
                plumage_optimizer_step(opt, w.as_mut_ptr(), g_bad.as_ptr(), 4, 6),
                PlumageStatus::NonFinite
            );
            plumage_optimizer_free(opt);

            // Rank larger than min dimension fails at construction.
            let mut bad_cfg = config;
            bad_cfg.rank = 10;
            let status = plumage_optimizer_new(4, 6, &bad_cfg, 0, &mut opt);
            assert_eq!(status, PlumageStatus::InvalidArgument);
        }
    }
}
