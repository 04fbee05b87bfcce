//! Stateful per-layer optimizers: full-rank Adam/SGDM and their projected
//! low-rank variants with moment realignment across projection updates.
//!
//! A low-rank layer refreshes its projection on two cadences: every
//! `svd_interval` steps a fresh decomposition of the current gradient is
//! taken (possibly adapting the interval from the measured subspace overlap),
//! and every `resample_interval <= svd_interval` steps a new index set is
//! drawn from the cached spectrum without recomputing it. On every projection
//! change the first moment is carried over as `B M` with `B = P_newᵀ P_old`
//! and the second moment as `B∘² V`, which keeps it entrywise nonnegative.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{expand_scaled, gaussian_projection, project};
use crate::interval::{mean_cosine_principal_angle, update_interval, IntervalConfig};
use crate::linalg::{svd, Matrix};
use crate::sampler::{
    compute_sampling_probabilities, projection_from_basis, sample_indices, EstimatorKind,
    LowRankProjection, SamplingPlan, Side,
};

/// How optimizer statistics are carried across a projection update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum RealignMode {
    /// Keep the raw projected moments (they silently change basis).
    #[serde(rename = "none")]
    #[value(name = "none")]
    None,
    /// Realign the first moment only.
    #[serde(rename = "mp")]
    #[value(name = "mp")]
    Mp,
    /// Realign the first moment and the diagonal-approximated second moment.
    #[serde(rename = "s_mp")]
    #[value(name = "s_mp")]
    Smp,
}

/// Hyperparameters shared by the full-rank and low-rank steppers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHyperparams {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Target projection rank `k`.
    pub rank: usize,
    /// Steps between gradient decompositions (tau).
    pub svd_interval: usize,
    /// Steps between projection redraws from the cached spectrum (kappa <= tau).
    pub resample_interval: usize,
    pub realign_mode: RealignMode,
    pub adaptive_interval: bool,
    pub interval: IntervalConfig,
    /// Learning-rate scale applied only to deterministic top-k layers.
    pub alpha: f64,
    /// Clipping floor for tail sums when computing inclusion probabilities.
    pub sampling_eps: f64,
}

impl OptimizerHyperparams {
    pub fn new(eta: f64, rank: usize, svd_interval: usize) -> Self {
        OptimizerHyperparams {
            eta,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            rank,
            svd_interval,
            resample_interval: svd_interval,
            realign_mode: RealignMode::Smp,
            adaptive_interval: false,
            interval: IntervalConfig::from_schedule(svd_interval, None),
            alpha: 1.0,
            sampling_eps: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperparameter(msg));
        if !(self.eta > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.eta));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.rank == 0 {
            return bad("rank must be positive".into());
        }
        if self.svd_interval == 0 {
            return bad("svd_interval must be positive".into());
        }
        if self.resample_interval == 0 || self.resample_interval > self.svd_interval {
            return bad(format!(
                "resample_interval must lie in [1, svd_interval]; got {} with svd_interval {}",
                self.resample_interval, self.svd_interval
            ));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.sampling_eps > 0.0) {
            return bad(format!(
                "sampling_eps must be positive, got {}",
                self.sampling_eps
            ));
        }
        self.interval.validate()?;
        if self.adaptive_interval
            && !(self.interval.tau_min <= self.svd_interval
                && self.svd_interval <= self.interval.tau_max)
        {
            return bad(format!(
                "svd_interval {} outside adaptive bounds [{}, {}]",
                self.svd_interval, self.interval.tau_min, self.interval.tau_max
            ));
        }
        Ok(())
    }
}

/// Full-rank Adam state for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullAdamState {
    pub m: Matrix,
    pub v: Matrix,
    pub t: u64,
}

impl FullAdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        FullAdamState {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            t: 0,
        }
    }
}

/// Full-rank SGD-with-momentum state for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullSgdmState {
    pub m: Matrix,
    pub t: u64,
}

impl FullSgdmState {
    pub fn new(rows: usize, cols: usize) -> Self {
        FullSgdmState {
            m: Matrix::zeros(rows, cols),
            t: 0,
        }
    }
}

/// Per-layer state of a projected optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankOptimizerState {
    pub kind: EstimatorKind,
    pub side: Side,
    /// Projected first moment: `k x n` (left) or `m x k` (right).
    pub m: Matrix,
    /// Projected second moment; absent for SGDM.
    pub v: Option<Matrix>,
    pub proj: LowRankProjection,
    /// Column-stacked singular vectors of the last decomposition (`ambient x d`).
    pub cached_basis: Matrix,
    pub cached_sigma: Vec<f64>,
    pub plan: SamplingPlan,
    pub t: u64,
    pub tau_current: usize,
    pub since_svd: usize,
    pub since_resample: usize,
}

impl LowRankOptimizerState {
    pub fn new_adam(
        rows: usize,
        cols: usize,
        kind: EstimatorKind,
        hp: &OptimizerHyperparams,
    ) -> Result<Self> {
        Self::new(rows, cols, kind, hp, true)
    }

    pub fn new_sgdm(
        rows: usize,
        cols: usize,
        kind: EstimatorKind,
        hp: &OptimizerHyperparams,
    ) -> Result<Self> {
        Self::new(rows, cols, kind, hp, false)
    }

    fn new(
        rows: usize,
        cols: usize,
        kind: EstimatorKind,
        hp: &OptimizerHyperparams,
        with_second_moment: bool,
    ) -> Result<Self> {
        let d = rows.min(cols);
        let k = hp.rank;
        if k == 0 || k > d {
            return Err(Error::RankOutOfRange { k, d });
        }
        // Project the shorter dimension so the stored basis is as small as possible.
        let side = if rows <= cols {
            Side::Left
        } else {
            Side::Right
        };
        let ambient = match side {
            Side::Left => rows,
            Side::Right => cols,
        };
        let (m_rows, m_cols) = match side {
            Side::Left => (k, cols),
            Side::Right => (rows, k),
        };
        let mut proj = LowRankProjection::canonical(ambient, k, side);
        proj.kind = kind;
        // Placeholder spectrum; the first step always recomputes it.
        let plan = SamplingPlan {
            r_star: k,
            p: (0..d).map(|i| if i < k { 1.0 } else { 0.0 }).collect(),
            k,
        };
        Ok(LowRankOptimizerState {
            kind,
            side,
            m: Matrix::zeros(m_rows, m_cols),
            v: with_second_moment.then(|| Matrix::zeros(m_rows, m_cols)),
            proj,
            cached_basis: Matrix::from_fn(ambient, d, |i, j| if i == j { 1.0 } else { 0.0 }),
            cached_sigma: vec![0.0; d],
            plan,
            t: 0,
            tau_current: hp.svd_interval,
            since_svd: 0,
            since_resample: 0,
        })
    }
}

/// What happened during one projected step, for telemetry sinks.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepTelemetry {
    pub svd_refreshed: bool,
    pub resampled: bool,
    pub rho: Option<f64>,
    pub r_star: Option<usize>,
    pub tau: usize,
}

fn check_gradient(w: &Matrix, g: &Matrix) -> Result<()> {
    if w.shape() != g.shape() {
        return Err(Error::DimensionMismatch {
            left_rows: w.rows(),
            left_cols: w.cols(),
            right_rows: g.rows(),
            right_cols: g.cols(),
        });
    }
    if !g.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    Ok(())
}

fn bias_correction(beta1: f64, beta2: f64, t: u64) -> f64 {
    let t = t.min(i32::MAX as u64) as i32;
    (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t))
}

/// One full-rank Adam step:
/// `M <- b1 M + (1-b1) G`, `V <- b2 V + (1-b2) G∘²`,
/// `W <- W - eta * sqrt(1-b2^t)/(1-b1^t) * M / (sqrt(V) + eps)`.
pub fn adam_step_full(
    w: &mut Matrix,
    g: &Matrix,
    state: &mut FullAdamState,
    hp: &OptimizerHyperparams,
) -> Result<()> {
    check_gradient(w, g)?;
    let t = state.t + 1;
    let c = bias_correction(hp.beta1, hp.beta2, t);
    for (i, (wi, gi)) in w.data_mut().iter_mut().zip(g.data()).enumerate() {
        let m = hp.beta1 * state.m.data()[i] + (1.0 - hp.beta1) * gi;
        let v = hp.beta2 * state.v.data()[i] + (1.0 - hp.beta2) * gi * gi;
        state.m.data_mut()[i] = m;
        state.v.data_mut()[i] = v;
        let z = c * (m / (v.sqrt() + hp.epsilon));
        *wi -= hp.eta * z;
    }
    if !w.is_finite() {
        return Err(Error::NonFiniteUpdate);
    }
    state.t = t;
    Ok(())
}

/// One full-rank SGDM step: `M <- b1 M + (1-b1) G`, `W <- W - eta M`.
pub fn sgdm_step_full(
    w: &mut Matrix,
    g: &Matrix,
    state: &mut FullSgdmState,
    hp: &OptimizerHyperparams,
) -> Result<()> {
    check_gradient(w, g)?;
    for (i, (wi, gi)) in w.data_mut().iter_mut().zip(g.data()).enumerate() {
        let m = hp.beta1 * state.m.data()[i] + (1.0 - hp.beta1) * gi;
        state.m.data_mut()[i] = m;
        *wi -= hp.eta * m;
    }
    if !w.is_finite() {
        return Err(Error::NonFiniteUpdate);
    }
    state.t += 1;
    Ok(())
}

/// The basis-change operator between two projections of the same side,
/// oriented so it applies directly to the projected moment: for left
/// projections `B = P_newᵀ P_old` acts as `M' = B M`; for right projections
/// `B = P_old P_newᵀ` acts as `M' = M B`. `‖B‖₂ <= 1` for orthonormal inputs.
pub fn realignment_operator(
    p_old: &LowRankProjection,
    p_new: &LowRankProjection,
) -> Result<Matrix> {
    if p_old.side != p_new.side {
        return Err(Error::SideMismatch);
    }
    if p_old.ambient_dim() != p_new.ambient_dim() {
        return Err(Error::AmbientMismatch {
            left: p_old.ambient_dim(),
            right: p_new.ambient_dim(),
        });
    }
    match p_old.side {
        Side::Left => p_new.basis.tr_matmul(&p_old.basis),
        Side::Right => p_old.basis.matmul_tr(&p_new.basis),
    }
}

/// Carries a projected first moment into a new projection's coordinates.
pub fn realign_first_moment(
    m_lr: &Matrix,
    p_old: &LowRankProjection,
    p_new: &LowRankProjection,
) -> Result<Matrix> {
    let b = realignment_operator(p_old, p_new)?;
    match p_old.side {
        Side::Left => b.matmul(m_lr),
        Side::Right => m_lr.matmul(&b),
    }
}

/// Carries a projected second moment across a basis change as `B∘² V`
/// (left-side orientation). The diagonal approximation keeps every entry
/// nonnegative, unlike the naive `B V`.
pub fn realign_second_moment(v_lr: &Matrix, b: &Matrix) -> Result<Matrix> {
    ensure_nonnegative(v_lr)?;
    b.map(|x| x * x).matmul(v_lr)
}

fn ensure_nonnegative(v: &Matrix) -> Result<()> {
    for i in 0..v.rows() {
        for (j, &x) in v.row(i).iter().enumerate() {
            if x < 0.0 {
                return Err(Error::NegativeSecondMoment {
                    row: i,
                    col: j,
                    value: x,
                });
            }
        }
    }
    Ok(())
}

fn realign_v_oriented(v: &Matrix, b: &Matrix, side: Side) -> Result<Matrix> {
    ensure_nonnegative(v)?;
    let b_sq = b.map(|x| x * x);
    match side {
        Side::Left => b_sq.matmul(v),
        Side::Right => v.matmul(&b_sq),
    }
}

fn realign_state_moments(
    state: &mut LowRankOptimizerState,
    new_proj: &LowRankProjection,
    hp: &OptimizerHyperparams,
) -> Result<()> {
    match hp.realign_mode {
        RealignMode::None => {}
        RealignMode::Mp => {
            state.m = realign_first_moment(&state.m, &state.proj, new_proj)?;
        }
        RealignMode::Smp => {
            let b = realignment_operator(&state.proj, new_proj)?;
            state.m = match state.side {
                Side::Left => b.matmul(&state.m)?,
                Side::Right => state.m.matmul(&b)?,
            };
            if let Some(v) = state.v.take() {
                state.v = Some(realign_v_oriented(&v, &b, state.side)?);
            }
        }
    }
    Ok(())
}

/// Draws a sampled projection, falling back to the deterministic leading
/// directions (unit scale) when the spectrum has no stochastic tail mass to
/// spread — e.g. a gradient whose rank is at or below `k`.
fn draw_sampled_projection(
    basis_columns: &Matrix,
    plan: &SamplingPlan,
    k: usize,
    side: Side,
    rng: &mut impl Rng,
) -> Result<LowRankProjection> {
    if (plan.total_mass() - k as f64).abs() <= 1e-6 {
        let indices = sample_indices(&plan.p, k, rng)?;
        projection_from_basis(basis_columns, plan, &indices, side)
    } else {
        let indices: Vec<usize> = (0..k).collect();
        let basis = match side {
            Side::Left => basis_columns.select_columns(&indices),
            Side::Right => basis_columns.select_columns(&indices).transpose(),
        };
        Ok(LowRankProjection {
            kind: EstimatorKind::Plumage,
            side,
            basis,
            d_scale: vec![1.0; k],
            sampled_indices: indices,
        })
    }
}

fn wrap_basis_as_projection(basis_columns: Matrix, side: Side) -> LowRankProjection {
    let k = basis_columns.cols();
    let basis = match side {
        Side::Left => basis_columns,
        Side::Right => basis_columns.transpose(),
    };
    LowRankProjection {
        kind: EstimatorKind::Plumage,
        side,
        basis,
        d_scale: vec![1.0; k],
        sampled_indices: (0..k).collect(),
    }
}

fn refresh_from_decomposition(
    state: &mut LowRankOptimizerState,
    g: &Matrix,
    hp: &OptimizerHyperparams,
    rng: &mut impl Rng,
    tel: &mut StepTelemetry,
) -> Result<()> {
    tel.svd_refreshed = true;
    let first = state.t == 0;
    match state.kind {
        EstimatorKind::Plumage | EstimatorKind::TopkDeterministic => {
            let dec = svd(g)?;
            let sigma = dec.sigma;
            let plan = compute_sampling_probabilities(&sigma, hp.rank, hp.sampling_eps)?;
            let basis_columns = match state.side {
                Side::Left => dec.u,
                Side::Right => dec.v,
            };
            let new_proj = match state.kind {
                EstimatorKind::Plumage => {
                    draw_sampled_projection(&basis_columns, &plan, hp.rank, state.side, rng)?
                }
                _ => {
                    let indices: Vec<usize> = (0..hp.rank).collect();
                    let mut p = wrap_basis_as_projection(
                        basis_columns.select_columns(&indices),
                        state.side,
                    );
                    p.kind = EstimatorKind::TopkDeterministic;
                    p
                }
            };
            if !first {
                // Overlap between the outgoing sampled projection and the fresh
                // (unsampled) leading singular vectors.
                let trunc = hp.interval.truncation_rank;
                let fresh = wrap_basis_as_projection(
                    basis_columns.leading_columns(trunc.min(basis_columns.cols())),
                    state.side,
                );
                let rho = mean_cosine_principal_angle(&state.proj, &fresh, trunc)?;
                tel.rho = Some(rho);
                if hp.adaptive_interval {
                    state.tau_current = update_interval(state.tau_current, rho, &hp.interval);
                }
                realign_state_moments(state, &new_proj, hp)?;
            }
            tel.r_star = Some(plan.r_star);
            state.cached_sigma = sigma;
            state.cached_basis = basis_columns;
            state.plan = plan;
            state.proj = new_proj;
        }
        EstimatorKind::GaussianRandom => {
            let new_proj = gaussian_projection(state.proj.ambient_dim(), hp.rank, state.side, rng)?;
            if !first {
                realign_state_moments(state, &new_proj, hp)?;
            }
            state.proj = new_proj;
        }
    }
    state.since_svd = 0;
    state.since_resample = 0;
    tel.tau = state.tau_current;
    Ok(())
}

fn resample_from_cache(
    state: &mut LowRankOptimizerState,
    hp: &OptimizerHyperparams,
    rng: &mut impl Rng,
    tel: &mut StepTelemetry,
) -> Result<()> {
    match state.kind {
        EstimatorKind::Plumage => {
            let new_proj = draw_sampled_projection(
                &state.cached_basis,
                &state.plan,
                hp.rank,
                state.side,
                rng,
            )?;
            realign_state_moments(state, &new_proj, hp)?;
            state.proj = new_proj;
            tel.resampled = true;
        }
        // The top-k projection is a deterministic function of the cached
        // spectrum, so redrawing changes nothing.
        EstimatorKind::TopkDeterministic => {}
        EstimatorKind::GaussianRandom => {
            let new_proj = gaussian_projection(state.proj.ambient_dim(), hp.rank, state.side, rng)?;
            realign_state_moments(state, &new_proj, hp)?;
            state.proj = new_proj;
            tel.resampled = true;
        }
    }
    state.since_resample = 0;
    Ok(())
}

fn low_rank_step(
    w: &mut Matrix,
    g: &Matrix,
    state: &mut LowRankOptimizerState,
    hp: &OptimizerHyperparams,
    rng: &mut impl Rng,
    adaptive_moments: bool,
) -> Result<StepTelemetry> {
    check_gradient(w, g)?;
    if adaptive_moments && state.v.is_none() {
        return Err(Error::InvalidHyperparameter(
            "adam step on a state without a second moment".into(),
        ));
    }
    let mut tel = StepTelemetry {
        tau: state.tau_current,
        ..StepTelemetry::default()
    };

    let svd_event = state.t == 0 || state.since_svd >= state.tau_current;
    if svd_event {
        refresh_from_decomposition(state, g, hp, rng, &mut tel)?;
    } else if state.since_resample >= hp.resample_interval {
        resample_from_cache(state, hp, rng, &mut tel)?;
    }

    let r = project(g, &state.proj)?;
    let t = state.t + 1;
    let z = if adaptive_moments {
        let c = bias_correction(hp.beta1, hp.beta2, t);
        let v = state.v.as_mut().expect("checked above");
        let mut z = Matrix::zeros(r.rows(), r.cols());
        for (i, &ri) in r.data().iter().enumerate() {
            let m = hp.beta1 * state.m.data()[i] + (1.0 - hp.beta1) * ri;
            let vi = hp.beta2 * v.data()[i] + (1.0 - hp.beta2) * ri * ri;
            state.m.data_mut()[i] = m;
            v.data_mut()[i] = vi;
            z.data_mut()[i] = c * (m / (vi.sqrt() + hp.epsilon));
        }
        z
    } else {
        for (i, &ri) in r.data().iter().enumerate() {
            let m = hp.beta1 * state.m.data()[i] + (1.0 - hp.beta1) * ri;
            state.m.data_mut()[i] = m;
        }
        state.m.clone()
    };
    let delta = expand_scaled(&z, &state.proj)?;
    let lr = if state.kind == EstimatorKind::TopkDeterministic {
        hp.eta * hp.alpha
    } else {
        hp.eta
    };
    w.add_assign_scaled(&delta, -lr);
    if !w.is_finite() {
        return Err(Error::NonFiniteUpdate);
    }
    state.t = t;
    state.since_svd += 1;
    state.since_resample += 1;
    Ok(tel)
}

/// One projected Adam step (any estimator kind; the flagship configuration is
/// the sampled minimum-variance projection).
pub fn low_rank_adam_step(
    w: &mut Matrix,
    g: &Matrix,
    state: &mut LowRankOptimizerState,
    hp: &OptimizerHyperparams,
    rng: &mut impl Rng,
) -> Result<StepTelemetry> {
    low_rank_step(w, g, state, hp, rng, true)
}

/// One projected SGDM step: `M <- b1 M + (1-b1) Pᵀ G`, `W <- W - eta P D⁻¹ M`.
pub fn low_rank_sgdm_step(
    w: &mut Matrix,
    g: &Matrix,
    state: &mut LowRankOptimizerState,
    hp: &OptimizerHyperparams,
    rng: &mut impl Rng,
) -> Result<StepTelemetry> {
    low_rank_step(w, g, state, hp, rng, false)
}
