//! Experiment configuration: one declarative TOML file, every field
//! overridable from the CLI.

use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::harness::RunError;
use crate::interval::IntervalConfig;
use crate::optim::{OptimizerHyperparams, RealignMode};

/// Learning rates swept when confirming a schedule choice.
pub const LR_SWEEP_GRID: [f64; 6] = [0.05, 0.01, 0.005, 0.0025, 0.001, 0.0075];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[value(name = "synthetic_lowrank_regression")]
    SyntheticLowrankRegression,
    #[value(name = "mlp_classification")]
    MlpClassification,
    #[value(name = "quadratic_bowl")]
    QuadraticBowl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[value(name = "adam")]
    Adam,
    #[value(name = "sgdm")]
    Sgdm,
    #[value(name = "plumage_adam")]
    PlumageAdam,
    #[value(name = "plumage_sgdm")]
    PlumageSgdm,
    #[value(name = "galore_topk_adam")]
    GaloreTopkAdam,
    #[value(name = "gaussian_adam")]
    GaussianAdam,
}

impl OptimizerKind {
    /// Whether 2-D weights get projected treatment under this optimizer.
    pub fn is_low_rank(self) -> bool {
        !matches!(self, OptimizerKind::Adam | OptimizerKind::Sgdm)
    }

    /// Whether the optimizer tracks a second moment.
    pub fn is_adaptive(self) -> bool {
        !matches!(self, OptimizerKind::Sgdm | OptimizerKind::PlumageSgdm)
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgdm => "sgdm",
            OptimizerKind::PlumageAdam => "plumage_adam",
            OptimizerKind::PlumageSgdm => "plumage_sgdm",
            OptimizerKind::GaloreTopkAdam => "galore_topk_adam",
            OptimizerKind::GaussianAdam => "gaussian_adam",
        }
    }
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::SyntheticLowrankRegression => "synthetic_lowrank_regression",
            TaskKind::MlpClassification => "mlp_classification",
            TaskKind::QuadraticBowl => "quadratic_bowl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[value(name = "constant")]
    Constant,
    #[value(name = "cosine_with_floor")]
    CosineWithFloor,
}

/// Fraction of the peak learning rate the cosine schedule decays to.
pub const COSINE_FLOOR_FRAC: f64 = 0.1;

/// Full description of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    pub optimizer: OptimizerKind,

    // Primary weight shape (regression target / quadratic bowl).
    pub rows: usize,
    pub cols: usize,
    /// Rank of the regression target map.
    pub true_rank: usize,
    // MLP dimensions.
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,

    pub batch_size: usize,
    /// Additive i.i.d. Gaussian noise applied to every layer gradient.
    pub noise_std: f64,
    /// Scale of the random dense initial weight for the regression task
    /// (zero starts from the origin, leaving the residual exactly low-rank).
    pub init_std: f64,
    /// Standard deviation of the noise on regression targets; enters the
    /// gradient as an additive batch-rank term.
    pub label_std: f64,

    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub rank: usize,
    /// Steps between gradient decompositions.
    pub tau: usize,
    /// Steps between projection redraws from the cached spectrum; defaults to `tau`.
    pub kappa: Option<usize>,
    /// Learning-rate scale for the deterministic top-k baseline.
    pub alpha: f64,
    pub realign: RealignMode,
    pub adaptive_interval: bool,
    pub gamma_reset: f64,
    pub gamma_shrink: f64,
    pub gamma_expand: f64,
    pub truncation_rank: usize,
    /// Adaptive-interval bounds; default to `tau` and 5% of total steps.
    pub tau_min: Option<usize>,
    pub tau_max: Option<usize>,

    pub steps: usize,
    pub warmup_frac: f64,
    pub schedule: ScheduleKind,
    pub seed: u64,

    /// Also write `checkpoint_step<N>.bin` when reaching this step.
    pub checkpoint_at: Option<usize>,
    /// Evaluate on the held-out batch every this many steps (0 disables).
    pub eval_every: usize,
    pub eval_batch: usize,
    /// Include wall-clock timings in metric records (off keeps metric files
    /// bit-reproducible across runs).
    pub emit_timing: bool,
    /// Step independent layers on separate threads.
    pub parallel_layers: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskKind::SyntheticLowrankRegression,
            optimizer: OptimizerKind::PlumageAdam,
            rows: 64,
            cols: 64,
            true_rank: 8,
            input_dim: 16,
            hidden_dim: 32,
            num_classes: 8,
            batch_size: 16,
            noise_std: 0.0,
            init_std: 1.0,
            label_std: 1.0,
            eta: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            rank: 8,
            tau: 20,
            kappa: None,
            alpha: 1.0,
            realign: RealignMode::Smp,
            adaptive_interval: false,
            gamma_reset: 0.3,
            gamma_shrink: 0.4,
            gamma_expand: 0.6,
            truncation_rank: 64,
            tau_min: None,
            tau_max: None,
            steps: 2000,
            warmup_frac: 0.1,
            schedule: ScheduleKind::CosineWithFloor,
            seed: 0,
            checkpoint_at: None,
            eval_every: 0,
            eval_batch: 256,
            emit_timing: false,
            parallel_layers: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| RunError::Config(format!("invalid config: {e}")))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// A copy with every optional field made explicit.
    pub fn resolved(&self) -> RunConfig {
        let mut cfg = self.clone();
        cfg.kappa = Some(self.effective_kappa());
        cfg.tau_min = Some(self.effective_tau_min());
        cfg.tau_max = Some(self.effective_tau_max());
        cfg
    }

    pub fn effective_kappa(&self) -> usize {
        self.kappa.unwrap_or(self.tau)
    }

    pub fn effective_tau_min(&self) -> usize {
        self.tau_min.unwrap_or(self.tau)
    }

    pub fn effective_tau_max(&self) -> usize {
        self.tau_max.unwrap_or((self.steps / 20).max(self.tau))
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_frac * self.steps as f64).floor() as usize
    }

    pub fn interval_config(&self) -> IntervalConfig {
        IntervalConfig {
            tau_min: self.effective_tau_min(),
            tau_max: self.effective_tau_max(),
            tau_initial: self.tau,
            gamma_reset: self.gamma_reset,
            gamma_shrink: self.gamma_shrink,
            gamma_expand: self.gamma_expand,
            truncation_rank: self.truncation_rank,
        }
    }

    pub fn hyperparams(&self) -> OptimizerHyperparams {
        OptimizerHyperparams {
            eta: self.eta,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            rank: self.rank,
            svd_interval: self.tau,
            resample_interval: self.effective_kappa(),
            realign_mode: self.realign,
            adaptive_interval: self.adaptive_interval,
            interval: self.interval_config(),
            alpha: self.alpha,
            sampling_eps: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |msg: String| Err(RunError::Config(msg));
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return bad(format!(
                "warmup_frac must lie in [0, 1), got {}",
                self.warmup_frac
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.noise_std < 0.0 {
            return bad(format!(
                "noise_std must be nonnegative, got {}",
                self.noise_std
            ));
        }
        if self.init_std < 0.0 {
            return bad(format!(
                "init_std must be nonnegative, got {}",
                self.init_std
            ));
        }
        if self.label_std < 0.0 {
            return bad(format!(
                "label_std must be nonnegative, got {}",
                self.label_std
            ));
        }
        match self.task {
            TaskKind::SyntheticLowrankRegression => {
                if self.rows == 0 || self.cols == 0 {
                    return bad("regression weight must be nonempty".into());
                }
                if self.true_rank == 0 || self.true_rank > self.rows.min(self.cols) {
                    return bad(format!(
                        "true_rank {} out of range for a {}x{} target",
                        self.true_rank, self.rows, self.cols
                    ));
                }
            }
            TaskKind::MlpClassification => {
                if self.input_dim == 0 || self.hidden_dim == 0 || self.num_classes < 2 {
                    return bad("mlp dimensions must be positive with at least two classes".into());
                }
            }
            TaskKind::QuadraticBowl => {
                if self.rows == 0 || self.cols == 0 {
                    return bad("bowl weight must be nonempty".into());
                }
            }
        }
        if self.optimizer.is_low_rank() {
            for (name, rows, cols, eligible) in crate::harness::task::layer_shapes(self) {
                if eligible && self.rank > rows.min(cols) {
                    return bad(format!(
                        "rank {} exceeds min dimension of layer {name} ({rows}x{cols})",
                        self.rank
                    ));
                }
            }
        }
        if self.eval_every > 0 && self.eval_batch == 0 {
            return bad("eval_batch must be positive when eval is enabled".into());
        }
        self.hyperparams().validate().map_err(RunError::Core)?;
        Ok(())
    }
}

/// Learning rate at `step` under the configured schedule: linear warmup to
/// the peak, then either constant or cosine decay to a 10% floor at `steps`.
pub fn learning_rate_at(cfg: &RunConfig, step: usize) -> f64 {
    let warmup = cfg.warmup_steps();
    if step < warmup {
        return cfg.eta * (step + 1) as f64 / warmup as f64;
    }
    match cfg.schedule {
        ScheduleKind::Constant => cfg.eta,
        ScheduleKind::CosineWithFloor => {
            if cfg.steps <= warmup {
                return cfg.eta;
            }
            let floor = COSINE_FLOOR_FRAC * cfg.eta;
            let frac = (step - warmup) as f64 / (cfg.steps - warmup) as f64;
            floor + (cfg.eta - floor) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default().resolved();
        let text = cfg.to_toml_string();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_toml_str("nonexistent_field = 3").is_err());
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = RunConfig {
            steps: 1000,
            warmup_frac: 0.1,
            eta: 0.02,
            schedule: ScheduleKind::CosineWithFloor,
            ..RunConfig::default()
        };
        let w = cfg.warmup_steps();
        assert_eq!(w, 100);
        assert!((learning_rate_at(&cfg, 0) - 0.02 / 100.0).abs() < 1e-15);
        assert!((learning_rate_at(&cfg, w) - 0.02).abs() < 1e-9);
        assert!((learning_rate_at(&cfg, 1000) - 0.002).abs() < 1e-9);
        // Monotone nonincreasing after warmup.
        let mut prev = f64::INFINITY;
        for t in w..=1000 {
            let lr = learning_rate_at(&cfg, t);
            assert!(lr <= prev + 1e-15);
            prev = lr;
        }
    }

    #[test]
    fn constant_schedule_after_warmup() {
        let cfg = RunConfig {
            steps: 100,
            warmup_frac: 0.2,
            eta: 0.5,
            schedule: ScheduleKind::Constant,
            ..RunConfig::default()
        };
        assert!((learning_rate_at(&cfg, 0) - 0.5 / 20.0).abs() < 1e-15);
        for t in 20..100 {
            assert_eq!(learning_rate_at(&cfg, t), 0.5);
        }
    }

    #[test]
    fn rank_checked_against_layer_dims() {
        let cfg = RunConfig {
            task: TaskKind::MlpClassification,
            optimizer: OptimizerKind::PlumageAdam,
            rank: 16, // exceeds num_classes x hidden_dim min dim of 8
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn kappa_defaults_to_tau() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.effective_kappa(), cfg.tau);
        let resolved = cfg.resolved();
        assert_eq!(resolved.kappa, Some(cfg.tau));
    }
}
