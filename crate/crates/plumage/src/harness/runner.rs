//! Experiment runner: deterministic training loops, per-step metrics,
//! checkpoint/resume, and divergence surfacing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::harness::checkpoint::{Checkpoint, LayerCheckpoint, LayerOptState, RngState};
use crate::harness::config::{learning_rate_at, OptimizerKind, RunConfig};
use crate::harness::metrics::{MetricRecord, MetricsSink};
use crate::harness::task::{finite_difference_check, Batch, Model, TaskInstance};
use crate::harness::RunError;
use crate::linalg::Matrix;
use crate::optim::{
    adam_step_full, low_rank_adam_step, low_rank_sgdm_step, sgdm_step_full, FullAdamState,
    FullSgdmState, LowRankOptimizerState, OptimizerHyperparams, StepTelemetry,
};
use crate::sampler::EstimatorKind;

// Generator streams derived from the run seed.
const STREAM_SETUP: u64 = 0;
const STREAM_DATA: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_EVAL: u64 = 3;
const STREAM_LAYER_BASE: u64 = 10;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Optimizer state plus the sampling generator for one layer.
#[derive(Debug, Clone)]
pub struct LayerSlot {
    pub state: LayerOptState,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub status: String,
    pub step: u64,
}

/// Aggregate results of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub records: Vec<MetricRecord>,
    /// Loss of the final step's batch.
    pub final_loss: f64,
    /// Mean train loss over the last 5% of steps.
    pub terminal_loss: f64,
    pub best_loss: f64,
}

/// A deterministic training loop over one task.
pub struct Trainer {
    cfg: RunConfig,
    task: TaskInstance,
    model: Model,
    slots: Vec<LayerSlot>,
    hp: OptimizerHyperparams,
    data_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    eval_batch: Option<Batch>,
    step: u64,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self, RunError> {
        cfg.validate()?;
        let cfg = cfg.resolved();
        let mut setup_rng = stream_rng(cfg.seed, STREAM_SETUP);
        let task = TaskInstance::new(&cfg, &mut setup_rng);
        let model = task.init_model(&mut setup_rng);
        let check_batch = task.sample_batch(&mut setup_rng);
        finite_difference_check(&task, &model, &check_batch, &mut setup_rng, 10, 1e-4)?;

        let hp = cfg.hyperparams();
        let mut slots = Vec::with_capacity(model.layers.len());
        for (idx, layer) in model.layers.iter().enumerate() {
            let (rows, cols) = layer.w.shape();
            let state =
                build_layer_state(&cfg, &hp, rows, cols, layer.low_rank_eligible).map_err(|e| {
                    RunError::Layer {
                        layer: layer.name.clone(),
                        step: 0,
                        source: e,
                    }
                })?;
            slots.push(LayerSlot {
                state,
                rng: stream_rng(cfg.seed, STREAM_LAYER_BASE + idx as u64),
            });
        }

        let eval_batch = (cfg.eval_every > 0).then(|| {
            let mut eval_rng = stream_rng(cfg.seed, STREAM_EVAL);
            task.sample_batch_of(cfg.eval_batch, &mut eval_rng)
        });

        Ok(Trainer {
            data_rng: stream_rng(cfg.seed, STREAM_DATA),
            noise_rng: stream_rng(cfg.seed, STREAM_NOISE),
            task,
            model,
            slots,
            hp,
            eval_batch,
            step: 0,
            cfg,
        })
    }

    /// Rebuilds a trainer exactly as it was when the checkpoint was written.
    /// `steps_override` extends or shortens the planned run length.
    pub fn from_checkpoint(
        ckpt: Checkpoint,
        steps_override: Option<usize>,
    ) -> Result<Self, RunError> {
        let mut cfg = ckpt.config.clone();
        if let Some(steps) = steps_override {
            cfg.steps = steps;
        }
        cfg.validate()?;
        let cfg = cfg.resolved();
        if ckpt.step > cfg.steps as u64 {
            return Err(RunError::Config(format!(
                "checkpoint is at step {} but the run is only {} steps long",
                ckpt.step, cfg.steps
            )));
        }

        let mut setup_rng = stream_rng(cfg.seed, STREAM_SETUP);
        let task = TaskInstance::new(&cfg, &mut setup_rng);
        let mut model = task.init_model(&mut setup_rng);
        if model.layers.len() != ckpt.layers.len() {
            return Err(RunError::Config(
                "checkpoint layer count does not match the configured task".into(),
            ));
        }
        let mut slots = Vec::with_capacity(ckpt.layers.len());
        for (layer, saved) in model.layers.iter_mut().zip(ckpt.layers) {
            if layer.name != saved.name || layer.w.shape() != saved.w.shape() {
                return Err(RunError::Config(format!(
                    "checkpoint layer {} does not match the configured task",
                    saved.name
                )));
            }
            layer.w = saved.w;
            slots.push(LayerSlot {
                state: saved.state,
                rng: saved.rng.restore(),
            });
        }

        let eval_batch = (cfg.eval_every > 0).then(|| {
            let mut eval_rng = stream_rng(cfg.seed, STREAM_EVAL);
            task.sample_batch_of(cfg.eval_batch, &mut eval_rng)
        });

        Ok(Trainer {
            data_rng: ckpt.data_rng.restore(),
            noise_rng: ckpt.noise_rng.restore(),
            task,
            model,
            slots,
            hp: cfg.hyperparams(),
            eval_batch,
            step: ckpt.step,
            cfg,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn slots(&self) -> &[LayerSlot] {
        &self.slots
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let layers = self
            .model
            .layers
            .iter()
            .zip(&self.slots)
            .map(|(layer, slot)| LayerCheckpoint {
                name: layer.name.clone(),
                w: layer.w.clone(),
                state: slot.state.clone(),
                rng: RngState::capture(&slot.rng),
            })
            .collect();
        Checkpoint::new(
            self.cfg.clone(),
            self.step,
            RngState::capture(&self.data_rng),
            RngState::capture(&self.noise_rng),
            layers,
        )
    }

    /// Runs one optimization step, appending records to `sink`.
    pub fn step_once(&mut self, sink: &MetricsSink) -> Result<f64, RunError> {
        let started = Instant::now();
        let step = self.step;
        self.hp.eta = learning_rate_at(&self.cfg, step as usize);

        let batch = self.task.sample_batch(&mut self.data_rng);
        let loss = self.task.loss(&self.model, &batch);
        if !loss.is_finite() {
            return Err(RunError::Diverged { step });
        }
        let mut grads = self.task.grad(&self.model, &batch);
        if self.cfg.noise_std > 0.0 {
            for grad in &mut grads {
                add_gaussian_noise(grad, self.cfg.noise_std, &mut self.noise_rng);
            }
        }
        let grad_norm = grads
            .iter()
            .map(|g| g.frobenius_norm().powi(2))
            .sum::<f64>()
            .sqrt();

        let adaptive = self.cfg.optimizer.is_adaptive();
        let n_layers = self.model.layers.len();
        let mut outcomes: Vec<Option<crate::error::Result<Option<StepTelemetry>>>> =
            (0..n_layers).map(|_| None).collect();
        if self.cfg.parallel_layers && n_layers > 1 {
            let hp = &self.hp;
            std::thread::scope(|scope| {
                for (((layer, slot), grad), out) in self
                    .model
                    .layers
                    .iter_mut()
                    .zip(self.slots.iter_mut())
                    .zip(grads.iter())
                    .zip(outcomes.iter_mut())
                {
                    scope.spawn(move || {
                        *out = Some(step_layer(&mut layer.w, grad, slot, hp, adaptive));
                    });
                }
            });
        } else {
            let hp = &self.hp;
            for (((layer, slot), grad), out) in self
                .model
                .layers
                .iter_mut()
                .zip(self.slots.iter_mut())
                .zip(grads.iter())
                .zip(outcomes.iter_mut())
            {
                *out = Some(step_layer(&mut layer.w, grad, slot, hp, adaptive));
            }
        }

        let mut telemetry = Vec::new();
        for (idx, outcome) in outcomes.into_iter().enumerate() {
            let name = &self.model.layers[idx].name;
            match outcome.expect("every layer stepped") {
                Ok(Some(tel)) if tel.svd_refreshed || tel.resampled => {
                    telemetry.push(MetricRecord {
                        step,
                        layer: Some(name.clone()),
                        r_star: tel.r_star,
                        rho: tel.rho,
                        tau: Some(tel.tau),
                        ..MetricRecord::default()
                    });
                }
                Ok(_) => {}
                Err(source) => {
                    return Err(RunError::Layer {
                        layer: name.clone(),
                        step,
                        source,
                    });
                }
            }
        }

        let eval_loss = self.eval_batch.as_ref().and_then(|eval| {
            let due = self.cfg.eval_every > 0
                && (step as usize % self.cfg.eval_every == 0
                    || step as usize + 1 == self.cfg.steps);
            due.then(|| self.task.loss(&self.model, eval))
        });

        sink.append(MetricRecord {
            step,
            train_loss: Some(loss),
            eval_loss,
            grad_norm: Some(grad_norm),
            wall_time_ms: self
                .cfg
                .emit_timing
                .then(|| started.elapsed().as_secs_f64() * 1e3),
            ..MetricRecord::default()
        })?;
        for record in telemetry {
            sink.append(record)?;
        }

        self.step += 1;
        Ok(loss)
    }
}

fn build_layer_state(
    cfg: &RunConfig,
    hp: &OptimizerHyperparams,
    rows: usize,
    cols: usize,
    eligible: bool,
) -> crate::error::Result<LayerOptState> {
    let low_rank = eligible && cfg.optimizer.is_low_rank();
    let state = match (cfg.optimizer, low_rank) {
        (OptimizerKind::Sgdm, _) | (OptimizerKind::PlumageSgdm, false) => {
            LayerOptState::FullSgdm(FullSgdmState::new(rows, cols))
        }
        (OptimizerKind::Adam, _)
        | (OptimizerKind::PlumageAdam, false)
        | (OptimizerKind::GaloreTopkAdam, false)
        | (OptimizerKind::GaussianAdam, false) => {
            LayerOptState::FullAdam(FullAdamState::new(rows, cols))
        }
        (OptimizerKind::PlumageSgdm, true) => LayerOptState::LowRank(
            LowRankOptimizerState::new_sgdm(rows, cols, EstimatorKind::Plumage, hp)?,
        ),
        (OptimizerKind::PlumageAdam, true) => LayerOptState::LowRank(
            LowRankOptimizerState::new_adam(rows, cols, EstimatorKind::Plumage, hp)?,
        ),
        (OptimizerKind::GaloreTopkAdam, true) => LayerOptState::LowRank(
            LowRankOptimizerState::new_adam(rows, cols, EstimatorKind::TopkDeterministic, hp)?,
        ),
        (OptimizerKind::GaussianAdam, true) => LayerOptState::LowRank(
            LowRankOptimizerState::new_adam(rows, cols, EstimatorKind::GaussianRandom, hp)?,
        ),
    };
    Ok(state)
}

fn step_layer(
    w: &mut Matrix,
    grad: &Matrix,
    slot: &mut LayerSlot,
    hp: &OptimizerHyperparams,
    adaptive: bool,
) -> crate::error::Result<Option<StepTelemetry>> {
    match &mut slot.state {
        LayerOptState::FullAdam(state) => {
            adam_step_full(w, grad, state, hp)?;
            Ok(None)
        }
        LayerOptState::FullSgdm(state) => {
            sgdm_step_full(w, grad, state, hp)?;
            Ok(None)
        }
        LayerOptState::LowRank(state) => {
            let tel = if adaptive {
                low_rank_adam_step(w, grad, state, hp, &mut slot.rng)?
            } else {
                low_rank_sgdm_step(w, grad, state, hp, &mut slot.rng)?
            };
            Ok(Some(tel))
        }
    }
}

fn add_gaussian_noise(grad: &mut Matrix, std: f64, rng: &mut ChaCha8Rng) {
    use rand::Rng;
    use rand_distr::StandardNormal;
    for x in grad.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *x += std * z;
    }
}

fn write_status(out_dir: &Path, status: &str, step: u64) {
    let payload = RunStatus {
        status: status.to_string(),
        step,
    };
    if let Ok(text) = serde_json::to_string_pretty(&payload) {
        let _ = std::fs::write(out_dir.join("status.json"), text + "\n");
    }
}

fn summarize(records: &[MetricRecord], total_steps: usize) -> (f64, f64, f64) {
    let losses: Vec<f64> = records.iter().filter_map(|r| r.train_loss).collect();
    if losses.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let final_loss = *losses.last().unwrap();
    let window = (total_steps / 20).max(1).min(losses.len());
    let terminal = losses[losses.len() - window..].iter().sum::<f64>() / window as f64;
    let best = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    (final_loss, terminal, best)
}

fn write_run_summary(out_dir: &Path, cfg: &RunConfig, output: &RunOutput) -> Result<(), RunError> {
    let path = out_dir.join("summary.csv");
    let mut writer = csv::Writer::from_path(&path)
        .map_err(|e| RunError::Io(format!("cannot create {}: {e}", path.display())))?;
    writer
        .write_record([
            "optimizer",
            "task",
            "seed",
            "steps",
            "terminal_loss",
            "final_loss",
            "best_loss",
        ])
        .and_then(|_| {
            writer.write_record([
                cfg.optimizer.name().to_string(),
                cfg.task.name().to_string(),
                cfg.seed.to_string(),
                cfg.steps.to_string(),
                format!("{:.17e}", output.terminal_loss),
                format!("{:.17e}", output.final_loss),
                format!("{:.17e}", output.best_loss),
            ])
        })
        .and_then(|_| writer.flush().map_err(csv::Error::from))
        .map_err(|e| RunError::Io(format!("summary write: {e}")))
}

fn drive(mut trainer: Trainer, out_dir: &Path) -> Result<RunOutput, RunError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| RunError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    std::fs::write(
        out_dir.join("config.resolved"),
        trainer.cfg.to_toml_string(),
    )
    .map_err(|e| RunError::Io(format!("config.resolved write: {e}")))?;

    let sink = MetricsSink::create(&out_dir.join("metrics.jsonl"))?;
    let total = trainer.cfg.steps;
    let checkpoint_at = trainer.cfg.checkpoint_at;
    while trainer.step_count() < total as u64 {
        if let Err(err) = trainer.step_once(&sink) {
            if err.is_divergence() {
                write_status(out_dir, "diverged", trainer.step_count());
            }
            return Err(err);
        }
        if checkpoint_at == Some(trainer.step_count() as usize) {
            let name = format!("checkpoint_step{}.bin", trainer.step_count());
            trainer.checkpoint().save(&out_dir.join(name))?;
        }
    }
    trainer.checkpoint().save(&out_dir.join("checkpoint.bin"))?;
    write_status(out_dir, "completed", trainer.step_count());

    let records = sink.into_records();
    let (final_loss, terminal_loss, best_loss) = summarize(&records, total);
    let output = RunOutput {
        out_dir: out_dir.to_path_buf(),
        records,
        final_loss,
        terminal_loss,
        best_loss,
    };
    write_run_summary(out_dir, &trainer.cfg, &output)?;
    Ok(output)
}

/// Runs `cfg` to completion, writing `metrics.jsonl`, `config.resolved`,
/// `checkpoint.bin`, `summary.csv`, and `status.json` into `out_dir`.
pub fn run_experiment(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutput, RunError> {
    let trainer = Trainer::new(cfg)?;
    drive(trainer, out_dir)
}

/// Continues a checkpointed run to `steps_override` (or its original length),
/// writing fresh outputs into `out_dir`.
pub fn resume_experiment(
    checkpoint_path: &Path,
    steps_override: Option<usize>,
    out_dir: &Path,
) -> Result<RunOutput, RunError> {
    let ckpt = Checkpoint::load(checkpoint_path)?;
    let trainer = Trainer::from_checkpoint(ckpt, steps_override)?;
    drive(trainer, out_dir)
}
