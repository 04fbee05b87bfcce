//! Integration tests for the experiment runner, checkpointing, and run
//! comparison.

use std::path::PathBuf;

use plumage::harness::checkpoint::Checkpoint;
use plumage::harness::{
    compare_runs, load_run_summary, run_experiment, LayerOptState, MetricsSink, OptimizerKind,
    RunConfig, RunError, ScheduleKind, TaskKind, Trainer,
};
use plumage::optim::RealignMode;

fn quick_config() -> RunConfig {
    RunConfig {
        task: TaskKind::QuadraticBowl,
        optimizer: OptimizerKind::PlumageAdam,
        rows: 8,
        cols: 10,
        rank: 4,
        tau: 5,
        steps: 60,
        eta: 0.05,
        noise_std: 0.0,
        seed: 7,
        ..RunConfig::default()
    }
}

#[test]
fn only_2d_weights_get_low_rank_states() {
    let cfg = RunConfig {
        task: TaskKind::MlpClassification,
        optimizer: OptimizerKind::PlumageAdam,
        rank: 4,
        steps: 10,
        ..RunConfig::default()
    };
    let trainer = Trainer::new(&cfg).unwrap();
    let kinds: Vec<(&str, bool)> = trainer
        .model()
        .layers
        .iter()
        .zip(trainer.slots())
        .map(|(layer, slot)| {
            (
                layer.name.as_str(),
                matches!(slot.state, LayerOptState::LowRank(_)),
            )
        })
        .collect();
    assert_eq!(
        kinds,
        vec![("w1", true), ("b1", false), ("w2", true), ("b2", false)]
    );
    // Bias layers fall back to the full-rank rule of the same family.
    for (layer, slot) in trainer.model().layers.iter().zip(trainer.slots()) {
        if !layer.low_rank_eligible {
            assert!(matches!(slot.state, LayerOptState::FullAdam(_)));
        }
    }
}

#[test]
fn full_rank_optimizers_never_project() {
    let cfg = RunConfig {
        optimizer: OptimizerKind::Adam,
        steps: 5,
        ..RunConfig::default()
    };
    let trainer = Trainer::new(&cfg).unwrap();
    assert!(trainer
        .slots()
        .iter()
        .all(|slot| matches!(slot.state, LayerOptState::FullAdam(_))));
}

#[test]
fn run_writes_every_artifact_and_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config();
    let output = run_experiment(&cfg, dir.path()).unwrap();
    for name in [
        "metrics.jsonl",
        "config.resolved",
        "checkpoint.bin",
        "summary.csv",
        "status.json",
    ] {
        assert!(dir.path().join(name).exists(), "missing {name}");
    }
    let step_records: Vec<_> = output
        .records
        .iter()
        .filter(|r| r.train_loss.is_some())
        .collect();
    assert_eq!(step_records.len(), cfg.steps, "one loss record per step");
    for (expected, record) in step_records.iter().enumerate() {
        assert_eq!(record.step, expected as u64, "monotone step numbering");
        assert!(record.grad_norm.is_some());
        assert!(record.wall_time_ms.is_none(), "timing is opt-in");
    }
    // Projection telemetry appears for the low-rank layer at decomposition steps.
    let telemetry: Vec<_> = output
        .records
        .iter()
        .filter(|r| r.layer.is_some())
        .collect();
    assert_eq!(
        telemetry.len(),
        cfg.steps / cfg.tau,
        "one record per refresh"
    );
    assert!(telemetry.iter().all(|r| r.tau == Some(cfg.tau)));
    assert!(telemetry.iter().all(|r| r.r_star.is_some()));
}

#[test]
fn eval_loss_emitted_on_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        eval_every: 20,
        eval_batch: 64,
        steps: 50,
        task: TaskKind::SyntheticLowrankRegression,
        optimizer: OptimizerKind::Adam,
        rows: 16,
        cols: 16,
        true_rank: 4,
        rank: 4,
        ..RunConfig::default()
    };
    let output = run_experiment(&cfg, dir.path()).unwrap();
    let eval_steps: Vec<u64> = output
        .records
        .iter()
        .filter(|r| r.eval_loss.is_some())
        .map(|r| r.step)
        .collect();
    assert_eq!(eval_steps, vec![0, 20, 40, 49]);
}

#[test]
fn divergence_is_surfaced_with_the_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        task: TaskKind::QuadraticBowl,
        optimizer: OptimizerKind::Sgdm,
        rows: 6,
        cols: 6,
        eta: 100.0, // far above the stability threshold of the bowl
        schedule: ScheduleKind::Constant,
        warmup_frac: 0.0,
        steps: 500,
        ..RunConfig::default()
    };
    let err = run_experiment(&cfg, dir.path()).unwrap_err();
    assert!(err.is_divergence(), "unexpected error: {err}");
    let status = std::fs::read_to_string(dir.path().join("status.json")).unwrap();
    assert!(status.contains("diverged"));
}

#[test]
fn gradient_check_runs_at_setup() {
    // A valid config passes; the check is exercised on every construction.
    Trainer::new(&quick_config()).unwrap();
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        checkpoint_at: Some(30),
        ..quick_config()
    };
    let full = run_experiment(&cfg, &dir.path().join("full")).unwrap();

    let resumed_dir = dir.path().join("resumed");
    let ckpt = Checkpoint::load(&dir.path().join("full/checkpoint_step30.bin")).unwrap();
    assert_eq!(ckpt.step, 30);
    let mut trainer = Trainer::from_checkpoint(ckpt, None).unwrap();
    std::fs::create_dir_all(&resumed_dir).unwrap();
    let sink = MetricsSink::create(&resumed_dir.join("metrics.jsonl")).unwrap();
    while trainer.step_count() < cfg.steps as u64 {
        trainer.step_once(&sink).unwrap();
    }
    let final_full = Checkpoint::load(&dir.path().join("full/checkpoint.bin")).unwrap();
    let final_resumed = trainer.checkpoint();
    assert_eq!(final_full.step, final_resumed.step);
    for (a, b) in final_full.layers.iter().zip(&final_resumed.layers) {
        assert_eq!(a.w, b.w, "weights must replay exactly");
        assert_eq!(a.state, b.state, "optimizer state must replay exactly");
        assert_eq!(a.rng, b.rng, "generator must replay exactly");
    }
    // The resumed tail reproduces the same losses.
    let tail: Vec<_> = full
        .records
        .iter()
        .filter(|r| r.train_loss.is_some() && r.step >= 30)
        .map(|r| (r.step, r.train_loss.unwrap()))
        .collect();
    let resumed_records = sink.into_records();
    let resumed: Vec<_> = resumed_records
        .iter()
        .filter(|r| r.train_loss.is_some())
        .map(|r| (r.step, r.train_loss.unwrap()))
        .collect();
    assert_eq!(tail, resumed);
}

#[test]
fn parallel_layer_stepping_is_deterministic() {
    let base = RunConfig {
        task: TaskKind::MlpClassification,
        optimizer: OptimizerKind::PlumageAdam,
        rank: 4,
        tau: 5,
        steps: 40,
        ..RunConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let seq = run_experiment(&base, &dir.path().join("seq")).unwrap();
    let par_cfg = RunConfig {
        parallel_layers: true,
        ..base
    };
    let par = run_experiment(&par_cfg, &dir.path().join("par")).unwrap();
    let strip =
        |records: &[plumage::harness::MetricRecord]| -> Vec<(u64, Option<String>, Option<f64>)> {
            records
                .iter()
                .map(|r| (r.step, r.layer.clone(), r.train_loss))
                .collect()
        };
    assert_eq!(strip(&seq.records), strip(&par.records));
}

#[test]
fn compare_identical_runs_and_orderings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config();
    run_experiment(&cfg, &dir.path().join("a")).unwrap();
    run_experiment(&cfg, &dir.path().join("b")).unwrap();
    let cfg2 = RunConfig {
        optimizer: OptimizerKind::Adam,
        seed: 7,
        ..quick_config()
    };
    run_experiment(&cfg2, &dir.path().join("c")).unwrap();

    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| dir.path().join(n)).collect();
    let comparison = compare_runs(&dirs).unwrap();
    assert_eq!(comparison.runs.len(), 3);
    let a = &comparison.runs[0];
    let b = &comparison.runs[1];
    assert_eq!(
        a.terminal_loss, b.terminal_loss,
        "identical runs, identical rows"
    );
    assert_eq!(a.final_loss, b.final_loss);
    // One seed shared by two optimizers yields an ordering verdict.
    assert_eq!(comparison.orderings.len(), 1);
    assert_eq!(comparison.orderings[0].1.len(), 3);
    let table = comparison.render_table();
    assert!(table.contains("plumage_adam") && table.contains("adam"));

    let csv_path = dir.path().join("summary.csv");
    comparison.write_csv(&csv_path).unwrap();
    assert!(std::fs::read_to_string(&csv_path).unwrap().lines().count() >= 4);
}

#[test]
fn compare_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config();
    run_experiment(&cfg, &dir.path().join("a")).unwrap();

    // Fewer than two runs.
    let err = compare_runs(&[dir.path().join("a")]).unwrap_err();
    assert!(matches!(err, RunError::Config(_)));

    // Missing directory names the missing file.
    let missing = dir.path().join("nope");
    let err = compare_runs(&[dir.path().join("a"), missing.clone()]).unwrap_err();
    assert!(err.to_string().contains("nope"), "{err}");

    // Mismatched tasks are rejected.
    let other = RunConfig {
        task: TaskKind::MlpClassification,
        optimizer: OptimizerKind::Adam,
        rank: 4,
        steps: 20,
        ..RunConfig::default()
    };
    run_experiment(&other, &dir.path().join("m")).unwrap();
    let err = compare_runs(&[dir.path().join("a"), dir.path().join("m")]).unwrap_err();
    assert!(err.to_string().contains("different tasks"), "{err}");
}

#[test]
fn bowl_with_adam_converges_three_orders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        task: TaskKind::QuadraticBowl,
        optimizer: OptimizerKind::Adam,
        rows: 8,
        cols: 10,
        eta: 0.1,
        steps: 200,
        noise_std: 0.0,
        ..RunConfig::default()
    };
    let output = run_experiment(&cfg, dir.path()).unwrap();
    let initial = output.records[0].train_loss.unwrap();
    assert!(
        output.final_loss < 1e-3 * initial,
        "final {} vs initial {initial}",
        output.final_loss
    );
}

#[test]
fn full_rank_projected_sgdm_tracks_plain_sgdm() {
    // SGDM is linear in the moment, so at k = min(m, n) the projected update
    // re-expands to exactly the full-rank one (given first-moment realignment).
    let dir = tempfile::tempdir().unwrap();
    let base = RunConfig {
        task: TaskKind::SyntheticLowrankRegression,
        rows: 12,
        cols: 16,
        true_rank: 3,
        batch_size: 12,
        rank: 12,
        tau: 7,
        eta: 0.02,
        steps: 200,
        realign: RealignMode::Mp,
        seed: 13,
        ..RunConfig::default()
    };
    let full = run_experiment(
        &RunConfig {
            optimizer: OptimizerKind::Sgdm,
            ..base.clone()
        },
        &dir.path().join("full"),
    )
    .unwrap();
    let projected = run_experiment(
        &RunConfig {
            optimizer: OptimizerKind::PlumageSgdm,
            ..base
        },
        &dir.path().join("proj"),
    )
    .unwrap();
    let losses = |o: &plumage::harness::RunOutput| -> Vec<(u64, f64)> {
        o.records
            .iter()
            .filter_map(|r| r.train_loss.map(|l| (r.step, l)))
            .collect()
    };
    for ((step, a), (_, b)) in losses(&full).iter().zip(losses(&projected).iter()) {
        assert!(
            (a - b).abs() <= 1e-8 * a.abs().max(1.0),
            "step {step}: {a} vs {b}"
        );
    }
    let wa = Checkpoint::load(&dir.path().join("full/checkpoint.bin")).unwrap();
    let wb = Checkpoint::load(&dir.path().join("proj/checkpoint.bin")).unwrap();
    let diff = wa.layers[0].w.sub(&wb.layers[0].w).frobenius_norm();
    assert!(diff <= 1e-8, "terminal weights differ by {diff}");
}

#[test]
fn summaries_load_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config();
    let output = run_experiment(&cfg, dir.path()).unwrap();
    let summary = load_run_summary(dir.path()).unwrap();
    assert_eq!(summary.optimizer, OptimizerKind::PlumageAdam);
    assert_eq!(summary.seed, 7);
    assert_eq!(summary.status, "completed");
    assert_eq!(summary.final_loss, output.final_loss);
    assert!((summary.terminal_loss - output.terminal_loss).abs() < 1e-15);
}
