//! Cross-run comparison: terminal/best losses per optimizer, seeds
//! aggregated, with a per-seed ordering verdict.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::harness::config::{OptimizerKind, RunConfig, TaskKind};
use crate::harness::metrics::read_metrics;
use crate::harness::runner::RunStatus;
use crate::harness::RunError;

/// Everything `compare` needs from one finished run directory.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub task: TaskKind,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub steps: usize,
    pub status: String,
    /// Mean train loss over the final 5% of steps.
    pub terminal_loss: f64,
    pub final_loss: f64,
    pub best_loss: f64,
    /// Fields that must agree for two runs to be comparable.
    task_key: String,
}

fn require(path: &Path) -> Result<(), RunError> {
    if !path.exists() {
        return Err(RunError::Io(format!("missing file: {}", path.display())));
    }
    Ok(())
}

/// Loads `config.resolved`, `metrics.jsonl`, and `status.json` from a run
/// directory.
pub fn load_run_summary(dir: &Path) -> Result<RunSummary, RunError> {
    let config_path = dir.join("config.resolved");
    let metrics_path = dir.join("metrics.jsonl");
    let status_path = dir.join("status.json");
    require(&config_path)?;
    require(&metrics_path)?;

    let cfg = RunConfig::from_toml_file(&config_path)?;
    let records = read_metrics(&metrics_path)?;
    let losses: Vec<f64> = records.iter().filter_map(|r| r.train_loss).collect();
    if losses.is_empty() {
        return Err(RunError::Io(format!(
            "{}: no train_loss records",
            metrics_path.display()
        )));
    }
    let window = (cfg.steps / 20).max(1).min(losses.len());
    let terminal_loss = losses[losses.len() - window..].iter().sum::<f64>() / window as f64;
    let status = if status_path.exists() {
        let text = std::fs::read_to_string(&status_path)
            .map_err(|e| RunError::Io(format!("cannot read {}: {e}", status_path.display())))?;
        serde_json::from_str::<RunStatus>(&text)
            .map(|s| s.status)
            .unwrap_or_else(|_| "unknown".into())
    } else {
        "unknown".into()
    };

    let task_key = format!(
        "{}/{}x{}/r{}/in{}h{}c{}/b{}/noise{}/steps{}",
        cfg.task.name(),
        cfg.rows,
        cfg.cols,
        cfg.true_rank,
        cfg.input_dim,
        cfg.hidden_dim,
        cfg.num_classes,
        cfg.batch_size,
        cfg.noise_std,
        cfg.steps
    );

    Ok(RunSummary {
        dir: dir.to_path_buf(),
        task: cfg.task,
        optimizer: cfg.optimizer,
        seed: cfg.seed,
        steps: cfg.steps,
        status,
        terminal_loss,
        final_loss: *losses.last().unwrap(),
        best_loss: losses.iter().cloned().fold(f64::INFINITY, f64::min),
        task_key,
    })
}

#[derive(Debug, Clone)]
pub struct OptimizerAggregate {
    pub optimizer: OptimizerKind,
    pub mean_terminal_loss: f64,
    /// (seed, terminal loss) pairs, seed-sorted.
    pub per_seed: Vec<(u64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub runs: Vec<RunSummary>,
    pub aggregates: Vec<OptimizerAggregate>,
    /// Per-seed optimizer ranking, best terminal loss first.
    pub orderings: Vec<(u64, Vec<OptimizerKind>)>,
}

/// Compares at least two runs of the same task.
pub fn compare_runs(dirs: &[PathBuf]) -> Result<Comparison, RunError> {
    if dirs.len() < 2 {
        return Err(RunError::Config(format!(
            "compare needs at least two runs, got {}",
            dirs.len()
        )));
    }
    let runs: Vec<RunSummary> = dirs
        .iter()
        .map(|d| load_run_summary(d))
        .collect::<Result<_, _>>()?;
    let key = &runs[0].task_key;
    for run in &runs[1..] {
        if run.task_key != *key {
            return Err(RunError::Config(format!(
                "runs target different tasks: {} vs {} ({})",
                key,
                run.task_key,
                run.dir.display()
            )));
        }
    }

    let mut by_optimizer: BTreeMap<&'static str, Vec<&RunSummary>> = BTreeMap::new();
    for run in &runs {
        by_optimizer
            .entry(run.optimizer.name())
            .or_default()
            .push(run);
    }
    let aggregates = by_optimizer
        .values()
        .map(|group| {
            let mut per_seed: Vec<(u64, f64)> =
                group.iter().map(|r| (r.seed, r.terminal_loss)).collect();
            per_seed.sort_by_key(|(seed, _)| *seed);
            OptimizerAggregate {
                optimizer: group[0].optimizer,
                mean_terminal_loss: group.iter().map(|r| r.terminal_loss).sum::<f64>()
                    / group.len() as f64,
                per_seed,
            }
        })
        .collect();

    let mut by_seed: BTreeMap<u64, Vec<&RunSummary>> = BTreeMap::new();
    for run in &runs {
        by_seed.entry(run.seed).or_default().push(run);
    }
    let orderings = by_seed
        .into_iter()
        .filter(|(_, group)| group.len() >= 2)
        .map(|(seed, mut group)| {
            group.sort_by(|a, b| a.terminal_loss.partial_cmp(&b.terminal_loss).unwrap());
            (seed, group.into_iter().map(|r| r.optimizer).collect())
        })
        .collect();

    Ok(Comparison {
        runs,
        aggregates,
        orderings,
    })
}

impl Comparison {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<18} {:>6} {:>14} {:>14} {:>14} {:>10}\n",
            "optimizer", "seed", "terminal", "final", "best", "status"
        ));
        for run in &self.runs {
            out.push_str(&format!(
                "{:<18} {:>6} {:>14.6e} {:>14.6e} {:>14.6e} {:>10}\n",
                run.optimizer.name(),
                run.seed,
                run.terminal_loss,
                run.final_loss,
                run.best_loss,
                run.status
            ));
        }
        out.push('\n');
        out.push_str("per-optimizer mean terminal loss:\n");
        for agg in &self.aggregates {
            out.push_str(&format!(
                "  {:<18} {:>14.6e} over {} seed(s)\n",
                agg.optimizer.name(),
                agg.mean_terminal_loss,
                agg.per_seed.len()
            ));
        }
        if !self.orderings.is_empty() {
            out.push('\n');
            out.push_str("per-seed ordering (best first):\n");
            for (seed, order) in &self.orderings {
                let names: Vec<&str> = order.iter().map(|o| o.name()).collect();
                out.push_str(&format!("  seed {:<4} {}\n", seed, names.join(" < ")));
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), RunError> {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| RunError::Io(format!("cannot create {}: {e}", path.display())))?;
        writer
            .write_record([
                "optimizer",
                "seed",
                "terminal_loss",
                "final_loss",
                "best_loss",
                "status",
                "dir",
            ])
            .map_err(|e| RunError::Io(e.to_string()))?;
        for run in &self.runs {
            writer
                .write_record([
                    run.optimizer.name().to_string(),
                    run.seed.to_string(),
                    format!("{:.17e}", run.terminal_loss),
                    format!("{:.17e}", run.final_loss),
                    format!("{:.17e}", run.best_loss),
                    run.status.clone(),
                    run.dir.display().to_string(),
                ])
                .map_err(|e| RunError::Io(e.to_string()))?;
        }
        writer.flush().map_err(|e| RunError::Io(e.to_string()))
    }
}
