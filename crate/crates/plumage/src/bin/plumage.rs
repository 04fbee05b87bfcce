//! Experiment CLI: run training configurations, compare finished runs, and
//! exercise the verification oracles.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use plumage::harness::{
    compare_runs, config::ScheduleKind, resume_experiment, run_experiment, OptimizerKind,
    RunConfig, RunError, TaskKind, LR_SWEEP_GRID,
};
use plumage::optim::RealignMode;

#[derive(Parser)]
#[command(
    name = "plumage",
    version,
    about = "Low-rank gradient estimation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training experiment (or a learning-rate sweep).
    Train(TrainArgs),
    /// Summarize and rank finished runs on the same task.
    Compare(CompareArgs),
    /// Run the built-in verification oracles.
    Verify,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML configuration file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for metrics.jsonl, checkpoint.bin, config.resolved,
    /// summary.csv, status.json.
    #[arg(long, default_value = "runs/run")]
    out: PathBuf,
    /// Continue from a checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Run once per learning rate in the built-in sweep grid.
    #[arg(long)]
    sweep_lr: bool,

    #[arg(long, value_enum)]
    task: Option<TaskKind>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    true_rank: Option<usize>,
    #[arg(long)]
    input_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    init_std: Option<f64>,
    #[arg(long)]
    label_std: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Projection rank k.
    #[arg(long)]
    rank: Option<usize>,
    /// Steps between gradient decompositions (tau).
    #[arg(long)]
    interval: Option<usize>,
    /// Steps between projection redraws from the cached spectrum.
    #[arg(long)]
    kappa: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    realign: Option<RealignMode>,
    #[arg(long)]
    adaptive_interval: Option<bool>,
    #[arg(long)]
    gamma_reset: Option<f64>,
    #[arg(long)]
    gamma_shrink: Option<f64>,
    #[arg(long)]
    gamma_expand: Option<f64>,
    #[arg(long)]
    truncation_rank: Option<usize>,
    #[arg(long)]
    tau_min: Option<usize>,
    #[arg(long)]
    tau_max: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    warmup_frac: Option<f64>,
    #[arg(long, value_enum)]
    schedule: Option<ScheduleKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_at: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    eval_batch: Option<usize>,
    #[arg(long)]
    emit_timing: Option<bool>,
    #[arg(long)]
    parallel_layers: Option<bool>,
}

impl TrainArgs {
    fn build_config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_toml_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),* $(,)?) => {
                $(if let Some(value) = self.$field { cfg.$field = value; })*
            };
        }
        apply!(
            task,
            optimizer,
            rows,
            cols,
            true_rank,
            input_dim,
            hidden_dim,
            num_classes,
            batch_size,
            noise_std,
            init_std,
            label_std,
            eta,
            beta1,
            beta2,
            epsilon,
            rank,
            alpha,
            realign,
            adaptive_interval,
            gamma_reset,
            gamma_shrink,
            gamma_expand,
            truncation_rank,
            steps,
            warmup_frac,
            schedule,
            seed,
            eval_every,
            eval_batch,
            emit_timing,
            parallel_layers,
        );
        if let Some(tau) = self.interval {
            cfg.tau = tau;
        }
        if let Some(kappa) = self.kappa {
            cfg.kappa = Some(kappa);
        }
        if let Some(tau_min) = self.tau_min {
            cfg.tau_min = Some(tau_min);
        }
        if let Some(tau_max) = self.tau_max {
            cfg.tau_max = Some(tau_max);
        }
        if let Some(step) = self.checkpoint_at {
            cfg.checkpoint_at = Some(step);
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct CompareArgs {
    /// Run directories to compare (at least two).
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Also write the comparison table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn cmd_train(args: &TrainArgs) -> Result<(), RunError> {
    if let Some(ckpt) = &args.resume {
        let output = resume_experiment(ckpt, args.steps, &args.out)?;
        println!(
            "resumed run finished: {} (final loss {:.6e}, terminal {:.6e})",
            output.out_dir.display(),
            output.final_loss,
            output.terminal_loss
        );
        return Ok(());
    }
    let cfg = args
        .build_config()
        .map_err(|e| RunError::Config(e.to_string()))?;
    if args.sweep_lr {
        for eta in LR_SWEEP_GRID {
            let mut swept = cfg.clone();
            swept.eta = eta;
            let out = args.out.join(format!("lr_{eta}"));
            let output = run_experiment(&swept, &out)?;
            println!(
                "eta {eta:<8}: terminal {:.6e}, best {:.6e} ({})",
                output.terminal_loss,
                output.best_loss,
                out.display()
            );
        }
        return Ok(());
    }
    let output = run_experiment(&cfg, &args.out)?;
    println!(
        "run finished: {} (final loss {:.6e}, terminal {:.6e}, best {:.6e})",
        output.out_dir.display(),
        output.final_loss,
        output.terminal_loss,
        output.best_loss
    );
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> anyhow::Result<()> {
    let comparison = compare_runs(&args.runs).context("comparison failed")?;
    print!("{}", comparison.render_table());
    if let Some(path) = &args.csv {
        comparison.write_csv(path)?;
        println!("\nwrote {}", path.display());
    }
    Ok(())
}

// --- verify: quick oracle suite ---------------------------------------------

struct VerifyReport {
    failures: usize,
}

impl VerifyReport {
    fn check(&mut self, name: &str, result: Result<(), String>) {
        match result {
            Ok(()) => println!("[ok]   {name}"),
            Err(detail) => {
                println!("[FAIL] {name}: {detail}");
                self.failures += 1;
            }
        }
    }
}

fn verify_closed_form() -> Result<(), String> {
    use plumage::estimator::analytic_variance;
    use plumage::oracle::{brute_force_min_variance, SimplexGrid};

    let sigma = [4.0, 2.0, 1.0, 1.0];
    let plan =
        plumage::compute_sampling_probabilities(&sigma, 2, 1e-12).map_err(|e| e.to_string())?;
    if plan.r_star != 1 {
        return Err(format!("r_star = {}", plan.r_star));
    }
    for (got, want) in plan.p.iter().zip([1.0, 0.5, 0.25, 0.25]) {
        if (got - want).abs() > 1e-12 {
            return Err(format!("p = {:?}", plan.p));
        }
    }
    let variance = analytic_variance(&sigma, &plan.p);
    if (variance - 10.0).abs() > 1e-12 {
        return Err(format!("variance = {variance}"));
    }
    let grid = SimplexGrid::new(4, 0.01).map_err(|e| e.to_string())?;
    let (_, v_best) = brute_force_min_variance(&sigma, 2, &grid).map_err(|e| e.to_string())?;
    let analytic_obj: f64 = sigma.iter().zip(&plan.p).map(|(s, p)| s * s / p).sum();
    if v_best < analytic_obj - 1e-6 {
        return Err(format!("grid {v_best} beat analytic {analytic_obj}"));
    }
    Ok(())
}

fn verify_marginals() -> Result<(), String> {
    use rand::SeedableRng;
    let p = [1.0, 0.7, 0.7, 0.3, 0.3];
    let k = 3;
    let trials = 20_000;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
    let freqs = plumage::oracle::empirical_inclusion_frequencies(&p, k, trials, &mut rng)
        .map_err(|e| e.to_string())?;
    for (i, (f, pi)) in freqs.iter().zip(&p).enumerate() {
        let tol = 5.0 * (pi * (1.0 - pi) / trials as f64).sqrt() + 1e-9;
        if (f - pi).abs() > tol {
            return Err(format!("index {i}: frequency {f} vs p {pi}"));
        }
    }
    Ok(())
}

fn verify_unbiasedness() -> Result<(), String> {
    use plumage::estimator::estimate;
    use plumage::{sample_projections, svd, Side};
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let g = plumage::Matrix::from_fn(8, 12, |_, _| rng.gen_range(-1.0..1.0));
    let dec = svd(&g).map_err(|e| e.to_string())?;
    let plan =
        plumage::compute_sampling_probabilities(&dec.sigma, 4, 1e-12).map_err(|e| e.to_string())?;
    let trials = 4000;
    let mut mean = plumage::Matrix::zeros(8, 12);
    for _ in 0..trials {
        let proj =
            sample_projections(&dec, &plan, 4, Side::Left, &mut rng).map_err(|e| e.to_string())?;
        mean.add_assign_scaled(
            &estimate(&g, &proj).map_err(|e| e.to_string())?,
            1.0 / trials as f64,
        );
    }
    let rel = mean.sub(&g).frobenius_norm() / g.frobenius_norm();
    if rel > 0.05 {
        return Err(format!("relative deviation {rel}"));
    }
    Ok(())
}

fn verify_one_sided_equivalence() -> Result<(), String> {
    use plumage::estimator::estimate;
    use plumage::oracle::dense_reference_estimate;
    use plumage::{sample_projections, svd, Side};
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for trial in 0..25 {
        let (m, n) = (3 + trial % 5, 3 + (trial * 3) % 7);
        let g = plumage::Matrix::from_fn(m, n, |_, _| rng.gen_range(-2.0..2.0));
        let dec = svd(&g).map_err(|e| e.to_string())?;
        let k = 1 + trial % dec.rank_dim();
        let plan = plumage::compute_sampling_probabilities(&dec.sigma, k, 1e-12)
            .map_err(|e| e.to_string())?;
        let proj =
            sample_projections(&dec, &plan, k, Side::Left, &mut rng).map_err(|e| e.to_string())?;
        let fast = estimate(&g, &proj).map_err(|e| e.to_string())?;
        let slow = dense_reference_estimate(&g, &proj.sampled_indices, &plan)
            .map_err(|e| e.to_string())?;
        let err = fast.sub(&slow).frobenius_norm();
        if err > 1e-10 * g.frobenius_norm().max(1.0) {
            return Err(format!("trial {trial}: deviation {err}"));
        }
    }
    Ok(())
}

fn verify_realignment() -> Result<(), String> {
    use plumage::optim::{realign_first_moment, realign_second_moment};
    use plumage::{EstimatorKind, LowRankProjection, Matrix, Side};

    let eye2 = Matrix::from_fn(4, 2, |i, j| if i == j { 1.0 } else { 0.0 });
    let proj = |basis: Matrix| LowRankProjection {
        kind: EstimatorKind::Plumage,
        side: Side::Left,
        d_scale: vec![1.0; basis.cols()],
        sampled_indices: (0..basis.cols()).collect(),
        basis,
    };
    let m = Matrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64 - 2.0);
    let same = realign_first_moment(&m, &proj(eye2.clone()), &proj(eye2.clone()))
        .map_err(|e| e.to_string())?;
    if same.sub(&m).frobenius_norm() > 1e-12 {
        return Err("identity realignment moved the moment".into());
    }
    let disjoint = Matrix::from_fn(4, 2, |i, j| if i == j + 2 { 1.0 } else { 0.0 });
    let zeroed = realign_first_moment(&m, &proj(eye2.clone()), &proj(disjoint))
        .map_err(|e| e.to_string())?;
    if zeroed.frobenius_norm() > 0.0 {
        return Err("orthogonal realignment kept information".into());
    }
    let v = Matrix::from_fn(2, 3, |i, j| (i + j) as f64);
    let b = Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    let perm = realign_second_moment(&v, &b).map_err(|e| e.to_string())?;
    if perm.row(0) != v.row(1) || perm.row(1) != v.row(0) {
        return Err("permutation realignment mangled the second moment".into());
    }
    Ok(())
}

fn verify_interval_controller() -> Result<(), String> {
    use plumage::interval::{mean_cosine_principal_angle, update_interval, IntervalConfig};
    use plumage::{EstimatorKind, LowRankProjection, Matrix, Side};

    let cfg = IntervalConfig {
        tau_min: 200,
        tau_max: 1000,
        tau_initial: 400,
        gamma_reset: 0.3,
        gamma_shrink: 0.4,
        gamma_expand: 0.6,
        truncation_rank: 64,
    };
    let table = [
        (400usize, 0.25, 200usize),
        (800, 0.35, 400),
        (400, 0.7, 800),
        (400, 0.5, 400),
    ];
    for (tau, rho, want) in table {
        let got = update_interval(tau, rho, &cfg);
        if got != want {
            return Err(format!(
                "update_interval({tau}, {rho}) = {got}, want {want}"
            ));
        }
    }
    let e1 = Matrix::from_fn(2, 1, |i, _| if i == 0 { 1.0 } else { 0.0 });
    let mid = Matrix::from_fn(2, 1, |_, _| 1.0 / 2f64.sqrt());
    let proj = |basis: Matrix| LowRankProjection {
        kind: EstimatorKind::Plumage,
        side: Side::Left,
        d_scale: vec![1.0; basis.cols()],
        sampled_indices: (0..basis.cols()).collect(),
        basis,
    };
    let rho = mean_cosine_principal_angle(&proj(e1), &proj(mid), 64).map_err(|e| e.to_string())?;
    if (rho - 1.0 / 2f64.sqrt()).abs() > 1e-9 {
        return Err(format!("45-degree overlap = {rho}"));
    }
    Ok(())
}

fn cmd_verify() -> anyhow::Result<()> {
    let mut report = VerifyReport { failures: 0 };
    report.check(
        "closed-form sampling probabilities and variance",
        verify_closed_form(),
    );
    report.check("exact-k sampling marginals", verify_marginals());
    report.check(
        "estimator unbiasedness (Monte Carlo)",
        verify_unbiasedness(),
    );
    report.check(
        "one-sided / rank-one-sum equivalence",
        verify_one_sided_equivalence(),
    );
    report.check("moment realignment identities", verify_realignment());
    report.check(
        "principal angles and interval controller",
        verify_interval_controller(),
    );
    if report.failures > 0 {
        bail!("{} oracle check(s) failed", report.failures);
    }
    println!("all oracle checks passed");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome: anyhow::Result<()> = match &cli.command {
        Command::Train(args) => match cmd_train(args) {
            Ok(()) => Ok(()),
            Err(err) => {
                eprintln!("error: {err}");
                return if err.is_divergence() {
                    ExitCode::from(2)
                } else {
                    ExitCode::from(1)
                };
            }
        },
        Command::Compare(args) => cmd_compare(args),
        Command::Verify => cmd_verify(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
