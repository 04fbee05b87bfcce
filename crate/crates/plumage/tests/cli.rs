//! End-to-end tests of the `plumage` binary: exit codes, artifacts, and the
//! file formats behind them.

use std::path::Path;
use std::process::{Command, Output};

fn plumage(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plumage"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn train_produces_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "train",
        "--task",
        "quadratic_bowl",
        "--optimizer",
        "plumage_adam",
        "--rows",
        "8",
        "--cols",
        "10",
        "--rank",
        "4",
        "--interval",
        "5",
        "--steps",
        "60",
        "--eta",
        "0.05",
        "--seed",
        "3",
    ];
    let run = |out: &str| {
        let mut full = args.to_vec();
        full.push("--out");
        full.push(out);
        let output = plumage(&full, dir.path());
        assert!(output.status.success(), "{}", stderr_of(&output));
    };
    run("a");
    run("b");
    for name in [
        "metrics.jsonl",
        "config.resolved",
        "checkpoint.bin",
        "summary.csv",
        "status.json",
    ] {
        assert!(dir.path().join("a").join(name).exists(), "missing {name}");
    }
    let a = std::fs::read(dir.path().join("a/metrics.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b/metrics.jsonl")).unwrap();
    assert_eq!(a, b, "same config and seed must give identical metrics");

    // The resolved config echoes every effective setting and parses back.
    let resolved = std::fs::read_to_string(dir.path().join("a/config.resolved")).unwrap();
    assert!(resolved.contains("optimizer = \"plumage_adam\""));
    assert!(
        resolved.contains("kappa = 5"),
        "optional fields made explicit"
    );
    plumage::harness::RunConfig::from_toml_str(&resolved).unwrap();
}

#[test]
fn config_file_with_cli_overrides() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "task = \"quadratic_bowl\"\noptimizer = \"adam\"\nrows = 6\ncols = 6\nsteps = 30\neta = 0.1\n",
    )
    .unwrap();
    let output = plumage(
        &[
            "train", "--config", "run.toml", "--steps", "40", "--out", "out",
        ],
        dir.path(),
    );
    assert!(output.status.success(), "{}", stderr_of(&output));
    let resolved = std::fs::read_to_string(dir.path().join("out/config.resolved")).unwrap();
    assert!(resolved.contains("steps = 40"), "flag overrides file");
    assert!(resolved.contains("rows = 6"), "file value preserved");
}

#[test]
fn invalid_configuration_fails_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let output = plumage(
        &[
            "train",
            "--task",
            "quadratic_bowl",
            "--rows",
            "4",
            "--cols",
            "4",
            "--rank",
            "9",
            "--out",
            "out",
        ],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr_of(&output).contains("rank"));
}

#[test]
fn divergence_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let output = plumage(
        &[
            "train",
            "--task",
            "quadratic_bowl",
            "--optimizer",
            "sgdm",
            "--rows",
            "6",
            "--cols",
            "6",
            "--eta",
            "100",
            "--schedule",
            "constant",
            "--warmup-frac",
            "0",
            "--steps",
            "500",
            "--out",
            "out",
        ],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(2), "{}", stderr_of(&output));
    assert!(stderr_of(&output).contains("step"));
    let status = std::fs::read_to_string(dir.path().join("out/status.json")).unwrap();
    assert!(status.contains("diverged"));
}

#[test]
fn resume_continues_a_checkpointed_run() {
    let dir = tempfile::tempdir().unwrap();
    let base = [
        "train",
        "--task",
        "quadratic_bowl",
        "--optimizer",
        "plumage_adam",
        "--rows",
        "8",
        "--cols",
        "8",
        "--rank",
        "4",
        "--steps",
        "80",
        "--seed",
        "5",
    ];
    let mut uninterrupted = base.to_vec();
    uninterrupted.extend(["--checkpoint-at", "40", "--out", "full"]);
    let output = plumage(&uninterrupted, dir.path());
    assert!(output.status.success(), "{}", stderr_of(&output));

    let output = plumage(
        &[
            "train",
            "--resume",
            "full/checkpoint_step40.bin",
            "--out",
            "resumed",
        ],
        dir.path(),
    );
    assert!(output.status.success(), "{}", stderr_of(&output));
    let full = plumage::harness::Checkpoint::load(&dir.path().join("full/checkpoint.bin")).unwrap();
    let resumed =
        plumage::harness::Checkpoint::load(&dir.path().join("resumed/checkpoint.bin")).unwrap();
    assert_eq!(full.step, resumed.step);
    for (a, b) in full.layers.iter().zip(&resumed.layers) {
        assert_eq!(a.w, b.w);
    }
}

#[test]
fn compare_renders_table_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    for (opt, out) in [("adam", "a"), ("plumage_adam", "p")] {
        let output = plumage(
            &[
                "train",
                "--task",
                "quadratic_bowl",
                "--optimizer",
                opt,
                "--rows",
                "8",
                "--cols",
                "8",
                "--rank",
                "4",
                "--steps",
                "50",
                "--out",
                out,
            ],
            dir.path(),
        );
        assert!(output.status.success(), "{}", stderr_of(&output));
    }
    let output = plumage(&["compare", "a", "p", "--csv", "cmp.csv"], dir.path());
    assert!(output.status.success(), "{}", stderr_of(&output));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("per-optimizer mean terminal loss"));
    assert!(stdout.contains("per-seed ordering"));
    let csv = std::fs::read_to_string(dir.path().join("cmp.csv")).unwrap();
    assert!(csv.lines().count() == 3);

    // A missing run directory is reported by path.
    let output = plumage(&["compare", "a", "missing_dir"], dir.path());
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr_of(&output).contains("missing_dir"));
}

#[test]
fn verify_runs_the_oracle_suite() {
    let dir = tempfile::tempdir().unwrap();
    let output = plumage(&["verify"], dir.path());
    assert!(output.status.success(), "{}", stderr_of(&output));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.matches("[ok]").count() >= 6);
    assert!(stdout.contains("all oracle checks passed"));
}

#[test]
fn lr_sweep_runs_the_preset_grid() {
    let dir = tempfile::tempdir().unwrap();
    let output = plumage(
        &[
            "train",
            "--task",
            "quadratic_bowl",
            "--optimizer",
            "adam",
            "--rows",
            "6",
            "--cols",
            "6",
            "--steps",
            "20",
            "--sweep-lr",
            "--out",
            "sweep",
        ],
        dir.path(),
    );
    assert!(output.status.success(), "{}", stderr_of(&output));
    let entries = std::fs::read_dir(dir.path().join("sweep")).unwrap().count();
    assert_eq!(entries, 6, "one run per grid point");
}
