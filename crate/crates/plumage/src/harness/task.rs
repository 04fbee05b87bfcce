//! Desk-scale tasks: a low-rank regression target, a tiny MLP classifier,
//! and a quadratic bowl. Each produces deterministic data given a seed and
//! exposes closed-form gradients that are finite-difference checked at setup.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::harness::config::{RunConfig, TaskKind};
use crate::harness::RunError;
use crate::linalg::Matrix;

/// One named weight; only genuinely 2-D weights are eligible for projected
/// treatment (bias columns are not).
#[derive(Debug, Clone)]
pub struct Layer {
    pub name: String,
    pub w: Matrix,
    pub low_rank_eligible: bool,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub layers: Vec<Layer>,
}

/// A minibatch: inputs column-stacked in `x`, targets in `y` (regression
/// targets or one-hot labels). The quadratic bowl carries an empty batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Matrix,
    pub y: Matrix,
}

/// Layer names and shapes for a config, without building the task.
pub fn layer_shapes(cfg: &RunConfig) -> Vec<(String, usize, usize, bool)> {
    match cfg.task {
        TaskKind::SyntheticLowrankRegression | TaskKind::QuadraticBowl => {
            vec![("w".into(), cfg.rows, cfg.cols, true)]
        }
        TaskKind::MlpClassification => vec![
            ("w1".into(), cfg.hidden_dim, cfg.input_dim, true),
            ("b1".into(), cfg.hidden_dim, 1, false),
            ("w2".into(), cfg.num_classes, cfg.hidden_dim, true),
            ("b2".into(), cfg.num_classes, 1, false),
        ],
    }
}

/// An instantiated task: fixed targets/centers plus the dimensions needed to
/// generate batches.
#[derive(Debug, Clone)]
pub struct TaskInstance {
    pub kind: TaskKind,
    rows: usize,
    cols: usize,
    input_dim: usize,
    hidden_dim: usize,
    num_classes: usize,
    batch_size: usize,
    init_std: f64,
    label_std: f64,
    /// Regression target, rank `true_rank`.
    w_true: Option<Matrix>,
    /// Class means, `num_classes x input_dim`.
    centers: Option<Matrix>,
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

impl TaskInstance {
    pub fn new(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> TaskInstance {
        let mut task = TaskInstance {
            kind: cfg.task,
            rows: cfg.rows,
            cols: cfg.cols,
            input_dim: cfg.input_dim,
            hidden_dim: cfg.hidden_dim,
            num_classes: cfg.num_classes,
            batch_size: cfg.batch_size,
            init_std: cfg.init_std,
            label_std: cfg.label_std,
            w_true: None,
            centers: None,
        };
        match cfg.task {
            TaskKind::SyntheticLowrankRegression => {
                let r = cfg.true_rank;
                let a = Matrix::from_fn(cfg.rows, r, |_, _| normal(rng));
                let b = Matrix::from_fn(cfg.cols, r, |_, _| normal(rng));
                let w_true = a
                    .matmul_tr(&b)
                    .expect("shapes agree")
                    .scaled(1.0 / (r as f64).sqrt());
                task.w_true = Some(w_true);
            }
            TaskKind::MlpClassification => {
                let centers =
                    Matrix::from_fn(cfg.num_classes, cfg.input_dim, |_, _| 2.0 * normal(rng));
                task.centers = Some(centers);
            }
            TaskKind::QuadraticBowl => {}
        }
        task
    }

    pub fn init_model(&self, rng: &mut ChaCha8Rng) -> Model {
        let layers = match self.kind {
            TaskKind::SyntheticLowrankRegression => {
                let s = self.init_std;
                let w = if s > 0.0 {
                    Matrix::from_fn(self.rows, self.cols, |_, _| s * normal(rng))
                } else {
                    Matrix::zeros(self.rows, self.cols)
                };
                vec![Layer {
                    name: "w".into(),
                    w,
                    low_rank_eligible: true,
                }]
            }
            TaskKind::QuadraticBowl => vec![Layer {
                name: "w".into(),
                w: Matrix::from_fn(self.rows, self.cols, |_, _| normal(rng)),
                low_rank_eligible: true,
            }],
            TaskKind::MlpClassification => {
                let s1 = 1.0 / (self.input_dim as f64).sqrt();
                let s2 = 1.0 / (self.hidden_dim as f64).sqrt();
                vec![
                    Layer {
                        name: "w1".into(),
                        w: Matrix::from_fn(self.hidden_dim, self.input_dim, |_, _| {
                            s1 * normal(rng)
                        }),
                        low_rank_eligible: true,
                    },
                    Layer {
                        name: "b1".into(),
                        w: Matrix::zeros(self.hidden_dim, 1),
                        low_rank_eligible: false,
                    },
                    Layer {
                        name: "w2".into(),
                        w: Matrix::from_fn(self.num_classes, self.hidden_dim, |_, _| {
                            s2 * normal(rng)
                        }),
                        low_rank_eligible: true,
                    },
                    Layer {
                        name: "b2".into(),
                        w: Matrix::zeros(self.num_classes, 1),
                        low_rank_eligible: false,
                    },
                ]
            }
        };
        Model { layers }
    }

    pub fn sample_batch(&self, rng: &mut ChaCha8Rng) -> Batch {
        self.sample_batch_of(self.batch_size, rng)
    }

    pub fn sample_batch_of(&self, size: usize, rng: &mut ChaCha8Rng) -> Batch {
        match self.kind {
            TaskKind::SyntheticLowrankRegression => {
                let x = Matrix::from_fn(self.cols, size, |_, _| normal(rng));
                let mut y = self
                    .w_true
                    .as_ref()
                    .expect("regression target")
                    .matmul(&x)
                    .unwrap();
                if self.label_std > 0.0 {
                    for v in y.data_mut() {
                        *v += self.label_std * normal(rng);
                    }
                }
                Batch { x, y }
            }
            TaskKind::MlpClassification => {
                let centers = self.centers.as_ref().expect("class centers");
                let labels: Vec<usize> = (0..size)
                    .map(|_| rng.gen_range(0..self.num_classes))
                    .collect();
                let mut x = Matrix::zeros(self.input_dim, size);
                for (col, &label) in labels.iter().enumerate() {
                    for row in 0..self.input_dim {
                        x.set(row, col, centers.get(label, row) + 0.5 * normal(rng));
                    }
                }
                let mut y = Matrix::zeros(self.num_classes, size);
                for (col, &label) in labels.iter().enumerate() {
                    y.set(label, col, 1.0);
                }
                Batch { x, y }
            }
            TaskKind::QuadraticBowl => Batch {
                x: Matrix::zeros(0, 0),
                y: Matrix::zeros(0, 0),
            },
        }
    }

    pub fn loss(&self, model: &Model, batch: &Batch) -> f64 {
        match self.kind {
            TaskKind::SyntheticLowrankRegression => {
                let w = &model.layers[0].w;
                let resid = w.matmul(&batch.x).unwrap().sub(&batch.y);
                let b = batch.x.cols() as f64;
                resid.frobenius_norm().powi(2) / (2.0 * b)
            }
            TaskKind::QuadraticBowl => {
                let w = &model.layers[0].w;
                w.frobenius_norm().powi(2)
            }
            TaskKind::MlpClassification => {
                let (_, _, probs) = self.mlp_forward(model, batch);
                let b = batch.x.cols() as f64;
                let mut loss = 0.0;
                for col in 0..batch.y.cols() {
                    for row in 0..batch.y.rows() {
                        if batch.y.get(row, col) > 0.0 {
                            loss -= probs.get(row, col).max(1e-300).ln();
                        }
                    }
                }
                loss / b
            }
        }
    }

    pub fn grad(&self, model: &Model, batch: &Batch) -> Vec<Matrix> {
        match self.kind {
            TaskKind::SyntheticLowrankRegression => {
                let w = &model.layers[0].w;
                let resid = w.matmul(&batch.x).unwrap().sub(&batch.y);
                let b = batch.x.cols() as f64;
                vec![resid.matmul_tr(&batch.x).unwrap().scaled(1.0 / b)]
            }
            TaskKind::QuadraticBowl => vec![model.layers[0].w.scaled(2.0)],
            TaskKind::MlpClassification => {
                let (a1, _, probs) = self.mlp_forward(model, batch);
                let b = batch.x.cols() as f64;
                let w2 = &model.layers[2].w;
                // dz2 = (probs - y) / b
                let dz2 = probs.sub(&batch.y).scaled(1.0 / b);
                let g_w2 = dz2.matmul_tr(&a1).unwrap();
                let g_b2 = row_sums(&dz2);
                let da1 = w2.tr_matmul(&dz2).unwrap();
                // tanh' = 1 - a1^2
                let mut dz1 = da1;
                for i in 0..dz1.rows() {
                    for j in 0..dz1.cols() {
                        let a = a1.get(i, j);
                        dz1.set(i, j, dz1.get(i, j) * (1.0 - a * a));
                    }
                }
                let g_w1 = dz1.matmul_tr(&batch.x).unwrap();
                let g_b1 = row_sums(&dz1);
                vec![g_w1, g_b1, g_w2, g_b2]
            }
        }
    }

    /// Returns (a1, z2, softmax(z2)).
    fn mlp_forward(&self, model: &Model, batch: &Batch) -> (Matrix, Matrix, Matrix) {
        let w1 = &model.layers[0].w;
        let b1 = &model.layers[1].w;
        let w2 = &model.layers[2].w;
        let b2 = &model.layers[3].w;
        let mut z1 = w1.matmul(&batch.x).unwrap();
        add_column_bias(&mut z1, b1);
        let a1 = z1.map(f64::tanh);
        let mut z2 = w2.matmul(&a1).unwrap();
        add_column_bias(&mut z2, b2);
        let probs = softmax_columns(&z2);
        (a1, z2, probs)
    }
}

fn add_column_bias(z: &mut Matrix, bias: &Matrix) {
    for i in 0..z.rows() {
        let b = bias.get(i, 0);
        for x in z.row_mut(i) {
            *x += b;
        }
    }
}

fn row_sums(m: &Matrix) -> Matrix {
    Matrix::from_fn(m.rows(), 1, |i, _| m.row(i).iter().sum())
}

fn softmax_columns(z: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for col in 0..z.cols() {
        let mut max = f64::NEG_INFINITY;
        for row in 0..z.rows() {
            max = max.max(z.get(row, col));
        }
        let mut total = 0.0;
        for row in 0..z.rows() {
            let e = (z.get(row, col) - max).exp();
            out.set(row, col, e);
            total += e;
        }
        for row in 0..z.rows() {
            out.set(row, col, out.get(row, col) / total);
        }
    }
    out
}

/// Central-difference check of the analytic gradients on `count` random
/// coordinates; fails if any relative error reaches `tol`.
pub fn finite_difference_check(
    task: &TaskInstance,
    model: &Model,
    batch: &Batch,
    rng: &mut ChaCha8Rng,
    count: usize,
    tol: f64,
) -> Result<(), RunError> {
    let grads = task.grad(model, batch);
    let mut probe = model.clone();
    for _ in 0..count {
        let l = rng.gen_range(0..model.layers.len());
        let (rows, cols) = model.layers[l].w.shape();
        let i = rng.gen_range(0..rows);
        let j = rng.gen_range(0..cols);
        let w0 = model.layers[l].w.get(i, j);
        let h = 1e-5 * (1.0 + w0.abs());

        probe.layers[l].w.set(i, j, w0 + h);
        let up = task.loss(&probe, batch);
        probe.layers[l].w.set(i, j, w0 - h);
        let down = task.loss(&probe, batch);
        probe.layers[l].w.set(i, j, w0);

        let fd = (up - down) / (2.0 * h);
        let analytic = grads[l].get(i, j);
        let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
        if rel >= tol {
            return Err(RunError::Config(format!(
                "gradient check failed at layer {} ({i}, {j}): analytic {analytic}, finite-difference {fd}, relative error {rel}",
                model.layers[l].name
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::OptimizerKind;
    use rand::SeedableRng;

    fn build(kind: TaskKind) -> (RunConfig, TaskInstance, Model, Batch, ChaCha8Rng) {
        let cfg = RunConfig {
            task: kind,
            optimizer: OptimizerKind::Adam,
            rows: 10,
            cols: 12,
            true_rank: 3,
            batch_size: 8,
            ..RunConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let task = TaskInstance::new(&cfg, &mut rng);
        let model = task.init_model(&mut rng);
        let batch = task.sample_batch(&mut rng);
        (cfg, task, model, batch, rng)
    }

    #[test]
    fn bowl_gradient_is_twice_weights() {
        let (_, task, model, batch, _) = build(TaskKind::QuadraticBowl);
        let grads = task.grad(&model, &batch);
        assert!(
            grads[0]
                .sub(&model.layers[0].w.scaled(2.0))
                .frobenius_norm()
                < 1e-15
        );
        assert!(
            (task.loss(&model, &batch) - model.layers[0].w.frobenius_norm().powi(2)).abs() < 1e-12
        );
    }

    #[test]
    fn regression_gradients_pass_finite_differences() {
        let (_, task, model, batch, mut rng) = build(TaskKind::SyntheticLowrankRegression);
        finite_difference_check(&task, &model, &batch, &mut rng, 10, 1e-4).unwrap();
    }

    #[test]
    fn mlp_gradients_pass_finite_differences() {
        let (_, task, model, batch, mut rng) = build(TaskKind::MlpClassification);
        finite_difference_check(&task, &model, &batch, &mut rng, 10, 1e-4).unwrap();
    }

    #[test]
    fn bowl_gradients_pass_finite_differences() {
        let (_, task, model, batch, mut rng) = build(TaskKind::QuadraticBowl);
        finite_difference_check(&task, &model, &batch, &mut rng, 10, 1e-4).unwrap();
    }

    #[test]
    fn tasks_are_deterministic_for_a_seed() {
        let (cfg, task, model, batch, _) = build(TaskKind::MlpClassification);
        let mut rng2 = ChaCha8Rng::seed_from_u64(cfg.seed);
        let task2 = TaskInstance::new(&cfg, &mut rng2);
        let model2 = task2.init_model(&mut rng2);
        let batch2 = task2.sample_batch(&mut rng2);
        assert_eq!(task.loss(&model, &batch), task2.loss(&model2, &batch2));
    }

    #[test]
    fn regression_gradient_rank_is_limited_by_residual_and_batch() {
        let numerical_rank = |cfg: &RunConfig| {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let task = TaskInstance::new(cfg, &mut rng);
            let model = task.init_model(&mut rng);
            let batch = task.sample_batch(&mut rng);
            let g = &task.grad(&model, &batch)[0];
            let dec = crate::linalg::svd(g).unwrap();
            dec.sigma
                .iter()
                .filter(|s| **s > 1e-10 * dec.sigma[0])
                .count()
        };
        let base = RunConfig {
            task: TaskKind::SyntheticLowrankRegression,
            rows: 64,
            cols: 64,
            true_rank: 4,
            batch_size: 16,
            ..RunConfig::default()
        };
        // From the origin with clean labels the residual is the rank-4 target.
        let clean = RunConfig {
            init_std: 0.0,
            label_std: 0.0,
            ..base.clone()
        };
        assert!(
            numerical_rank(&clean) <= 4,
            "clean rank {}",
            numerical_rank(&clean)
        );
        // A dense start raises the residual rank up to the batch limit.
        let dense = RunConfig {
            init_std: 1.0,
            ..base
        };
        let rank = numerical_rank(&dense);
        assert!(rank > 4 && rank <= 16, "dense rank {rank}");
    }

    #[test]
    fn mlp_one_hot_targets_and_probabilities() {
        let (_, task, model, batch, _) = build(TaskKind::MlpClassification);
        for col in 0..batch.y.cols() {
            let ones: f64 = (0..batch.y.rows()).map(|r| batch.y.get(r, col)).sum();
            assert_eq!(ones, 1.0);
        }
        let (_, _, probs) = task.mlp_forward(&model, &batch);
        for col in 0..probs.cols() {
            let total: f64 = (0..probs.rows()).map(|r| probs.get(r, col)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
