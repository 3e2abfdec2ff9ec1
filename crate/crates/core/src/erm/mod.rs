//! Empirical risk minimization on small dense ReLU nets: seeded training
//! runs with Adam, step decay, optional prediction truncation, and the full
//! metric battery on the test split.

pub mod adam;
pub mod mlp;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{truncate, AdamState};
pub use mlp::{Gradients, Mlp};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, MetricsReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Layer widths including input and output, e.g. [10, 60, 60, 60, 1].
    pub shape: Vec<usize>,
    /// Initial descent step r0.
    pub r0: f64,
    /// Decay factor D in (0, 1].
    pub decay_rate: f64,
    /// Decay period in steps.
    pub decay_step: u64,
    /// Total optimization steps.
    pub iterations: u64,
    /// Mini-batch size; None trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Truncation level M applied to test predictions (noisy regression).
    pub m_clip: Option<f64>,
    /// Initializer name; "fan-balanced-uniform" is the only scheme.
    #[serde(default = "default_init_scheme")]
    pub init_scheme: String,
}

fn default_init_scheme() -> String {
    "fan-balanced-uniform".into()
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shape.len() < 2 || self.shape.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParam("shape needs >= 2 positive widths".into()));
        }
        if !(self.r0 > 0.0) {
            return Err(Error::InvalidParam("r0 must be positive".into()));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::InvalidParam("decay rate must lie in (0,1]".into()));
        }
        if self.decay_step == 0 {
            return Err(Error::InvalidParam("decay step must be >= 1".into()));
        }
        if self.init_scheme != "fan-balanced-uniform" {
            return Err(Error::InvalidParam(format!(
                "unknown init scheme '{}'",
                self.init_scheme
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub final_train_mse: f64,
    /// Metrics against the (possibly noisy) test targets.
    pub test: MetricsReport,
    /// Metrics against clean test targets when the dataset stores them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_clean: Option<MetricsReport>,
    /// (step, train-batch mse) samples.
    pub loss_history: Vec<(u64, f64)>,
    /// Finite losses and better than the constant-mean predictor.
    pub valid: bool,
    pub diverged: bool,
    /// Wall time is provenance, not an experiment output; sweep writers
    /// clear it so replays are byte-identical.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

/// Train/test split in matrix form.
pub struct SplitData {
    pub train_x: Array2<f64>,
    pub train_y: Array1<f64>,
    pub test_x: Array2<f64>,
    pub test_y: Array1<f64>,
    pub test_y_clean: Option<Array1<f64>>,
}

impl SplitData {
    pub fn from_datasets(train: &Dataset, test: &Dataset) -> Result<SplitData> {
        Ok(SplitData {
            train_x: to_matrix(&train.inputs)?,
            train_y: Array1::from_vec(train.targets.clone()),
            test_x: to_matrix(&test.inputs)?,
            test_y: Array1::from_vec(test.targets.clone()),
            test_y_clean: test
                .clean_targets
                .as_ref()
                .map(|c| Array1::from_vec(c.clone())),
        })
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let m = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if m == 0 || d == 0 {
        return Err(Error::InvalidParam("empty data".into()));
    }
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Array2::from_shape_vec((m, d), flat)
        .map_err(|e| Error::InvalidParam(format!("ragged data: {e}")))
}

/// Full training loop. Divergence (non-finite loss or activations) stops the
/// run; metrics then come from the last finite parameter state and the
/// report is marked invalid.
pub fn train(cfg: &TrainConfig, data: &SplitData) -> Result<RunReport> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let m = data.train_x.nrows();
    if data.train_x.ncols() != cfg.shape[0] {
        return Err(Error::DimMismatch(format!(
            "data dim {} != net input {}",
            data.train_x.ncols(),
            cfg.shape[0]
        )));
    }
    let mut net = Mlp::init(&cfg.shape, cfg.seed)?;
    let mut adam = AdamState::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_BA7C);

    let batch = cfg.batch_size.unwrap_or(m).min(m).max(1);
    let mut order: Vec<usize> = (0..m).collect();
    let mut cursor = m; // triggers a shuffle on first use

    let mut loss_history = Vec::new();
    let history_stride = (cfg.iterations / 100).max(1);
    let mut last_good = net.clone();
    let mut diverged = false;

    for step in 0..cfg.iterations {
        let (bx, by) = if batch == m {
            (data.train_x.clone(), data.train_y.clone())
        } else {
            if cursor + batch > m {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let idx = &order[cursor..cursor + batch];
            cursor += batch;
            let bx = Array2::from_shape_fn((batch, cfg.shape[0]), |(i, j)| {
                data.train_x[[idx[i], j]]
            });
            let by = Array1::from_shape_fn(batch, |i| data.train_y[idx[i]]);
            (bx, by)
        };

        let grads = match net.grad_mse(&bx, &by) {
            Ok(g) => g,
            Err(Error::Diverged(_)) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let rate = AdamState::rate(cfg.r0, cfg.decay_rate, cfg.decay_step, step);
        if adam.step(&mut net, &grads, rate).is_err() {
            diverged = true;
            break;
        }
        if step % history_stride == 0 {
            let loss = net.mse(&bx, &by);
            if !loss.is_finite() {
                diverged = true;
                break;
            }
            loss_history.push((step, loss));
            last_good = net.clone();
        }
    }
    let final_net = if diverged { &last_good } else { &net };

    let final_train_mse = final_net.mse(&data.train_x, &data.train_y);
    let mut preds = final_net.predict_scalar(&data.test_x).to_vec();
    if let Some(mc) = cfg.m_clip {
        for p in preds.iter_mut() {
            *p = truncate(*p, mc);
        }
    }
    let test = compute_metrics(&preds, data.test_y.as_slice().expect("contiguous"))?;
    let test_clean = match &data.test_y_clean {
        Some(clean) => Some(compute_metrics(&preds, clean.as_slice().expect("contiguous"))?),
        None => None,
    };

    // Constant-mean baseline (train mean scored on test targets).
    let train_mean = data.train_y.mean().unwrap_or(0.0);
    let baseline: f64 = data
        .test_y
        .iter()
        .map(|&y| (y - train_mean) * (y - train_mean))
        .sum::<f64>()
        / data.test_y.len() as f64;
    let finite = final_train_mse.is_finite() && test.mse.is_finite();
    let valid = !diverged && finite && test.mse < baseline;

    Ok(RunReport {
        config: cfg.clone(),
        final_train_mse,
        test,
        test_clean,
        loss_history,
        valid,
        diverged,
        wall_time_s: Some(start.elapsed().as_secs_f64()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_dataset(m: usize, seed: u64) -> (Dataset, Dataset) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let targets: Vec<f64> = inputs
            .iter()
            .map(|x| 2.0 * x[0] - x[1] + 0.5 * x[2] + 0.25)
            .collect();
        let ds = Dataset {
            inputs,
            targets,
            clean_targets: None,
            meta: crate::datagen::DataMeta {
                generator: "linear".into(),
                seed,
                noise_sigma2: None,
                params: Default::default(),
            },
        };
        ds.split(m - 50).unwrap()
    }

    fn base_config() -> TrainConfig {
        TrainConfig {
            shape: vec![3, 16, 1],
            r0: 0.01,
            decay_rate: 0.95,
            decay_step: 1000,
            iterations: 1500,
            batch_size: Some(64),
            seed: 7,
            m_clip: None,
            init_scheme: default_init_scheme(),
        }
    }

    #[test]
    fn linearly_realizable_data_trains_to_small_mse() {
        let (train, test) = linear_dataset(450, 3);
        let data = SplitData::from_datasets(&train, &test).unwrap();
        let report = train_run(&data);
        assert!(report.valid);
        assert!(
            report.final_train_mse <= 1e-3,
            "train mse {}",
            report.final_train_mse
        );
    }

    fn train_run(data: &SplitData) -> RunReport {
        train(&base_config(), data).unwrap()
    }

    #[test]
    fn deterministic_reports() {
        let (tr, te) = linear_dataset(300, 4);
        let data = SplitData::from_datasets(&tr, &te).unwrap();
        let mut a = train(&base_config(), &data).unwrap();
        let mut b = train(&base_config(), &data).unwrap();
        a.wall_time_s = None;
        b.wall_time_s = None;
        assert_eq!(a, b);
    }

    #[test]
    fn loss_not_worse_than_start() {
        let (tr, te) = linear_dataset(300, 5);
        let data = SplitData::from_datasets(&tr, &te).unwrap();
        let report = train(&base_config(), &data).unwrap();
        let first = report.loss_history.first().unwrap().1;
        assert!(report.final_train_mse <= first);
    }

    #[test]
    fn truncation_never_hurts_when_targets_bounded() {
        let (tr, te) = linear_dataset(300, 6);
        let data = SplitData::from_datasets(&tr, &te).unwrap();
        let m_clip = data.test_y.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let mut cfg = base_config();
        cfg.iterations = 200;
        let plain = train(&cfg, &data).unwrap();
        cfg.m_clip = Some(m_clip);
        let clipped = train(&cfg, &data).unwrap();
        assert!(clipped.test.mse <= plain.test.mse + 1e-12);
    }
}
