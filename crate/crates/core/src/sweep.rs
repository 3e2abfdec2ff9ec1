//! Seeded experiment sweeps: a manifest describes the dataset, the
//! architectures to train, and the trial count; the runner fans trials out
//! to a thread pool and aggregates per-architecture statistics. All outputs
//! are byte-reproducible for a fixed manifest.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{self, Dataset, MmiLog};
use crate::erm::{train, RunReport, SplitData, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::median;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    /// square | partial-radial | radial-noisy | mmi
    pub generator: String,
    pub m_train: usize,
    pub m_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude_range: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_range: Option<(f64, f64)>,
    #[serde(default)]
    pub mmi_log10: bool,
}

impl DataSpec {
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        let m = self.m_train + self.m_test;
        match self.generator.as_str() {
            "square" => datagen::gen_square_feature(m, seed),
            "partial-radial" => datagen::gen_partial_radial(
                m,
                self.k
                    .ok_or_else(|| Error::InvalidParam("partial-radial needs k".into()))?,
                seed,
            ),
            "radial-noisy" => datagen::gen_radial_noisy(m, self.sigma2.unwrap_or(0.1), seed),
            "mmi" => datagen::gen_mmi(
                m,
                seed,
                self.magnitude_range.unwrap_or((4.0, 8.0)),
                self.distance_range.unwrap_or((1.0, 200.0)),
                if self.mmi_log10 {
                    MmiLog::Base10
                } else {
                    MmiLog::Natural
                },
            ),
            other => Err(Error::InvalidParam(format!("unknown generator '{other}'"))),
        }
    }
}

/// One architecture/optimizer configuration inside a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub label: String,
    /// Hidden-layer widths (input/output widths come from the data).
    pub hidden: Vec<usize>,
    pub r0: f64,
    #[serde(default = "default_decay_rate")]
    pub decay_rate: f64,
    #[serde(default = "default_decay_step")]
    pub decay_step: u64,
    pub iterations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_clip: Option<f64>,
}

fn default_decay_rate() -> f64 {
    0.95
}
fn default_decay_step() -> u64 {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub name: String,
    pub seed: u64,
    pub trials: u32,
    pub data: DataSpec,
    pub runs: Vec<RunSpec>,
}

impl SweepManifest {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.runs.is_empty() {
            return Err(Error::InvalidParam(
                "sweep needs at least one trial and one run".into(),
            ));
        }
        Ok(())
    }

    /// Stable hash of the manifest for replay bookkeeping.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("manifest serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex_prefix(&digest, 16)
    }
}

fn hex_prefix(bytes: &[u8], len: usize) -> String {
    let mut s = String::with_capacity(len);
    for b in bytes {
        use std::fmt::Write as _;
        let _ = write!(s, "{b:02x}");
        if s.len() >= len {
            break;
        }
    }
    s.truncate(len);
    s
}

/// Mean/median aggregate of a metric across trials.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub label: String,
    pub depth: usize,
    pub trials: usize,
    pub valid_rate: f64,
    pub mean_train_mse: f64,
    pub mean_test_mse: f64,
    pub median_test_mse: f64,
    pub mean_test_mae: f64,
    pub median_test_mae: f64,
    pub mean_r2s: Option<f64>,
    pub mean_evs_paper: Option<f64>,
    pub mean_test_mse_clean: Option<f64>,
    pub median_test_mse_clean: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunOutcome {
    pub spec: RunSpec,
    pub reports: Vec<RunReport>,
    pub aggregate: Aggregate,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub manifest: SweepManifest,
    pub manifest_hash: String,
    pub outcomes: Vec<RunOutcome>,
}

fn trial_seed(base: u64, trial: u32) -> u64 {
    base.wrapping_add((trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Runs the sweep; trials within each run execute in parallel but results
/// are collected in trial order, so output is independent of scheduling.
pub fn run_sweep(manifest: &SweepManifest, workers: Option<usize>) -> Result<SweepResult> {
    manifest.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidParam(format!("thread pool: {e}")))?;

    // Datasets are shared across runs within a trial (paired comparison).
    let splits: Vec<SplitData> = (0..manifest.trials)
        .map(|t| {
            let ds = manifest.data.generate(trial_seed(manifest.seed, t))?;
            let (train_ds, test_ds) = ds.split(manifest.data.m_train)?;
            SplitData::from_datasets(&train_ds, &test_ds)
        })
        .collect::<Result<_>>()?;
    let input_dim = splits[0].train_x.ncols();

    let mut outcomes = Vec::with_capacity(manifest.runs.len());
    for (run_idx, spec) in manifest.runs.iter().enumerate() {
        let reports: Vec<RunReport> = pool.install(|| {
            (0..manifest.trials as usize)
                .into_par_iter()
                .map(|t| {
                    let mut shape = Vec::with_capacity(spec.hidden.len() + 2);
                    shape.push(input_dim);
                    shape.extend_from_slice(&spec.hidden);
                    shape.push(1);
                    let cfg = TrainConfig {
                        shape,
                        r0: spec.r0,
                        decay_rate: spec.decay_rate,
                        decay_step: spec.decay_step,
                        iterations: spec.iterations,
                        batch_size: spec.batch_size,
                        seed: trial_seed(
                            manifest.seed ^ 0xA5A5_0000,
                            t as u32 * 101 + run_idx as u32,
                        ),
                        m_clip: spec.m_clip,
                        init_scheme: "fan-balanced-uniform".into(),
                    };
                    train(&cfg, &splits[t])
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let aggregate = aggregate_reports(spec, &reports);
        outcomes.push(RunOutcome {
            spec: spec.clone(),
            reports,
            aggregate,
        });
    }
    Ok(SweepResult {
        manifest: manifest.clone(),
        manifest_hash: manifest.hash(),
        outcomes,
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn aggregate_reports(spec: &RunSpec, reports: &[RunReport]) -> Aggregate {
    let test_mse: Vec<f64> = reports.iter().map(|r| r.test.mse).collect();
    let test_mae: Vec<f64> = reports.iter().map(|r| r.test.mae).collect();
    let train_mse: Vec<f64> = reports.iter().map(|r| r.final_train_mse).collect();
    let r2s: Vec<f64> = reports.iter().filter_map(|r| r.test.r2s).collect();
    let evs: Vec<f64> = reports.iter().filter_map(|r| r.test.evs_paper).collect();
    let clean: Vec<f64> = reports
        .iter()
        .filter_map(|r| r.test_clean.as_ref().map(|m| m.mse))
        .collect();
    Aggregate {
        label: spec.label.clone(),
        depth: spec.hidden.len(),
        trials: reports.len(),
        valid_rate: reports.iter().filter(|r| r.valid).count() as f64 / reports.len() as f64,
        mean_train_mse: mean(&train_mse),
        mean_test_mse: mean(&test_mse),
        median_test_mse: median(&test_mse),
        mean_test_mae: mean(&test_mae),
        median_test_mae: median(&test_mae),
        mean_r2s: (!r2s.is_empty()).then(|| mean(&r2s)),
        mean_evs_paper: (!evs.is_empty()).then(|| mean(&evs)),
        mean_test_mse_clean: (!clean.is_empty()).then(|| mean(&clean)),
        median_test_mse_clean: (!clean.is_empty()).then(|| median(&clean)),
    }
}

impl SweepResult {
    /// One JSON line per (run, trial); wall times are cleared so a replay
    /// reproduces the bytes exactly.
    pub fn write_reports_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for outcome in &self.outcomes {
            for (trial, report) in outcome.reports.iter().enumerate() {
                let mut r = report.clone();
                r.wall_time_s = None;
                let line = serde_json::json!({
                    "manifest_hash": self.manifest_hash,
                    "sweep": self.manifest.name,
                    "label": outcome.spec.label,
                    "trial": trial,
                    "report": r,
                });
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    /// Plot-ready aggregate CSV (one row per run).
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "manifest_hash,sweep,label,depth,trials,valid_rate,mean_train_mse,\
             mean_test_mse,median_test_mse,mean_test_mae,median_test_mae,\
             mean_r2s,mean_evs_paper,mean_test_mse_clean,median_test_mse_clean"
        )?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        for outcome in &self.outcomes {
            let a = &outcome.aggregate;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.manifest_hash,
                self.manifest.name,
                a.label,
                a.depth,
                a.trials,
                a.valid_rate,
                a.mean_train_mse,
                a.mean_test_mse,
                a.median_test_mse,
                a.mean_test_mae,
                a.median_test_mae,
                opt(a.mean_r2s),
                opt(a.mean_evs_paper),
                opt(a.mean_test_mse_clean),
                opt(a.median_test_mse_clean),
            )?;
        }
        Ok(())
    }

    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let reports = std::fs::File::create(dir.join("reports.jsonl"))?;
        self.write_reports_jsonl(std::io::BufWriter::new(reports))?;
        let summary = std::fs::File::create(dir.join("summary.csv"))?;
        self.write_summary_csv(std::io::BufWriter::new(summary))?;
        Ok(())
    }

    /// True when every trained run diverged.
    pub fn all_diverged(&self) -> bool {
        self.outcomes
            .iter()
            .flat_map(|o| o.reports.iter())
            .all(|r| r.diverged)
    }
}
