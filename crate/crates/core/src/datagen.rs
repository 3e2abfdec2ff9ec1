//! Seeded synthetic dataset generators for the regression experiments.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataMeta {
    pub generator: String,
    pub seed: u64,
    pub noise_sigma2: Option<f64>,
    pub params: BTreeMap<String, f64>,
}

/// A generated dataset; `clean_targets` accompanies noisy generators so both
/// noisy- and clean-label metrics can be reported.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub clean_targets: Option<Vec<f64>>,
    pub meta: DataMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    /// Front/back split into train and test portions.
    pub fn split(&self, m_train: usize) -> Result<(Dataset, Dataset)> {
        if m_train == 0 || m_train >= self.len() {
            return Err(Error::InvalidParam(format!(
                "split point {m_train} out of range for {} samples",
                self.len()
            )));
        }
        let cut = |lo: usize, hi: usize| Dataset {
            inputs: self.inputs[lo..hi].to_vec(),
            targets: self.targets[lo..hi].to_vec(),
            clean_targets: self.clean_targets.as_ref().map(|c| c[lo..hi].to_vec()),
            meta: self.meta.clone(),
        };
        Ok((cut(0, m_train), cut(m_train, self.len())))
    }

    /// CSV with header x1..xd, y and optionally y_clean.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim();
        let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        header.push("y".into());
        if self.clean_targets.is_some() {
            header.push("y_clean".into());
        }
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.inputs[i].iter().map(|v| format!("{v}")).collect();
            row.push(format!("{}", self.targets[i]));
            if let Some(clean) = &self.clean_targets {
                row.push(format!("{}", clean[i]));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv_path(path: &Path) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let headers = rdr.headers()?.clone();
        let has_clean = headers.iter().any(|h| h == "y_clean");
        let y_pos = headers
            .iter()
            .position(|h| h == "y")
            .ok_or_else(|| Error::InvalidParam("csv missing y column".into()))?;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut clean = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| Error::InvalidParam(format!("bad csv number '{s}': {e}")))
            };
            let mut row = Vec::with_capacity(y_pos);
            for i in 0..y_pos {
                row.push(parse(&rec[i])?);
            }
            inputs.push(row);
            targets.push(parse(&rec[y_pos])?);
            if has_clean {
                clean.push(parse(&rec[y_pos + 1])?);
            }
        }
        Ok(Dataset {
            inputs,
            targets,
            clean_targets: has_clean.then_some(clean),
            meta: DataMeta {
                generator: "csv".into(),
                seed: 0,
                noise_sigma2: None,
                params: BTreeMap::new(),
            },
        })
    }
}

fn uniform_inputs(rng: &mut ChaCha8Rng, m: usize, d: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| (0..d).map(|_| rng.gen_range(lo..hi)).collect())
        .collect()
}

/// Square feature: f(x) = sum_{j=1..10} x_j^2 on [-100,100]^10, noiseless.
pub fn gen_square_feature(m: usize, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::InvalidParam("need m >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = uniform_inputs(&mut rng, m, 10, -100.0, 100.0);
    let targets = inputs
        .iter()
        .map(|x| x.iter().map(|t| t * t).sum())
        .collect();
    Ok(Dataset {
        inputs,
        targets,
        clean_targets: None,
        meta: DataMeta {
            generator: "square".into(),
            seed,
            noise_sigma2: None,
            params: BTreeMap::new(),
        },
    })
}

/// Partially radial feature: f_k(x) = sum_{j<=k} x_j^2 + sum_{j>k} x_j on
/// [-100,100]^10, noiseless; the experiment grid sweeps k in 2..=9.
pub fn gen_partial_radial(m: usize, k: usize, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::InvalidParam("need m >= 1".into()));
    }
    if !(2..=9).contains(&k) {
        return Err(Error::InvalidParam("k must lie in 2..=9".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = uniform_inputs(&mut rng, m, 10, -100.0, 100.0);
    let targets = inputs
        .iter()
        .map(|x| {
            x[..k].iter().map(|t| t * t).sum::<f64>() + x[k..].iter().sum::<f64>()
        })
        .collect();
    let mut params = BTreeMap::new();
    params.insert("k".into(), k as f64);
    Ok(Dataset {
        inputs,
        targets,
        clean_targets: None,
        meta: DataMeta {
            generator: "partial-radial".into(),
            seed,
            noise_sigma2: None,
            params,
        },
    })
}

/// Noisy radial target y = sin(|x|^2)/|x|^2 + N(0, sigma2) on [-1,1]^2;
/// the removable singularity at 0 evaluates to 1. Clean targets stored.
pub fn gen_radial_noisy(m: usize, sigma2: f64, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::InvalidParam("need m >= 1".into()));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidParam("sigma2 must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = uniform_inputs(&mut rng, m, 2, -1.0, 1.0);
    let clean: Vec<f64> = inputs.iter().map(|x| sinc_norm2(x)).collect();
    let normal = Normal::new(0.0, sigma2.sqrt())
        .map_err(|e| Error::InvalidParam(format!("noise: {e}")))?;
    let targets = clean.iter().map(|&c| c + normal.sample(&mut rng)).collect();
    let mut params = BTreeMap::new();
    params.insert("sigma2".into(), sigma2);
    Ok(Dataset {
        inputs,
        targets,
        clean_targets: Some(clean),
        meta: DataMeta {
            generator: "radial-noisy".into(),
            seed,
            noise_sigma2: Some(sigma2),
            params,
        },
    })
}

pub fn sinc_norm2(x: &[f64]) -> f64 {
    let t: f64 = x.iter().map(|v| v * v).sum();
    if t == 0.0 {
        1.0
    } else {
        t.sin() / t
    }
}

/// Log convention for the seismic-intensity formula; the source convention
/// is not recoverable, natural log is the default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MmiLog {
    Natural,
    Base10,
}

/// Synthetic Modified Mercalli intensity:
/// exp(1.2655 + 0.2089 M - 0.0011 d - 0.2451 log(d + 2.1502 M)).
pub fn mmi_formula(magnitude: f64, distance: f64, log: MmiLog) -> f64 {
    let lg = match log {
        MmiLog::Natural => (distance + 2.1502 * magnitude).ln(),
        MmiLog::Base10 => (distance + 2.1502 * magnitude).log10(),
    };
    (1.2655 + 0.2089 * magnitude - 0.0011 * distance - 0.2451 * lg).exp()
}

/// MMI samples over uniform (magnitude, distance) inputs; 900 samples is the
/// reference size.
pub fn gen_mmi(
    m: usize,
    seed: u64,
    magnitude_range: (f64, f64),
    distance_range: (f64, f64),
    log: MmiLog,
) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::InvalidParam("need m >= 1".into()));
    }
    if magnitude_range.0 >= magnitude_range.1 || distance_range.0 >= distance_range.1 {
        return Err(Error::InvalidParam("ranges must be increasing".into()));
    }
    if distance_range.0 < 0.0 || magnitude_range.0 < 0.0 {
        return Err(Error::InvalidParam("ranges must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            vec![
                rng.gen_range(magnitude_range.0..magnitude_range.1),
                rng.gen_range(distance_range.0..distance_range.1),
            ]
        })
        .collect();
    let targets = inputs.iter().map(|x| mmi_formula(x[0], x[1], log)).collect();
    let mut params = BTreeMap::new();
    params.insert("mag_lo".into(), magnitude_range.0);
    params.insert("mag_hi".into(), magnitude_range.1);
    params.insert("dist_lo".into(), distance_range.0);
    params.insert("dist_hi".into(), distance_range.1);
    params.insert(
        "log10".into(),
        if log == MmiLog::Base10 { 1.0 } else { 0.0 },
    );
    Ok(Dataset {
        inputs,
        targets,
        clean_targets: None,
        meta: DataMeta {
            generator: "mmi".into(),
            seed,
            noise_sigma2: None,
            params,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_values() {
        let ds = gen_square_feature(100, 7).unwrap();
        for (x, &y) in ds.inputs.iter().zip(&ds.targets) {
            assert_eq!(y, x.iter().map(|t| t * t).sum::<f64>());
            assert!(x.iter().all(|&v| (-100.0..100.0).contains(&v)));
        }
        // Corner value by hand: 10 * 100^2.
        assert_eq!(
            vec![100.0; 10].iter().map(|t| t * t).sum::<f64>(),
            100_000.0
        );
    }

    #[test]
    fn partial_radial_values() {
        let ds = gen_partial_radial(50, 2, 1).unwrap();
        for (x, &y) in ds.inputs.iter().zip(&ds.targets) {
            let expect = x[0] * x[0] + x[1] * x[1] + x[2..].iter().sum::<f64>();
            assert!((y - expect).abs() < 1e-9);
        }
        assert!(gen_partial_radial(10, 1, 0).is_err());
        assert!(gen_partial_radial(10, 10, 0).is_err());
    }

    #[test]
    fn radial_clean_values() {
        // sin(pi/2)/(pi/2) = 2/pi at |x|^2 = pi/2, and the limit 1 at 0.
        let t = std::f64::consts::FRAC_PI_2;
        let x = [t.sqrt(), 0.0];
        assert!((sinc_norm2(&x) - 2.0 / std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(sinc_norm2(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn radial_noise_variance() {
        let ds = gen_radial_noisy(4000, 0.1, 3).unwrap();
        let clean = ds.clean_targets.as_ref().unwrap();
        let noise: Vec<f64> = ds
            .targets
            .iter()
            .zip(clean)
            .map(|(&y, &c)| y - c)
            .collect();
        let mean = noise.iter().sum::<f64>() / noise.len() as f64;
        let var = noise.iter().map(|&e| (e - mean) * (e - mean)).sum::<f64>() / noise.len() as f64;
        assert!((var - 0.1).abs() < 0.01, "var {var}");
    }

    #[test]
    fn mmi_value_and_monotonicity() {
        // (M=5, d=10) under natural log.
        let v = mmi_formula(5.0, 10.0, MmiLog::Natural);
        let expect =
            (1.2655 + 0.2089 * 5.0 - 0.0011 * 10.0 - 0.2451 * (10.0 + 2.1502 * 5.0f64).ln()).exp();
        assert_eq!(v, expect);
        // Decreasing in distance, increasing in magnitude (checked on a grid).
        for &m in &[4.0, 5.5, 7.0] {
            for i in 0..20 {
                let d0 = 1.0 + 10.0 * i as f64;
                assert!(mmi_formula(m, d0 + 5.0, MmiLog::Natural) < mmi_formula(m, d0, MmiLog::Natural));
            }
        }
        for &d in &[1.0, 50.0, 150.0] {
            for i in 0..20 {
                let m0 = 4.0 + 0.2 * i as f64;
                assert!(mmi_formula(m0 + 0.1, d, MmiLog::Natural) > mmi_formula(m0, d, MmiLog::Natural));
            }
        }
    }

    #[test]
    fn reproducible_bytes() {
        let a = gen_square_feature(64, 11).unwrap();
        let b = gen_square_feature(64, 11).unwrap();
        assert_eq!(a, b);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.write_csv(&mut buf_a).unwrap();
        b.write_csv(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn csv_roundtrip() {
        let ds = gen_radial_noisy(20, 0.1, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        ds.write_csv_path(&path).unwrap();
        let back = Dataset::read_csv_path(&path).unwrap();
        assert_eq!(ds.inputs, back.inputs);
        assert_eq!(ds.targets, back.targets);
        assert_eq!(ds.clean_targets, back.clean_targets);
    }
}
