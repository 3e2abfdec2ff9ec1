//! The five evaluation measures used by the experiment tables, kept exactly
//! as printed (including the nonstandard median-absolute-error and
//! explained-variance forms), with the standard variants alongside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_points: usize,
    pub mse: f64,
    pub mae: f64,
    /// median(|f_i - median(y)|): the tables' printed MdAE.
    pub mdae_paper: f64,
    /// median(|y_i - f_i|).
    pub mdae_standard: f64,
    /// 1 - sum (y-f)^2 / sum (y-mean(y))^2; None when targets are constant.
    pub r2s: Option<f64>,
    /// 1 - sum (y-f)^2 / sum y^2; None when all targets are zero.
    pub evs_paper: Option<f64>,
    /// 1 - var(y-f) / var(y); None when targets are constant.
    pub evs_standard: Option<f64>,
}

/// Lower median: for even counts the smaller of the two central order
/// statistics, so the result is always an attained value and deterministic.
pub fn median(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    v[(v.len() - 1) / 2]
}

pub fn compute_metrics(predictions: &[f64], targets: &[f64]) -> Result<MetricsReport> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::DimMismatch(format!(
            "metrics need equal nonempty lengths, got {} and {}",
            predictions.len(),
            targets.len()
        )));
    }
    let n = predictions.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut sum_y = 0.0;
    let mut sum_y2 = 0.0;
    for (&f, &y) in predictions.iter().zip(targets) {
        let e = f - y;
        sq += e * e;
        abs += e.abs();
        sum_y += y;
        sum_y2 += y * y;
    }
    let mean_y = sum_y / n;
    let ss_tot: f64 = targets.iter().map(|&y| (y - mean_y) * (y - mean_y)).sum();

    let med_y = median(targets);
    let dev_from_med: Vec<f64> = predictions.iter().map(|&f| (f - med_y).abs()).collect();
    let abs_err: Vec<f64> = predictions
        .iter()
        .zip(targets)
        .map(|(&f, &y)| (f - y).abs())
        .collect();

    let resid: Vec<f64> = predictions.iter().zip(targets).map(|(&f, &y)| y - f).collect();
    let mean_resid = resid.iter().sum::<f64>() / n;
    let var_resid = resid.iter().map(|&e| (e - mean_resid) * (e - mean_resid)).sum::<f64>() / n;
    let var_y = ss_tot / n;

    Ok(MetricsReport {
        n_points: predictions.len(),
        mse: sq / n,
        mae: abs / n,
        mdae_paper: median(&dev_from_med),
        mdae_standard: median(&abs_err),
        r2s: (ss_tot > 0.0).then(|| 1.0 - sq / ss_tot),
        evs_paper: (sum_y2 > 0.0).then(|| 1.0 - sq / sum_y2),
        evs_standard: (var_y > 0.0).then(|| 1.0 - var_resid / var_y),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_fit() {
        let y = vec![1.0, -2.0, 3.5];
        let m = compute_metrics(&y, &y).unwrap();
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.r2s, Some(1.0));
        assert_eq!(m.evs_paper, Some(1.0));
    }

    #[test]
    fn constant_mean_prediction_gives_zero_r2() {
        let y = vec![1.0, 2.0, 3.0, 6.0];
        let mean = y.iter().sum::<f64>() / 4.0;
        let preds = vec![mean; 4];
        let m = compute_metrics(&preds, &y).unwrap();
        assert!((m.r2s.unwrap() - 0.0).abs() < 1e-12);
    }

    #[test]
    fn hand_case() {
        let y = vec![1.0, 2.0, 3.0];
        let f = vec![1.0, 2.0, 4.0];
        let m = compute_metrics(&f, &y).unwrap();
        assert!((m.mse - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.mae - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.mdae_standard, 0.0);
        // Paper MdAE: median(|f_i - median(y)|) = median(|1-2|,|2-2|,|4-2|) = 1.
        assert_eq!(m.mdae_paper, 1.0);
    }

    #[test]
    fn degenerate_denominators_flagged_not_crashing() {
        let y = vec![2.0, 2.0, 2.0];
        let f = vec![1.0, 2.0, 3.0];
        let m = compute_metrics(&f, &y).unwrap();
        assert!(m.r2s.is_none());
        assert!(m.evs_standard.is_none());
        assert!(m.evs_paper.is_some());

        let zeros = vec![0.0, 0.0];
        let m = compute_metrics(&[0.1, -0.1], &zeros).unwrap();
        assert!(m.evs_paper.is_none());
    }

    #[test]
    fn shift_moves_evs_paper_but_not_r2s() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f: Vec<f64> = y.iter().map(|v| v + rng.gen_range(-0.1..0.1)).collect();
        let m0 = compute_metrics(&f, &y).unwrap();
        let shift = 3.0;
        let y2: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let f2: Vec<f64> = f.iter().map(|v| v + shift).collect();
        let m1 = compute_metrics(&f2, &y2).unwrap();
        assert!((m0.r2s.unwrap() - m1.r2s.unwrap()).abs() < 1e-9);
        assert!((m0.evs_paper.unwrap() - m1.evs_paper.unwrap()).abs() > 1e-6);
    }

    #[test]
    fn lower_median_convention() {
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]), 2.0);
        assert_eq!(median(&[3.0, 1.0]), 1.0);
        assert_eq!(median(&[5.0]), 5.0);
    }
}
