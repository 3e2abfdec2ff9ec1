//! Covering-number capacity bounds and iso-capacity depth-parameter curves.
//!
//! The deep bound is log2 of (C R D_max)^(3(L+1)^2 n) * eps^(-n); the
//! shallow comparison is O(n log(R/eps)) with a user-supplied constant.
//! Logarithms are base 2 (entropy reading).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityQuery {
    /// Free-parameter count n.
    pub n: u64,
    /// Depth L (hidden layers).
    pub l: u32,
    /// Magnitude bound R on weights and thresholds.
    pub r_bound: f64,
    /// Maximum layer width D_max.
    pub d_max: f64,
    /// Covering radius in (0,1).
    pub epsilon: f64,
    /// The dimension-dependent constant C (default 1; unspecified upstream).
    pub c_dim: f64,
}

impl CapacityQuery {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.l == 0 {
            return Err(Error::InvalidParam("n and L must be positive".into()));
        }
        if !(self.r_bound > 0.0 && self.d_max > 0.0 && self.c_dim > 0.0) {
            return Err(Error::InvalidParam("R, D_max, C must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParam("epsilon must lie in (0,1)".into()));
        }
        Ok(())
    }

    fn crd(&self) -> f64 {
        self.c_dim * self.r_bound * self.d_max
    }
}

/// log2 covering-number bound for deep nets:
/// 3 (L+1)^2 n log2(C R D_max) + n log2(1/eps).
///
/// Degenerate when C*R*D_max <= 1 (the log factor goes nonpositive).
pub fn deep_log_covering_bound(q: &CapacityQuery) -> Result<f64> {
    q.validate()?;
    let crd = q.crd();
    if crd <= 1.0 {
        return Err(Error::DegenerateBound(format!(
            "C*R*D_max = {crd} <= 1: log term nonpositive"
        )));
    }
    let n = q.n as f64;
    let lp1 = (q.l + 1) as f64;
    Ok(3.0 * lp1 * lp1 * n * crd.log2() + n * (1.0 / q.epsilon).log2())
}

/// Shallow-net log2 covering bound c_shallow * n * log2(R / eps).
pub fn shallow_log_covering_bound(n: u64, r_bound: f64, epsilon: f64, c_shallow: f64) -> Result<f64> {
    if n == 0 || !(r_bound > 0.0) || !(epsilon > 0.0) || !(c_shallow > 0.0) {
        return Err(Error::InvalidParam("invalid shallow bound inputs".into()));
    }
    if r_bound <= epsilon {
        return Err(Error::DegenerateBound(format!(
            "R = {r_bound} <= eps = {epsilon}: bound nonpositive"
        )));
    }
    Ok(c_shallow * n as f64 * (r_bound / epsilon).log2())
}

/// One point of an iso-capacity curve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IsoCapacityPoint {
    pub l: u32,
    pub n: u64,
    pub log2_bound: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct IsoCapacityCurve {
    pub points: Vec<IsoCapacityPoint>,
    /// Depths with no feasible n >= 1 under the target.
    pub skipped: Vec<u32>,
}

/// For each depth, the largest n whose deep bound stays within the target;
/// n is nonincreasing in L since the per-parameter cost grows like (L+1)^2.
pub fn iso_capacity_curve(
    target_log2: f64,
    template: &CapacityQuery,
    l_range: &[u32],
) -> Result<IsoCapacityCurve> {
    let mut curve = IsoCapacityCurve::default();
    for &l in l_range {
        let mut q = template.clone();
        q.l = l;
        q.n = 1;
        let per_param = deep_log_covering_bound(&q)?;
        if per_param <= 0.0 {
            return Err(Error::DegenerateBound("nonpositive per-parameter cost".into()));
        }
        let n = (target_log2 / per_param).floor() as i64;
        if n < 1 {
            curve.skipped.push(l);
            continue;
        }
        q.n = n as u64;
        let bound = deep_log_covering_bound(&q)?;
        curve.points.push(IsoCapacityPoint {
            l,
            n: n as u64,
            log2_bound: bound,
        });
    }
    Ok(curve)
}
