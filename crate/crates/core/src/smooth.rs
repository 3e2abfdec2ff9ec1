//! Partition-of-unity Taylor approximators for smooth targets.
//!
//! The bump psi(t) = relu(t+2) - relu(t+1) - relu(t-1) + relu(t-2) tiles the
//! cube: phi_{j,N}(x) = prod_k psi(3N(x_k - j_k/N)) sums to one over the grid
//! j in {0..N}^d. The approximant multiplies each bump by the local Taylor
//! polynomial, expanded in the global monomial basis so every grid cell
//! feeds the same (d+s)-ary product gate.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gates::{binary_gate_depth, productl_template, GateConfig};
use crate::net::{
    apply_output_affine, compose, pad_output_depth, parallel, AffineDraft, EntryMeta, GidAlloc,
    LayerDraft, ReluNet,
};

/// Target function with smoothness metadata r = s + v and optional analytic
/// partial-derivative oracle.
#[derive(Clone)]
pub struct SmoothTarget {
    pub dim: usize,
    pub r: f64,
    pub c0: f64,
    pub name: String,
    value: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    derivative: Option<Arc<dyn Fn(&[u32], &[f64]) -> f64 + Send + Sync>>,
}

impl std::fmt::Debug for SmoothTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothTarget")
            .field("dim", &self.dim)
            .field("r", &self.r)
            .field("c0", &self.c0)
            .field("name", &self.name)
            .finish()
    }
}

/// Decomposition r = s + v with s integer >= 0 and v in (0,1].
pub fn smoothness_split(r: f64) -> Result<(u32, f64)> {
    if !(r > 0.0) {
        return Err(Error::InvalidParam("smoothness r must be positive".into()));
    }
    let rounded = r.round();
    if (r - rounded).abs() < 1e-12 && rounded >= 1.0 {
        Ok((rounded as u32 - 1, 1.0))
    } else {
        let s = r.ceil() as u32 - 1;
        Ok((s, r - s as f64))
    }
}

impl SmoothTarget {
    pub fn new(
        name: &str,
        dim: usize,
        r: f64,
        c0: f64,
        value: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    ) -> Result<Self> {
        smoothness_split(r)?;
        if dim == 0 {
            return Err(Error::InvalidParam("target dimension must be >= 1".into()));
        }
        Ok(SmoothTarget {
            dim,
            r,
            c0,
            name: name.to_string(),
            value,
            derivative: None,
        })
    }

    pub fn with_derivative(
        mut self,
        derivative: Arc<dyn Fn(&[u32], &[f64]) -> f64 + Send + Sync>,
    ) -> Self {
        self.derivative = Some(derivative);
        self
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn s(&self) -> u32 {
        smoothness_split(self.r).expect("validated").0
    }

    pub fn holder_v(&self) -> f64 {
        smoothness_split(self.r).expect("validated").1
    }

    /// Partial derivative for multi-index k; analytic when available,
    /// otherwise nested central differences with step eps^(1/3).
    pub fn derivative(&self, k: &[u32], x: &[f64]) -> Result<f64> {
        if k.len() != self.dim || x.len() != self.dim {
            return Err(Error::DimMismatch("derivative index/point length".into()));
        }
        let val = match &self.derivative {
            Some(d) => d(k, x),
            None => self.finite_difference(k, x),
        };
        if !val.is_finite() {
            return Err(Error::DerivativeOracle(format!(
                "non-finite derivative for k={k:?} at {x:?}"
            )));
        }
        Ok(val)
    }

    fn finite_difference(&self, k: &[u32], x: &[f64]) -> f64 {
        match k.iter().position(|&ki| ki > 0) {
            None => self.value(x),
            Some(i) => {
                let h = f64::EPSILON.powf(1.0 / 3.0) * x[i].abs().max(1.0);
                let mut k2 = k.to_vec();
                k2[i] -= 1;
                let mut xp = x.to_vec();
                xp[i] += h;
                let mut xm = x.to_vec();
                xm[i] -= h;
                (self.finite_difference(&k2, &xp) - self.finite_difference(&k2, &xm)) / (2.0 * h)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Built-in target catalog
// ---------------------------------------------------------------------------

/// Physicists' Hermite polynomial H_n(t), used for derivatives of exp(-t^2).
fn hermite(n: u32, t: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 2.0 * t;
    for m in 1..n {
        let next = 2.0 * t * cur - 2.0 * m as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Named analytic targets addressable from the CLI.
pub fn target_by_name(name: &str, dim: usize, r: f64) -> Result<SmoothTarget> {
    match name {
        "exp_neg_norm2" => {
            let value = Arc::new(move |x: &[f64]| (-x.iter().map(|t| t * t).sum::<f64>()).exp());
            let deriv = Arc::new(move |k: &[u32], x: &[f64]| {
                let mut out = 1.0;
                for (&ki, &xi) in k.iter().zip(x) {
                    let sign = if ki % 2 == 0 { 1.0 } else { -1.0 };
                    out *= sign * hermite(ki, xi) * (-xi * xi).exp();
                }
                out
            });
            Ok(SmoothTarget::new(name, dim, r, 4.0, value)?.with_derivative(deriv))
        }
        "sin_pi_x1" => {
            let value = Arc::new(move |x: &[f64]| (std::f64::consts::PI * x[0]).sin());
            let deriv = Arc::new(move |k: &[u32], x: &[f64]| {
                if k.iter().skip(1).any(|&ki| ki > 0) {
                    return 0.0;
                }
                let n = k[0];
                let pi = std::f64::consts::PI;
                pi.powi(n as i32) * (pi * x[0] + n as f64 * pi / 2.0).sin()
            });
            Ok(SmoothTarget::new(name, dim, r, 32.0, value)?.with_derivative(deriv))
        }
        "prod_coords" => {
            let value = Arc::new(move |x: &[f64]| x.iter().product::<f64>());
            let deriv = Arc::new(move |k: &[u32], x: &[f64]| {
                let mut out = 1.0;
                for (&ki, &xi) in k.iter().zip(x) {
                    match ki {
                        0 => out *= xi,
                        1 => {}
                        _ => return 0.0,
                    }
                }
                out
            });
            Ok(SmoothTarget::new(name, dim, r, 2.0, value)?.with_derivative(deriv))
        }
        other => Err(Error::InvalidParam(format!(
            "unknown target '{other}' (expected exp_neg_norm2, sin_pi_x1, prod_coords)"
        ))),
    }
}

// ---------------------------------------------------------------------------
// psi / phi
// ---------------------------------------------------------------------------

/// psi(t): 1 on |t|<=1, 0 on |t|>=2, linear in between.
pub fn psi(t: f64) -> f64 {
    let relu = |v: f64| v.max(0.0);
    relu(t + 2.0) - relu(t + 1.0) - relu(t - 1.0) + relu(t - 2.0)
}

/// One-hidden-layer net computing psi exactly (4 units, 12 free parameters).
pub fn psi_net() -> ReluNet {
    let mut layer = LayerDraft::new(1);
    let units: Vec<u32> = [2.0, 1.0, -1.0, -2.0]
        .iter()
        .map(|&b| layer.unit(&[(0, 1.0)], b, EntryMeta::FREE))
        .collect();
    let mut out = AffineDraft::new(4);
    out.row_with(
        &[
            (units[0], 1.0, EntryMeta::FREE),
            (units[1], -1.0, EntryMeta::FREE),
            (units[2], -1.0, EntryMeta::FREE),
            (units[3], 1.0, EntryMeta::FREE),
        ],
        (0.0, EntryMeta::FIXED),
    );
    ReluNet {
        input_dim: 1,
        layers: vec![layer.finish().expect("static")],
        output_map: out.finish().expect("static"),
    }
}

/// Grid cell index j in {0..N}^d.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GridIndex {
    pub n: u32,
    pub j: Vec<u32>,
}

impl GridIndex {
    pub fn new(n: u32, j: Vec<u32>) -> Result<Self> {
        if j.iter().any(|&jk| jk > n) {
            return Err(Error::InvalidParam(format!("grid index out of range 0..={n}")));
        }
        Ok(GridIndex { n, j })
    }
}

/// Exact reference value of the bump phi_{j,N}(x).
pub fn phi_reference(idx: &GridIndex, x: &[f64]) -> Result<f64> {
    if x.len() != idx.j.len() {
        return Err(Error::DimMismatch("phi point/index length".into()));
    }
    let n = idx.n as f64;
    Ok(idx
        .j
        .iter()
        .zip(x)
        .map(|(&jk, &xk)| psi(3.0 * n * (xk - jk as f64 / n)))
        .product())
}

/// Sum over all grid cells of phi_{j,N}(x); separable, so computed as a
/// product of per-coordinate sums. Equals 1 exactly for x in [0,1]^d (the
/// grid of centers j/N tiles the unit cube).
pub fn sum_phi(n: u32, x: &[f64]) -> f64 {
    let nf = n as f64;
    x.iter()
        .map(|&xk| {
            (0..=n)
                .map(|jk| psi(3.0 * nf * (xk - jk as f64 / nf)))
                .sum::<f64>()
        })
        .product()
}

/// Partition sum for the bump family the net constructions actually use:
/// the substitution u = (x+1)/2 maps [-1,1]^d onto the unit cube, so the
/// re-centered bumps tile the full input cube.
pub fn sum_phi_cube(n: u32, x: &[f64]) -> f64 {
    let u: Vec<f64> = x.iter().map(|&t| (t + 1.0) / 2.0).collect();
    sum_phi(n, &u)
}

// ---------------------------------------------------------------------------
// Taylor machinery
// ---------------------------------------------------------------------------

/// All multi-indices of dimension d with |k| <= total, lexicographic.
pub fn multi_indices(d: usize, total: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; d];
    fn rec(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, pos: usize, left: u32) {
        if pos == cur.len() {
            out.push(cur.clone());
            return;
        }
        for v in 0..=left {
            cur[pos] = v;
            rec(out, cur, pos + 1, left - v);
        }
        cur[pos] = 0;
    }
    rec(&mut out, &mut cur, 0, total);
    out
}

fn factorial(n: u32) -> f64 {
    (1..=n as u64).map(|v| v as f64).product::<f64>().max(1.0)
}

fn binom(n: u32, k: u32) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// Coefficients of the degree-s Taylor polynomial of f at `center`, expanded
/// in the global monomial basis: p(x) = sum_alpha a_alpha x^alpha.
pub fn taylor_coeffs(
    f: &SmoothTarget,
    center: &[f64],
    s: u32,
) -> Result<BTreeMap<Vec<u32>, f64>> {
    if center.len() != f.dim {
        return Err(Error::DimMismatch("taylor center length".into()));
    }
    let mut out: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for k in multi_indices(f.dim, s) {
        let norm: f64 = k.iter().map(|&ki| factorial(ki)).product();
        let coeff = f.derivative(&k, center)? / norm;
        if coeff == 0.0 {
            continue;
        }
        // Expand prod_i (x_i - c_i)^{k_i} into monomials.
        let mut expansion: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        expansion.insert(vec![0; f.dim], coeff);
        for (i, &ki) in k.iter().enumerate() {
            if ki == 0 {
                continue;
            }
            let mut next: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
            for (alpha, v) in &expansion {
                for a in 0..=ki {
                    let mut alpha2 = alpha.clone();
                    alpha2[i] += a;
                    let w = v * binom(ki, a) * (-center[i]).powi((ki - a) as i32);
                    *next.entry(alpha2).or_insert(0.0) += w;
                }
            }
            expansion = next;
        }
        for (alpha, v) in expansion {
            *out.entry(alpha).or_insert(0.0) += v;
        }
    }
    Ok(out)
}

/// Evaluates the degree-s Taylor polynomial of f at `center` directly in the
/// shifted basis (no global expansion); used by the reference approximant.
fn taylor_eval(f: &SmoothTarget, center: &[f64], s: u32, x: &[f64]) -> Result<f64> {
    let mut out = 0.0;
    for k in multi_indices(f.dim, s) {
        let norm: f64 = k.iter().map(|&ki| factorial(ki)).product();
        let c = f.derivative(&k, center)? / norm;
        if c == 0.0 {
            continue;
        }
        let mut m = c;
        for ((&ki, &xi), &ci) in k.iter().zip(x).zip(center) {
            if ki > 0 {
                m *= (xi - ci).powi(ki as i32);
            }
        }
        out += m;
    }
    Ok(out)
}

/// Exact (non-net) evaluation of the intermediate approximant
/// f1(x) = sum_j phi_{j,N}(u(x)) p_{s,c_j,f}(x) with u = (x+1)/2 and Taylor
/// centers c_j = 2j/N - 1, so the bumps tile [-1,1]^d. Only cells whose bump
/// covers x contribute.
pub fn f1_reference(f: &SmoothTarget, n: u32, x: &[f64]) -> Result<f64> {
    if x.len() != f.dim {
        return Err(Error::DimMismatch("f1 point length".into()));
    }
    let s = f.s();
    let nf = n as f64;
    let u: Vec<f64> = x.iter().map(|&t| (t + 1.0) / 2.0).collect();
    // Candidate j_k per coordinate: |u_k - j_k/N| < 2/(3N).
    let mut ranges: Vec<Vec<u32>> = Vec::with_capacity(f.dim);
    for &uk in &u {
        let lo = ((nf * uk - 2.0 / 3.0).ceil().max(0.0)) as i64;
        let hi = ((nf * uk + 2.0 / 3.0).floor()).min(nf) as i64;
        ranges.push((lo..=hi.max(lo)).map(|v| v.max(0) as u32).collect());
    }
    let mut total = 0.0;
    let mut stack = vec![0usize; f.dim];
    loop {
        let j: Vec<u32> = stack
            .iter()
            .enumerate()
            .map(|(i, &p)| ranges[i][p.min(ranges[i].len() - 1)])
            .collect();
        let idx = GridIndex { n, j: j.clone() };
        let phi = phi_reference(&idx, &u)?;
        if phi != 0.0 {
            let center: Vec<f64> = j.iter().map(|&jk| 2.0 * jk as f64 / nf - 1.0).collect();
            total += phi * taylor_eval(f, &center, s, x)?;
        }
        // Advance odometer.
        let mut pos = 0;
        loop {
            if pos == f.dim {
                return Ok(total);
            }
            stack[pos] += 1;
            if stack[pos] < ranges[pos].len() {
                break;
            }
            stack[pos] = 0;
            pos += 1;
        }
    }
}

// ---------------------------------------------------------------------------
// Deep-net construction
// ---------------------------------------------------------------------------

/// Layer-count formula 2(d+s)L~ + 8(d+s) + 3.
pub fn smooth_depth(d: usize, s: u32, l_tilde: u32) -> usize {
    binary_gate_depth(l_tilde) * (d + s as usize) + 3
}

/// Construction report for a smooth-target net.
#[derive(Clone, Debug, Serialize)]
pub struct SmoothNetReport {
    pub n_grid: u32,
    pub per_gate_accuracy: f64,
    pub s: u32,
    pub v: f64,
    pub branches: usize,
    /// Max |d^k f / k!| over grid centers (the theorem's coefficient bound).
    pub b_tilde: f64,
    /// Max |a_{j,alpha}| actually entering the output map.
    pub coeff_max: f64,
    pub depth: usize,
    pub free_params: usize,
    pub param_bound: f64,
}

pub struct SmoothNetBuild {
    pub net: ReluNet,
    pub report: SmoothNetReport,
}

/// Deep net approximating an (r,c0)-smooth target on [-1,1]^d.
///
/// Per-gate accuracy nu = eps^((r+d)/r) and grid size N+1 = ceil(eps^(-1/r));
/// depth is exactly 2(d+s)L~ + 8(d+s) + 3 and all product gates share one
/// parameter set.
pub fn smooth_net(f: &SmoothTarget, epsilon: f64, cfg: &GateConfig) -> Result<SmoothNetBuild> {
    cfg.validate()?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParam("epsilon must lie in (0,1)".into()));
    }
    if f.dim > 3 {
        return Err(Error::InvalidParam(
            "net construction is limited to d <= 3 (grid blow-up); f1_reference has no limit"
                .into(),
        ));
    }
    let (s, v) = smoothness_split(f.r)?;
    let d = f.dim;
    let nu = epsilon.powf((f.r + d as f64) / f.r);
    let raw = epsilon.powf(-1.0 / f.r);
    let np1 = if (raw - raw.round()).abs() < 1e-9 {
        raw.round() as u32
    } else {
        raw.ceil() as u32
    }
    .max(2);
    let n = np1 - 1;
    let arity = (d + s as usize) as u32;

    let mut alloc = GidAlloc::new();
    let nu_gate = nu.min(0.25);
    let gate_depth = binary_gate_depth(cfg.l_tilde) * arity as usize;
    let gate = productl_template(arity, nu_gate, cfg.l_tilde, gate_depth, &mut alloc)?;

    let alphas = multi_indices(d, s);
    let cells = grid_cells(d, n);
    let mut branches: Vec<ReluNet> = Vec::with_capacity(cells.len() * alphas.len());
    let mut coeffs: Vec<f64> = Vec::with_capacity(cells.len() * alphas.len());
    let mut b_tilde: f64 = 0.0;
    let mut coeff_max: f64 = 0.0;
    let nf = n as f64;
    for j in &cells {
        let center: Vec<f64> = j.iter().map(|&jk| 2.0 * jk as f64 / nf - 1.0).collect();
        let a_map = taylor_coeffs(f, &center, s)?;
        for k in multi_indices(d, s) {
            let norm: f64 = k.iter().map(|&ki| factorial(ki)).product();
            b_tilde = b_tilde.max((f.derivative(&k, &center)? / norm).abs());
        }
        for alpha in &alphas {
            let a = a_map.get(alpha).copied().unwrap_or(0.0);
            coeff_max = coeff_max.max(a.abs());
            coeffs.push(a);
            branches.push(compose(&gate, &smooth_prep(f.dim, n, j, alpha, s)?)?);
        }
    }
    let refs: Vec<&ReluNet> = branches.iter().collect();
    let stacked = parallel(&refs, None)?;
    let mut combine = AffineDraft::new(branches.len());
    let row: Vec<(u32, f64, EntryMeta)> = coeffs
        .iter()
        .enumerate()
        .map(|(i, &a)| (i as u32, a, EntryMeta::FREE))
        .collect();
    combine.row_with(&row, (0.0, EntryMeta::FIXED));
    let assembled = apply_output_affine(&stacked, &combine.finish()?)?;

    let target_depth = smooth_depth(d, s, cfg.l_tilde);
    let sum_abs: f64 = coeffs.iter().map(|a| a.abs()).sum();
    let net = pad_output_depth(
        &assembled,
        target_depth - assembled.depth(),
        2.0 * sum_abs + 1.0,
    )?;

    let report = SmoothNetReport {
        n_grid: n,
        per_gate_accuracy: nu_gate,
        s,
        v,
        branches: branches.len(),
        b_tilde,
        coeff_max,
        depth: net.depth(),
        free_params: net.count_free_params(),
        param_bound: net.param_bound(),
    };
    Ok(SmoothNetBuild { net, report })
}

fn grid_cells(d: usize, n: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; d];
    loop {
        out.push(cur.clone());
        let mut pos = 0;
        loop {
            if pos == d {
                return out;
            }
            cur[pos] += 1;
            if cur[pos] <= n {
                break;
            }
            cur[pos] = 0;
            pos += 1;
        }
    }
}

/// Branch preparation layer for grid cell j and monomial alpha: emits the d
/// bump values psi(3N(u_k - j_k/N)) with u = (x+1)/2 folded into the
/// thresholds, the repeated coordinates, and constant ones, all in [-1,1],
/// as the product-gate inputs.
fn smooth_prep(d: usize, n: u32, j: &[u32], alpha: &[u32], s: u32) -> Result<ReluNet> {
    let mut layer = LayerDraft::new(d);
    let nf = n as f64;
    // psi(3N((x+1)/2 - j/N)) = psi(1.5N x + 1.5N - 3j).
    let scale = 1.5 * nf;
    // 4 psi units per coordinate; thresholds depend on the cell index.
    let mut psi_units: Vec<[u32; 4]> = Vec::with_capacity(d);
    for (k, &jk) in j.iter().enumerate() {
        let t0 = 1.5 * nf - 3.0 * jk as f64;
        let mut quad = [0u32; 4];
        for (q, &shift) in [2.0, 1.0, -1.0, -2.0].iter().enumerate() {
            quad[q] = layer.unit(&[(k as u32, scale)], t0 + shift, EntryMeta::FREE);
        }
        psi_units.push(quad);
    }
    let mut coord_unit = vec![None::<u32>; d];
    for (i, &a) in alpha.iter().enumerate() {
        if a > 0 {
            coord_unit[i] = Some(layer.unit(&[(i as u32, 1.0)], 1.0, EntryMeta::FIXED));
        }
    }
    let total: u32 = alpha.iter().sum();
    let const_unit = if total < s {
        Some(layer.unit(&[], 1.0, EntryMeta::FIXED))
    } else {
        None
    };

    let mut out = AffineDraft::new(layer.width());
    for quad in &psi_units {
        out.row(
            &[
                (quad[0], 1.0),
                (quad[1], -1.0),
                (quad[2], -1.0),
                (quad[3], 1.0),
            ],
            0.0,
            EntryMeta::FIXED,
        );
    }
    for (i, &a) in alpha.iter().enumerate() {
        for _ in 0..a {
            out.row(&[(coord_unit[i].unwrap(), 1.0)], -1.0, EntryMeta::FIXED);
        }
    }
    for _ in total..s {
        out.row(&[(const_unit.unwrap(), 1.0)], 0.0, EntryMeta::FIXED);
    }
    let net = ReluNet {
        input_dim: d,
        layers: vec![layer.finish()?],
        output_map: out.finish()?,
    };
    net.validate()?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psi_piecewise_values() {
        let net = psi_net();
        // Dyadic points evaluate exactly; generic points carry ~1 ulp of
        // cancellation noise from the four-term telescoping.
        assert!((net.eval1(&[0.3]).unwrap() - 1.0).abs() <= 1e-12);
        assert_eq!(net.eval1(&[2.5]).unwrap(), 0.0);
        assert_eq!(net.eval1(&[-1.25]).unwrap(), 0.75);
        assert_eq!(net.count_free_params(), 12);
        // Bit-exact agreement with the scalar reference on a grid.
        for i in 0..=1000 {
            let t = -3.0 + 6.0 * i as f64 / 1000.0;
            assert_eq!(net.eval1(&[t]).unwrap(), psi(t));
        }
    }

    #[test]
    fn phi_center_support_and_partition() {
        let idx = GridIndex::new(4, vec![2, 1]).unwrap();
        let center = [0.5, 0.25];
        assert!((phi_reference(&idx, &center).unwrap() - 1.0).abs() < 1e-15);
        // Outside the support radius 2/(3N) in one coordinate; the dyadic
        // offset keeps the four-term cancellation exact.
        let far = [0.75, 0.25];
        assert_eq!(phi_reference(&idx, &far).unwrap(), 0.0);
        let near_edge = [0.5 + 2.0 / 12.0, 0.25];
        assert!(phi_reference(&idx, &near_edge).unwrap().abs() <= 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &n in &[2u32, 8] {
            for _ in 0..500 {
                // Verbatim grid j/N tiles the unit cube.
                let u: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..1.0)).collect();
                assert!((sum_phi(n, &u) - 1.0).abs() <= 1e-9, "n={n} u={u:?}");
                // Re-centered family tiles [-1,1]^d.
                let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
                assert!((sum_phi_cube(n, &x) - 1.0).abs() <= 1e-9, "n={n} x={x:?}");
            }
        }
    }

    #[test]
    fn sum_phi_matches_bruteforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 3u32;
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut brute = 0.0;
            for j0 in 0..=n {
                for j1 in 0..=n {
                    brute +=
                        phi_reference(&GridIndex::new(n, vec![j0, j1]).unwrap(), &x).unwrap();
                }
            }
            assert!((brute - sum_phi(n, &x)).abs() <= 1e-12);
        }
    }

    #[test]
    fn taylor_coeffs_linear_and_constant() {
        // f(x) = x1 with s = 1: coefficient 1 on e1 only.
        let f = target_by_name("prod_coords", 1, 2.0).unwrap();
        let coeffs = taylor_coeffs(&f, &[0.3], 1).unwrap();
        assert!((coeffs[&vec![1]] - 1.0).abs() < 1e-12);
        assert!(coeffs.get(&vec![0]).map_or(true, |&v| v.abs() < 1e-12));
    }

    #[test]
    fn taylor_coeffs_exponential() {
        // exp(t) = sum t^k / k!; use the generic finite-difference fallback.
        let f = SmoothTarget::new("exp_x1", 1, 3.0, 30.0, Arc::new(|x: &[f64]| x[0].exp()))
            .unwrap();
        let coeffs = taylor_coeffs(&f, &[0.0], 2).unwrap();
        assert!((coeffs[&vec![0]] - 1.0).abs() < 1e-6);
        assert!((coeffs[&vec![1]] - 1.0).abs() < 1e-6);
        assert!((coeffs[&vec![2]] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn hermite_derivatives_match_finite_differences() {
        let f = target_by_name("exp_neg_norm2", 2, 2.0).unwrap();
        let plain = SmoothTarget::new(
            "fd",
            2,
            2.0,
            4.0,
            Arc::new(|x: &[f64]| (-x.iter().map(|t| t * t).sum::<f64>()).exp()),
        )
        .unwrap();
        for k in [vec![1, 0], vec![0, 1], vec![1, 1], vec![2, 0]] {
            let x = [0.3, -0.6];
            let a = f.derivative(&k, &x).unwrap();
            let b = plain.derivative(&k, &x).unwrap();
            assert!((a - b).abs() < 1e-4, "k={k:?}: {a} vs {b}");
        }
    }

    #[test]
    fn f1_exact_for_low_degree_polynomials() {
        // Taylor exactness + partition of unity: f1 == f for polynomial f of
        // degree <= s.
        let f = target_by_name("prod_coords", 1, 2.0).unwrap(); // f = x1, s = 1
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = [rng.gen_range(-1.0..1.0)];
            let v = f1_reference(&f, 8, &x).unwrap();
            assert!((v - x[0]).abs() <= 1e-10, "{v} vs {}", x[0]);
        }
    }

    #[test]
    fn f1_error_decays_at_rate_r() {
        let f = target_by_name("exp_neg_norm2", 2, 2.0).unwrap();
        let mut pts = Vec::new();
        for &n in &[4u32, 8, 16] {
            let mut max_err: f64 = 0.0;
            for i in 0..=40 {
                for j in 0..=40 {
                    let x = [-1.0 + i as f64 / 20.0, -1.0 + j as f64 / 20.0];
                    let err = (f1_reference(&f, n, &x).unwrap() - f.value(&x)).abs();
                    max_err = max_err.max(err);
                }
            }
            pts.push(((n as f64).ln(), max_err.ln()));
        }
        let slope = {
            let n = pts.len() as f64;
            let sx: f64 = pts.iter().map(|p| p.0).sum();
            let sy: f64 = pts.iter().map(|p| p.1).sum();
            let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
            let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
            (n * sxy - sx * sy) / (n * sxx - sx * sx)
        };
        assert!(slope <= -2.0 + 0.3, "slope {slope}");
    }

    #[test]
    fn smooth_net_depth_and_zero_target() {
        let cfg = GateConfig::new(0.5, 3, 0.5, 2).unwrap();
        let zero = SmoothTarget::new("zero", 2, 2.0, 1.0, Arc::new(|_: &[f64]| 0.0)).unwrap();
        let build = smooth_net(&zero, 0.25, &cfg).unwrap();
        assert_eq!(build.net.depth(), smooth_depth(2, 1, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!(build.net.eval1(&x).unwrap().abs() <= 0.25);
        }
    }

    #[test]
    fn smooth_net_approximates_target() {
        let cfg = GateConfig::new(0.5, 3, 0.5, 2).unwrap();
        let f = target_by_name("exp_neg_norm2", 2, 2.0).unwrap();
        let build = smooth_net(&f, 0.2, &cfg).unwrap();
        assert_eq!(build.net.depth(), smooth_depth(2, 1, 3));
        let mut max_err: f64 = 0.0;
        for i in 0..=60 {
            for j in 0..=60 {
                let x = [-1.0 + i as f64 / 30.0, -1.0 + j as f64 / 30.0];
                max_err = max_err.max((build.net.eval1(&x).unwrap() - f.value(&x)).abs());
            }
        }
        // c1 * eps with a moderate measured constant.
        assert!(max_err <= 1.0, "measured error {max_err}");
        // Gate-error isolation: |h - f1| within the branch budget.
        let budget =
            build.report.branches as f64 * build.report.coeff_max * build.report.per_gate_accuracy;
        let mut max_gate_err: f64 = 0.0;
        for i in 0..=30 {
            for j in 0..=30 {
                let x = [-1.0 + i as f64 / 15.0, -1.0 + j as f64 / 15.0];
                let f1 = f1_reference(&f, build.report.n_grid, &x).unwrap();
                max_gate_err = max_gate_err.max((build.net.eval1(&x).unwrap() - f1).abs());
            }
        }
        assert!(
            max_gate_err <= budget + 1e-12,
            "gate error {max_gate_err} budget {budget}"
        );
    }

    #[test]
    fn smooth_net_param_bound_contract() {
        let cfg = GateConfig::new(0.5, 3, 0.5, 2).unwrap();
        let f = target_by_name("exp_neg_norm2", 2, 2.0).unwrap();
        let eps = 0.2;
        let build = smooth_net(&f, eps, &cfg).unwrap();
        let gate_bound = 8.0f64; // folded polarization scale dominates
        let psi_bound = 3.0 * eps.powf(-1.0 / 2.0);
        let cap = build
            .report
            .b_tilde
            .max(psi_bound)
            .max(gate_bound)
            .max(2.0 * build.report.coeff_max);
        assert!(
            build.report.param_bound <= cap + 1e-9,
            "bound {} cap {cap}",
            build.report.param_bound
        );
    }
}
