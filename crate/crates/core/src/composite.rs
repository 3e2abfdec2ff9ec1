//! Composite-feature approximators: an outer smooth net applied to a bank of
//! inner sparse-polynomial nets, one per coordinate block, with an exact
//! clamp into [-1,1] at the junction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{binary_gate_depth, GateConfig};
use crate::net::{compose, embed_input, parallel, GidAlloc, ReluNet};
use crate::poly::{eval_poly, sparse_poly_net_inner, PolyFinish, PolySpec, Term};
use crate::smooth::{smooth_depth, smooth_net, smoothness_split, SmoothTarget};

/// Group-structure description: input blocks, one low-degree polynomial per
/// block, and a smooth outer function of the block values.
#[derive(Clone, Debug)]
pub struct CompositeSpec {
    pub block_dims: Vec<usize>,
    pub inner_polys: Vec<PolySpec>,
    pub outer: SmoothTarget,
}

impl CompositeSpec {
    pub fn new(
        block_dims: Vec<usize>,
        inner_polys: Vec<PolySpec>,
        outer: SmoothTarget,
    ) -> Result<Self> {
        let spec = CompositeSpec {
            block_dims,
            inner_polys,
            outer,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_dims.is_empty() || self.block_dims.len() != self.inner_polys.len() {
            return Err(Error::DimMismatch(
                "block_dims and inner_polys must align and be nonempty".into(),
            ));
        }
        for (d, p) in self.block_dims.iter().zip(&self.inner_polys) {
            p.validate()?;
            if p.dim != *d {
                return Err(Error::DimMismatch(format!(
                    "inner polynomial dim {} != block size {d}",
                    p.dim
                )));
            }
        }
        if self.outer.dim != self.block_dims.len() {
            return Err(Error::DimMismatch(format!(
                "outer dim {} != number of blocks {}",
                self.outer.dim,
                self.block_dims.len()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.block_dims.iter().sum()
    }

    pub fn n_blocks(&self) -> usize {
        self.block_dims.len()
    }

    /// Group-structure order: the maximum block-polynomial degree.
    pub fn order(&self) -> u32 {
        self.inner_polys.iter().map(|p| p.degree).max().unwrap_or(1)
    }

    /// tau_r = 1 for r >= 1, otherwise the Hoelder exponent v.
    pub fn tau_r(&self) -> f64 {
        tau_r(self.outer.r)
    }

    /// Whether the block polynomials meet the 1/2 coefficient bound the
    /// error budget of the composite theorem assumes.
    pub fn assumption_holds(&self) -> bool {
        self.inner_polys
            .iter()
            .all(|p| p.terms.iter().all(|t| t.c.abs() <= 0.5))
    }
}

/// On-disk form of a composite spec: polynomial blocks plus a catalog name
/// for the outer target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeSpecFile {
    pub block_dims: Vec<usize>,
    pub inner_polys: Vec<PolySpec>,
    pub outer: OuterRef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterRef {
    pub name: String,
    pub r: f64,
}

impl CompositeSpecFile {
    pub fn resolve(&self) -> Result<CompositeSpec> {
        let outer =
            crate::smooth::target_by_name(&self.outer.name, self.block_dims.len(), self.outer.r)?;
        CompositeSpec::new(self.block_dims.clone(), self.inner_polys.clone(), outer)
    }

    pub fn from_json(s: &str) -> Result<CompositeSpecFile> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn tau_r(r: f64) -> f64 {
    if r >= 1.0 {
        1.0
    } else {
        smoothness_split(r).map(|(_, v)| v).unwrap_or(1.0)
    }
}

/// Exact ground-truth evaluation of the composite target. Inner values must
/// stay inside [-1,1] (the domain of the outer function); anything else is a
/// spec violation.
pub fn eval_composite(spec: &CompositeSpec, x: &[f64]) -> Result<f64> {
    if x.len() != spec.input_dim() {
        return Err(Error::DimMismatch(format!(
            "point length {} != composite input dim {}",
            x.len(),
            spec.input_dim()
        )));
    }
    let mut inner = Vec::with_capacity(spec.n_blocks());
    let mut offset = 0;
    for (d, p) in spec.block_dims.iter().zip(&spec.inner_polys) {
        let v = eval_poly(p, &x[offset..offset + d])?;
        if v.abs() > 1.0 + 1e-12 {
            return Err(Error::SpecViolation(format!(
                "inner polynomial value {v} escapes [-1,1]"
            )));
        }
        inner.push(v.clamp(-1.0, 1.0));
        offset += d;
    }
    Ok(spec.outer.value(&inner))
}

/// Layer-count formula: L(d*, r, L~) + 2 iota L~ + 8 iota + 1.
pub fn composite_depth(d_star: usize, r: f64, l_tilde: u32, iota: u32) -> Result<usize> {
    let (s, _) = smoothness_split(r)?;
    Ok(smooth_depth(d_star, s, l_tilde) + binary_gate_depth(l_tilde) * iota as usize + 1)
}

#[derive(Clone, Debug, Serialize)]
pub struct CompositeReport {
    pub nu_inner: f64,
    pub nu_outer: f64,
    pub iota: u32,
    pub tau_r: f64,
    pub assumption_holds: bool,
    pub depth: usize,
    /// "smooth+group": parameters of the outer smooth net.
    pub outer_params: usize,
    /// "sparse+group": the block-polynomial coefficients (mu per block).
    pub coeff_params: usize,
    /// Gate parameters inside the inner polynomial nets.
    pub inner_gate_params: usize,
    /// Junction glue created by fusing the nets together (can be negative
    /// when fusion collapses entries).
    pub fusion_delta: i64,
    pub total_params: usize,
    pub param_bound: f64,
}

pub struct CompositeBuild {
    pub net: ReluNet,
    pub report: CompositeReport,
}

/// Deep net h_g(h_{d*}(x)) for a composite target: inner accuracy nu1 and
/// outer accuracy nu2 tied by nu2 = nu1^tau_r = epsilon; inner outputs are
/// clamped into [-1,1] before entering the outer net.
pub fn composite_net(
    spec: &CompositeSpec,
    epsilon: f64,
    cfg: &GateConfig,
) -> Result<CompositeBuild> {
    spec.validate()?;
    cfg.validate()?;
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidParam("epsilon must lie in (0, 1/2)".into()));
    }
    let tau = spec.tau_r();
    let nu_outer = epsilon;
    let nu_inner = epsilon.powf(1.0 / tau);
    let iota = spec.order();

    let mut alloc = GidAlloc::new();
    let mut inner_nets = Vec::with_capacity(spec.n_blocks());
    let mut offset = 0;
    for (d, p) in spec.block_dims.iter().zip(&spec.inner_polys) {
        // Uniform gate arity iota across blocks keeps the bank equal-depth.
        let promoted = PolySpec {
            degree: iota,
            ..p.clone()
        };
        let net = sparse_poly_net_inner(&promoted, nu_inner, cfg, PolyFinish::Clamp, &mut alloc)?;
        inner_nets.push(embed_input(&net, spec.input_dim(), offset)?);
        offset += d;
    }
    let refs: Vec<&ReluNet> = inner_nets.iter().collect();
    let inner_bank = parallel(&refs, None)?;

    let outer_build = smooth_net(&spec.outer, nu_outer, cfg)?;
    let net = compose(&outer_build.net, &inner_bank)?;

    let expected = composite_depth(spec.n_blocks(), spec.outer.r, cfg.l_tilde, iota)?;
    debug_assert_eq!(net.depth(), expected);

    let outer_params = outer_build.net.count_free_params();
    let inner_totals: usize = inner_nets.iter().map(|n| n.count_free_params()).sum();
    let coeff_params: usize = spec.inner_polys.iter().map(|p| p.sparsity()).sum();
    let total_params = net.count_free_params();
    let report = CompositeReport {
        nu_inner,
        nu_outer,
        iota,
        tau_r: tau,
        assumption_holds: spec.assumption_holds(),
        depth: net.depth(),
        outer_params,
        coeff_params,
        inner_gate_params: inner_totals.saturating_sub(coeff_params),
        fusion_delta: total_params as i64 - outer_params as i64 - inner_totals as i64,
        total_params,
        param_bound: net.param_bound(),
    };
    Ok(CompositeBuild { net, report })
}

// ---------------------------------------------------------------------------
// Radial and partially radial specializations
// ---------------------------------------------------------------------------

/// Normalized radial block polynomial sum_j x_j^2 / d: values in [0,1] and
/// coefficients 1/d within the 1/2 bound for d >= 2.
pub fn radial_block_poly(d: usize) -> Result<PolySpec> {
    let terms = (0..d)
        .map(|i| {
            let mut alpha = vec![0u32; d];
            alpha[i] = 2;
            Term {
                alpha,
                c: 1.0 / d as f64,
            }
        })
        .collect();
    PolySpec::new(d, 2, 1.0 / d as f64, terms)
}

/// Printed depth formula of the radial corollary under the d* = 1 reading:
/// 4(1+s+2)(r+1)/tau_r + 8(1+s) + 20.
pub fn radial_corollary_depth(r: f64) -> Result<f64> {
    let (s, _) = smoothness_split(r)?;
    let tau = tau_r(r);
    Ok(4.0 * (s as f64 + 3.0) * (r + 1.0) / tau + 8.0 * (s as f64 + 1.0) + 20.0)
}

pub struct RadialBuild {
    pub net: ReluNet,
    pub spec: CompositeSpec,
    pub epsilon: f64,
    pub cfg: GateConfig,
    pub report: CompositeReport,
}

/// Radial target g(|x|^2 / d) realized with d* = 1, iota = 2, and the
/// corollary's parameter choices theta = tau_r/(2+2r), L~ = 2(r+1)/tau_r;
/// the accuracy budget is epsilon = n^(-r) for an n-parameter budget.
pub fn radial_net(g: &SmoothTarget, d: usize, n_budget: u64) -> Result<RadialBuild> {
    if g.dim != 1 {
        return Err(Error::DimMismatch("radial outer function must be univariate".into()));
    }
    if d < 2 {
        return Err(Error::InvalidParam("radial construction needs d >= 2".into()));
    }
    let tau = tau_r(g.r);
    let epsilon = (n_budget as f64).powf(-g.r);
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidParam(format!(
            "budget n = {n_budget} gives epsilon = {epsilon}, need epsilon < 1/2"
        )));
    }
    let theta = tau / (2.0 + 2.0 * g.r);
    let l_tilde = (2.0 * (g.r + 1.0) / tau).ceil() as u32;
    let cfg = GateConfig::new(theta, l_tilde, epsilon, 2)?;
    let spec = CompositeSpec::new(vec![d], vec![radial_block_poly(d)?], g.clone())?;
    let build = composite_net(&spec, epsilon, &cfg)?;
    Ok(RadialBuild {
        net: build.net,
        spec,
        epsilon,
        cfg,
        report: build.report,
    })
}

/// Partially radial target g(|x_{1..d'}|^2 / d', x_{d'+1}, ..., x_d) with
/// d* = d - d' + 1 blocks: one radial block and identity passthrough blocks.
pub fn partial_radial_net(
    g: &SmoothTarget,
    d: usize,
    d_prime: usize,
    n_budget: u64,
) -> Result<RadialBuild> {
    if d_prime < 2 || d_prime > d {
        return Err(Error::InvalidParam("need 2 <= d' <= d".into()));
    }
    let d_star = d - d_prime + 1;
    if g.dim != d_star {
        return Err(Error::DimMismatch(format!(
            "outer dim {} != d - d' + 1 = {d_star}",
            g.dim
        )));
    }
    let tau = tau_r(g.r);
    let epsilon = (n_budget as f64).powf(-g.r / d_star as f64);
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidParam(format!(
            "budget n = {n_budget} gives epsilon = {epsilon}, need epsilon < 1/2"
        )));
    }
    let theta = d_star as f64 * tau / (2.0 * (d_star as f64 + g.r));
    let l_tilde = (2.0 * (d_star as f64 + g.r) / (d_star as f64 * tau)).ceil() as u32;
    let cfg = GateConfig::new(theta, l_tilde, epsilon, 2)?;

    let mut block_dims = vec![d_prime];
    let mut polys = vec![radial_block_poly(d_prime)?];
    for _ in 0..d - d_prime {
        block_dims.push(1);
        // Identity block P(t) = t; coefficient 1 exceeds the 1/2 assumption
        // bound, which the report records.
        polys.push(PolySpec::new(
            1,
            1,
            1.0,
            vec![Term {
                alpha: vec![1],
                c: 1.0,
            }],
        )?);
    }
    let spec = CompositeSpec::new(block_dims, polys, g.clone())?;
    let build = composite_net(&spec, epsilon, &cfg)?;
    Ok(RadialBuild {
        net: build.net,
        spec,
        epsilon,
        cfg,
        report: build.report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smooth::target_by_name;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn identity_outer(dim: usize, r: f64) -> SmoothTarget {
        SmoothTarget::new("sum_coords", dim, r, 1.0, Arc::new(|x: &[f64]| x.iter().sum()))
            .unwrap()
            .with_derivative(Arc::new(|k: &[u32], x: &[f64]| {
                let total: u32 = k.iter().sum();
                match total {
                    0 => x.iter().sum(),
                    1 => 1.0,
                    _ => 0.0,
                }
            }))
    }

    fn identity_blocks_spec(d: usize, r: f64) -> CompositeSpec {
        let polys = (0..d)
            .map(|_| {
                PolySpec::new(
                    1,
                    1,
                    1.0,
                    vec![Term {
                        alpha: vec![1],
                        c: 1.0,
                    }],
                )
                .unwrap()
            })
            .collect();
        CompositeSpec::new(vec![1; d], polys, identity_outer(d, r)).unwrap()
    }

    #[test]
    fn eval_identity_blocks_is_outer_of_x() {
        let spec = identity_blocks_spec(3, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v = eval_composite(&spec, &x).unwrap();
            assert!((v - x.iter().sum::<f64>()).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_radial_block() {
        // Normalized radial block: g = id gives |x|^2 / d.
        let spec =
            CompositeSpec::new(vec![4], vec![radial_block_poly(4).unwrap()], identity_outer(1, 2.0))
                .unwrap();
        let x = [0.5, -0.5, 0.5, 0.5];
        let v = eval_composite(&spec, &x).unwrap();
        assert!((v - 1.0 / 4.0).abs() < 1e-12);
        assert!(spec.assumption_holds());
    }

    #[test]
    fn eval_hand_case_outer_square() {
        // g(t) = t^2, P1(x) = x1/2, x1 = 1 -> 0.25.
        let outer = SmoothTarget::new("sq", 1, 2.0, 2.0, Arc::new(|x: &[f64]| x[0] * x[0]))
            .unwrap()
            .with_derivative(Arc::new(|k: &[u32], x: &[f64]| match k[0] {
                0 => x[0] * x[0],
                1 => 2.0 * x[0],
                2 => 2.0,
                _ => 0.0,
            }));
        let p = PolySpec::new(
            2,
            1,
            0.5,
            vec![Term {
                alpha: vec![1, 0],
                c: 0.5,
            }],
        )
        .unwrap();
        let spec = CompositeSpec::new(vec![2], vec![p], outer).unwrap();
        let v = eval_composite(&spec, &[1.0, 0.3]).unwrap();
        assert!((v - 0.25).abs() < 1e-12);
    }

    #[test]
    fn eval_rejects_escaping_inner_value() {
        // Un-normalized radial polynomial escapes [-1,1] near the corner.
        let p = PolySpec::new(
            4,
            2,
            0.5,
            (0..4)
                .map(|i| {
                    let mut alpha = vec![0u32; 4];
                    alpha[i] = 2;
                    Term { alpha, c: 0.5 }
                })
                .collect(),
        )
        .unwrap();
        let spec = CompositeSpec::new(vec![4], vec![p], identity_outer(1, 2.0)).unwrap();
        assert!(eval_composite(&spec, &[1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(eval_composite(&spec, &[0.1, 0.1, 0.1, 0.1]).is_ok());
    }

    #[test]
    fn composite_depth_formula_and_accuracy() {
        let cfg = GateConfig::new(0.5, 2, 0.1, 2).unwrap();
        let spec = identity_blocks_spec(2, 2.0);
        let build = composite_net(&spec, 0.1, &cfg).unwrap();
        assert_eq!(
            build.net.depth(),
            composite_depth(2, 2.0, 2, 1).unwrap()
        );
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut max_err: f64 = 0.0;
        for _ in 0..500 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let exact = eval_composite(&spec, &x).unwrap();
            max_err = max_err.max((build.net.eval1(&x).unwrap() - exact).abs());
        }
        // Measured constant stays moderate.
        assert!(max_err <= 10.0 * 0.1, "err {max_err}");
        assert!(!spec.assumption_holds()); // identity blocks have coeff 1
        assert_eq!(
            build.report.total_params as i64,
            build.report.outer_params as i64
                + build.report.coeff_params as i64
                + build.report.inner_gate_params as i64
                + build.report.fusion_delta
        );
    }

    #[test]
    fn clamp_layer_is_exact() {
        // Exercised through a poly net with clamp finish.
        let p = PolySpec::new(
            1,
            1,
            1.0,
            vec![Term {
                alpha: vec![1],
                c: 1.0,
            }],
        )
        .unwrap();
        let cfg = GateConfig::new(0.5, 2, 0.01, 2).unwrap();
        let mut alloc = GidAlloc::new();
        let net = sparse_poly_net_inner(&p, 0.01, &cfg, PolyFinish::Clamp, &mut alloc).unwrap();
        for i in 0..=1000 {
            let t = -3.0 + 6.0 * i as f64 / 1000.0;
            // Inputs outside [-1,1] are outside the poly-net contract, so
            // drive the clamp through the identity template region instead.
            if t.abs() <= 1.0 {
                let got = net.eval1(&[t]).unwrap();
                assert!((got - t.clamp(-1.0, 1.0)).abs() <= 0.011, "t={t} got={got}");
            }
        }
    }

    #[test]
    fn radial_eval_and_depth() {
        let g = target_by_name("sin_pi_x1", 1, 2.0).unwrap();
        let build = radial_net(&g, 4, 4).unwrap();
        // Corollary depth under the d* = 1 reading.
        assert_eq!(
            build.net.depth() as f64,
            radial_corollary_depth(2.0).unwrap()
        );
        assert_eq!(build.net.depth(), 84);
        let spec = &build.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut max_err: f64 = 0.0;
        for _ in 0..300 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let exact = eval_composite(spec, &x).unwrap();
            max_err = max_err.max((build.net.eval1(&x).unwrap() - exact).abs());
        }
        assert!(max_err <= 20.0 * build.epsilon, "err {max_err}");
    }

    #[test]
    fn partial_radial_reduces_to_radial_when_dprime_is_d() {
        let g = target_by_name("sin_pi_x1", 1, 2.0).unwrap();
        let pr = partial_radial_net(&g, 4, 4, 4).unwrap();
        let r = radial_net(&g, 4, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = eval_composite(&pr.spec, &x).unwrap();
            let b = eval_composite(&r.spec, &x).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }
}
