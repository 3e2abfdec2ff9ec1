//! Sparse multivariate polynomials and their deep-net approximators.
//!
//! A monomial x^alpha of degree at most beta is the product of beta factors
//! (coordinates repeated per alpha, padded with literal ones), fed through an
//! l-ary product gate. A sparse polynomial sums its monomial branches with
//! the coefficients in the output map; all branches share one set of gate
//! parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{binary_gate_depth, productl_template, GateConfig};
use crate::net::{
    apply_output_affine, compose, pad_output_depth, parallel, AffineDraft, EntryMeta, GidAlloc,
    LayerDraft, ReluNet,
};

/// One monomial term: coefficient times x^alpha.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub alpha: Vec<u32>,
    pub c: f64,
}

/// Sparse polynomial on [-1,1]^dim with degree and coefficient bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolySpec {
    pub dim: usize,
    pub degree: u32,
    pub coeff_bound: f64,
    pub terms: Vec<Term>,
}

impl PolySpec {
    pub fn new(dim: usize, degree: u32, coeff_bound: f64, mut terms: Vec<Term>) -> Result<Self> {
        terms.sort_by(|a, b| a.alpha.cmp(&b.alpha));
        let spec = PolySpec {
            dim,
            degree,
            coeff_bound,
            terms,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParam("polynomial dimension must be >= 1".into()));
        }
        if self.degree == 0 {
            return Err(Error::InvalidParam("polynomial degree must be >= 1".into()));
        }
        if !(self.coeff_bound > 0.0) {
            return Err(Error::InvalidParam("coefficient bound must be positive".into()));
        }
        for t in &self.terms {
            if t.alpha.len() != self.dim {
                return Err(Error::DimMismatch(format!(
                    "exponent vector length {} != dim {}",
                    t.alpha.len(),
                    self.dim
                )));
            }
            let total: u32 = t.alpha.iter().sum();
            if total > self.degree {
                return Err(Error::InvalidParam(format!(
                    "|alpha| = {total} exceeds degree {}",
                    self.degree
                )));
            }
            if t.c.abs() > self.coeff_bound {
                return Err(Error::InvalidParam(format!(
                    "coefficient {} exceeds bound {}",
                    t.c, self.coeff_bound
                )));
            }
        }
        for w in self.terms.windows(2) {
            if w[0].alpha == w[1].alpha {
                return Err(Error::InvalidParam("duplicate exponent vector".into()));
            }
        }
        Ok(())
    }

    /// Sparsity: number of stored terms.
    pub fn sparsity(&self) -> usize {
        self.terms.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<PolySpec> {
        let spec: PolySpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Exact evaluation of the polynomial.
pub fn eval_poly(p: &PolySpec, x: &[f64]) -> Result<f64> {
    if x.len() != p.dim {
        return Err(Error::DimMismatch(format!(
            "point length {} != dim {}",
            x.len(),
            p.dim
        )));
    }
    let mut sum = 0.0;
    for t in &p.terms {
        let mut m = t.c;
        for (xi, &a) in x.iter().zip(&t.alpha) {
            if a > 0 {
                m *= xi.powi(a as i32);
            }
        }
        sum += m;
    }
    Ok(sum)
}

/// Routing net feeding (coordinates repeated per alpha, then literal ones)
/// into a gate of the given arity. Identity and constant units are fixed
/// plumbing.
fn monomial_prep(dim: usize, alpha: &[u32], arity: usize) -> Result<ReluNet> {
    let mut layer = LayerDraft::new(dim);
    let mut coord_unit = vec![None::<u32>; dim];
    for (i, &a) in alpha.iter().enumerate() {
        if a > 0 {
            coord_unit[i] = Some(layer.unit(&[(i as u32, 1.0)], 1.0, EntryMeta::FIXED));
        }
    }
    let total: u32 = alpha.iter().sum();
    let const_unit = if (total as usize) < arity {
        Some(layer.unit(&[], 1.0, EntryMeta::FIXED))
    } else {
        None
    };
    let mut out = AffineDraft::new(layer.width());
    for (i, &a) in alpha.iter().enumerate() {
        for _ in 0..a {
            out.row(
                &[(coord_unit[i].unwrap(), 1.0)],
                -1.0,
                EntryMeta::FIXED,
            );
        }
    }
    for _ in total as usize..arity {
        out.row(&[(const_unit.unwrap(), 1.0)], 0.0, EntryMeta::FIXED);
    }
    let net = ReluNet {
        input_dim: dim,
        layers: vec![layer.finish()?],
        output_map: out.finish()?,
    };
    net.validate()?;
    Ok(net)
}

/// Net approximating x^alpha on [-1,1]^dim within cfg.epsilon, with exactly
/// 2*beta*l_tilde + 8*beta + 1 layers.
pub fn monomial_net(dim: usize, alpha: &[u32], beta: u32, cfg: &GateConfig) -> Result<ReluNet> {
    cfg.validate()?;
    if alpha.len() != dim {
        return Err(Error::DimMismatch("alpha length != dim".into()));
    }
    if alpha.iter().sum::<u32>() > beta {
        return Err(Error::InvalidParam("|alpha| exceeds beta".into()));
    }
    if beta == 0 {
        return Err(Error::InvalidParam("beta must be >= 1".into()));
    }
    let mut alloc = GidAlloc::new();
    let gate_depth = binary_gate_depth(cfg.l_tilde) * beta as usize;
    let gate = productl_template(beta, cfg.epsilon, cfg.l_tilde, gate_depth, &mut alloc)?;
    let branch = compose(&gate, &monomial_prep(dim, alpha, beta as usize)?)?;
    let target = sparse_poly_depth(beta, cfg.l_tilde);
    pad_output_depth(&branch, target - branch.depth(), 2.0)
}

/// Layer-count formula for the sparse polynomial net.
pub fn sparse_poly_depth(beta: u32, l_tilde: u32) -> usize {
    binary_gate_depth(l_tilde) * beta as usize + 1
}

/// How the assembled polynomial net terminates.
pub(crate) enum PolyFinish {
    /// Identity padding up to the formula depth.
    Pad,
    /// Padding to depth-1 then an exact clamp of the output into [-1,1];
    /// total depth still equals the formula.
    Clamp,
}

/// Report accompanying a constructed sparse-polynomial net.
#[derive(Clone, Debug, Serialize)]
pub struct PolyNetReport {
    pub sparsity: usize,
    pub per_monomial_accuracy: f64,
    pub depth: usize,
    pub free_params: usize,
    pub param_bound: f64,
}

/// Deep net approximating a sparse polynomial within epsilon on [-1,1]^dim.
///
/// Per-monomial gate accuracy is epsilon / (mu * B); the mu coefficients sit
/// in the output map and all gate branches share parameters.
pub fn sparse_poly_net(p: &PolySpec, cfg: &GateConfig) -> Result<(ReluNet, PolyNetReport)> {
    let mut alloc = GidAlloc::new();
    let net = sparse_poly_net_inner(p, cfg.epsilon, cfg, PolyFinish::Pad, &mut alloc)?;
    let report = PolyNetReport {
        sparsity: p.sparsity(),
        per_monomial_accuracy: per_monomial_accuracy(p, cfg.epsilon),
        depth: net.depth(),
        free_params: net.count_free_params(),
        param_bound: net.param_bound(),
    };
    Ok((net, report))
}

fn per_monomial_accuracy(p: &PolySpec, epsilon: f64) -> f64 {
    let mu = p.sparsity().max(1) as f64;
    (epsilon / (mu * p.coeff_bound)).min(0.25)
}

pub(crate) fn sparse_poly_net_inner(
    p: &PolySpec,
    epsilon: f64,
    cfg: &GateConfig,
    finish: PolyFinish,
    alloc: &mut GidAlloc,
) -> Result<ReluNet> {
    cfg.validate()?;
    p.validate()?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParam("epsilon must lie in (0,1)".into()));
    }
    let beta = p.degree;
    let target_depth = sparse_poly_depth(beta, cfg.l_tilde);
    // Clamp finishes reserve one layer for the clamp itself.
    let gate_depth = match finish {
        PolyFinish::Pad => binary_gate_depth(cfg.l_tilde) * beta as usize,
        PolyFinish::Clamp => binary_gate_depth(cfg.l_tilde) * beta as usize - 1,
    };

    let assembled = if p.terms.is_empty() {
        // Empty support: the zero net.
        let mut layer = LayerDraft::new(p.dim);
        layer.unit(&[], 0.0, EntryMeta::FIXED);
        let mut out = AffineDraft::new(1);
        out.row(&[], 0.0, EntryMeta::FIXED);
        ReluNet {
            input_dim: p.dim,
            layers: vec![layer.finish()?],
            output_map: out.finish()?,
        }
    } else {
        let nu = per_monomial_accuracy(p, epsilon);
        let gate = productl_template(beta, nu, cfg.l_tilde, gate_depth, alloc)?;
        let branches: Vec<ReluNet> = p
            .terms
            .iter()
            .map(|t| compose(&gate, &monomial_prep(p.dim, &t.alpha, beta as usize)?))
            .collect::<Result<_>>()?;
        let refs: Vec<&ReluNet> = branches.iter().collect();
        let stacked = parallel(&refs, None)?;
        let mut combine = AffineDraft::new(p.terms.len());
        let row: Vec<(u32, f64, EntryMeta)> = p
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (i as u32, t.c, EntryMeta::FREE))
            .collect();
        combine.row_with(&row, (0.0, EntryMeta::FIXED));
        apply_output_affine(&stacked, &combine.finish()?)?
    };

    let out_bound = p
        .terms
        .iter()
        .map(|t| t.c.abs())
        .sum::<f64>()
        .mul_add(2.0, 1.0);
    match finish {
        PolyFinish::Pad => {
            pad_output_depth(&assembled, target_depth - assembled.depth(), out_bound)
        }
        PolyFinish::Clamp => {
            let padded =
                pad_output_depth(&assembled, target_depth - 1 - assembled.depth(), out_bound)?;
            append_clamp(&padded)
        }
    }
}

/// Appends one hidden layer clamping every output channel into [-1,1]:
/// min(1, max(-1, t)) = relu(t+1) - relu(t-1) - 1, exact for all t.
pub(crate) fn append_clamp(net: &ReluNet) -> Result<ReluNet> {
    let dim = net.output_dim();
    let mut layer = LayerDraft::new(dim);
    let mut rows = Vec::with_capacity(dim);
    for c in 0..dim as u32 {
        let hi = layer.unit(&[(c, 1.0)], 1.0, EntryMeta::FIXED);
        let lo = layer.unit(&[(c, 1.0)], -1.0, EntryMeta::FIXED);
        rows.push((hi, lo));
    }
    let clamp_layer = layer.finish()?;
    let mut out = AffineDraft::new(2 * dim);
    for &(hi, lo) in &rows {
        out.row(&[(hi, 1.0), (lo, -1.0)], -1.0, EntryMeta::FIXED);
    }
    // Fuse the old output affine into the clamp layer.
    let clamp_net = ReluNet {
        input_dim: dim,
        layers: vec![clamp_layer],
        output_map: out.finish()?,
    };
    compose(&clamp_net, net)
}
