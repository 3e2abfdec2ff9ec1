//! Product-gate constructions with a depth-parameter trade-off.
//!
//! The binary gate approximates `u*u'` on `[-2,2]^2` within epsilon using a
//! fixed number of layers `2*l_tilde + 8`; accuracy beyond what that depth
//! buys by sawtooth composition is paid for with width. An l-ary gate chains
//! binary gates, all sharing one set of stage parameters, with unconsumed
//! inputs carried through identity channels.
//!
//! Square gates use the sawtooth expansion of t^2 on [0,1]: truncating after
//! S levels leaves error 4^(-S-1). Levels are packed into the available
//! layers in groups of K; one layer realizes a whole group of levels from
//! 2^K sawtooth units, and composition across layers multiplies the teeth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{
    compose, identity_net, pad_output_depth, stack, AffineDraft, EntryMeta, GidAlloc, LayerDraft,
    ReluNet,
};

/// Configuration for the gate family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    /// Trade-off exponent theta > 0; smaller theta means fewer parameters
    /// but forces a larger l_tilde.
    pub theta: f64,
    /// Depth knob; must satisfy l_tilde > 1/(2*theta).
    pub l_tilde: u32,
    /// Target accuracy in (0,1).
    pub epsilon: f64,
    /// Number of factors for the l-ary gate (>= 2).
    pub arity: u32,
}

impl GateConfig {
    pub fn new(theta: f64, l_tilde: u32, epsilon: f64, arity: u32) -> Result<Self> {
        let cfg = GateConfig {
            theta,
            l_tilde,
            epsilon,
            arity,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0) {
            return Err(Error::InvalidParam("theta must be positive".into()));
        }
        if self.l_tilde < 1 || (self.l_tilde as f64) <= 1.0 / (2.0 * self.theta) {
            return Err(Error::InvalidParam(format!(
                "l_tilde {} must exceed 1/(2 theta) = {}",
                self.l_tilde,
                1.0 / (2.0 * self.theta)
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParam("epsilon must lie in (0,1)".into()));
        }
        Ok(())
    }

    fn require_arity(&self) -> Result<()> {
        if self.arity < 2 {
            return Err(Error::InvalidParam("product gate arity must be >= 2".into()));
        }
        Ok(())
    }
}

/// Layers of the binary gate (and of the padded square gate).
pub fn binary_gate_depth(l_tilde: u32) -> usize {
    2 * l_tilde as usize + 8
}

/// Layer budget of the l-ary gate: (2*l_tilde + 8) * arity.
pub fn product_gate_depth(l_tilde: u32, arity: u32) -> usize {
    binary_gate_depth(l_tilde) * arity as usize
}

/// Number of sawtooth levels needed for |f_S - t^2| = 4^(-S-1) <= delta.
fn levels_for(delta: f64) -> usize {
    let raw = (1.0 / delta).log2() / 2.0; // log4(1/delta)
    let s = raw.ceil() as i64 - 1;
    s.max(0) as usize
}

/// Coefficients of the level-`s` sawtooth over units relu(y - k/2^s):
/// slope pattern 2^s, then alternating +-2^(s+1).
fn sawtooth_coeffs(s: usize) -> Vec<f64> {
    let teeth = 1usize << s;
    let mut coeffs = Vec::with_capacity(teeth);
    coeffs.push((1u64 << s) as f64);
    for k in 1..teeth {
        let c = (2u64 << s) as f64;
        coeffs.push(if k % 2 == 0 { c } else { -c });
    }
    coeffs
}

/// Square chain on [0,1]: |net(t) - t^2| <= delta using at most `max_blocks`
/// hidden layers. Every tunable entry carries a fresh share-group id so that
/// template reuse (three chains per binary gate, one gate per stage) counts
/// each parameter once.
fn square_chain(delta: f64, max_blocks: usize, alloc: &mut GidAlloc) -> Result<ReluNet> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParam("square accuracy must be positive".into()));
    }
    let total_levels = levels_for(delta);
    if total_levels == 0 {
        // f_0(t) = t already achieves error 1/4 <= delta.
        let mut layer = LayerDraft::new(1);
        let u = layer.unit(&[(0, 1.0)], 0.0, EntryMeta::FIXED);
        let mut out = AffineDraft::new(1);
        out.row(&[(u, 1.0)], 0.0, EntryMeta::FIXED);
        return Ok(ReluNet {
            input_dim: 1,
            layers: vec![layer.finish()?],
            output_map: out.finish()?,
        });
    }
    let per_block = total_levels.div_ceil(max_blocks).max(1);
    let blocks = total_levels.div_ceil(per_block);

    // Affine views of the running state over the previous layer's units:
    // y = g_{consumed}(t) and p = f_{consumed}(t) = t - sum of levels so far.
    let mut y_affine: Vec<(u32, f64)> = vec![(0, 1.0)];
    let mut y_bias = 0.0;
    let mut p_affine: Vec<(u32, f64)> = vec![(0, 1.0)];
    let mut p_bias = 0.0;
    let mut in_dim = 1usize;
    let mut consumed = 0usize;

    let mut layers = Vec::with_capacity(blocks);
    for _ in 0..blocks {
        let local = per_block.min(total_levels - consumed);
        let teeth = 1usize << local;
        let mut draft = LayerDraft::new(in_dim);

        // Carry unit for p (p >= 0 on [0,1]).
        let p_row: Vec<(u32, f64, EntryMeta)> = p_affine
            .iter()
            .map(|&(c, v)| (c, v, EntryMeta::grouped(alloc.fresh())))
            .collect();
        let p_unit = draft.unit_with(&p_row, (p_bias, EntryMeta::grouped(alloc.fresh())));

        // Sawtooth units relu(y - k/2^local), k = 0..teeth-1.
        let mut saw_units = Vec::with_capacity(teeth);
        for k in 0..teeth {
            let row: Vec<(u32, f64, EntryMeta)> = y_affine
                .iter()
                .map(|&(c, v)| (c, v, EntryMeta::grouped(alloc.fresh())))
                .collect();
            let bias = y_bias - k as f64 / teeth as f64;
            saw_units.push(draft.unit_with(&row, (bias, EntryMeta::grouped(alloc.fresh()))));
        }

        // Next-state affines over this layer's units.
        let g_top = sawtooth_coeffs(local);
        y_affine = saw_units
            .iter()
            .zip(&g_top)
            .map(|(&u, &c)| (u, c))
            .collect();
        y_bias = 0.0;

        let mut p_coeffs = vec![0.0f64; teeth];
        for lvl in 1..=local {
            let scale = 0.25f64.powi((consumed + lvl) as i32);
            let stride = 1usize << (local - lvl);
            for (k_small, c) in sawtooth_coeffs(lvl).into_iter().enumerate() {
                p_coeffs[k_small * stride] -= scale * c;
            }
        }
        p_affine = vec![(p_unit, 1.0)];
        for (k, &c) in p_coeffs.iter().enumerate() {
            if c != 0.0 {
                p_affine.push((saw_units[k], c));
            }
        }
        p_bias = 0.0;

        in_dim = draft.width();
        layers.push(draft.finish()?);
        consumed += local;
    }

    let mut out = AffineDraft::new(in_dim);
    let row: Vec<(u32, f64, EntryMeta)> = p_affine
        .iter()
        .map(|&(c, v)| (c, v, EntryMeta::grouped(alloc.fresh())))
        .collect();
    out.row_with(&row, (p_bias, EntryMeta::FIXED));
    let net = ReluNet {
        input_dim: 1,
        layers,
        output_map: out.finish()?,
    };
    net.validate()?;
    Ok(net)
}

/// Square gate on [0,1] with exactly 2*l_tilde + 8 layers.
pub fn square_gate(cfg: &GateConfig) -> Result<ReluNet> {
    cfg.validate()?;
    let mut alloc = GidAlloc::new();
    let chain = square_chain(cfg.epsilon, 2 * cfg.l_tilde as usize + 6, &mut alloc)?;
    let target = binary_gate_depth(cfg.l_tilde);
    pad_output_depth(&chain, target - chain.depth(), 2.0)
}

/// Binary product gate on [-2,2]^2 via the polarization identity
/// u*u' = 8[(|u+u'|/4)^2 - (|u|/4)^2 - (|u'|/4)^2], each square within
/// epsilon/24 so the assembled error stays within epsilon. Exactly
/// 2*l_tilde + 8 layers.
pub fn product2_gate(cfg: &GateConfig) -> Result<ReluNet> {
    cfg.validate()?;
    let mut alloc = GidAlloc::new();
    product2_template(cfg.epsilon, cfg.l_tilde, &mut alloc)
}

fn product2_template(epsilon: f64, l_tilde: u32, alloc: &mut GidAlloc) -> Result<ReluNet> {
    let delta = epsilon / 24.0;
    let chain = square_chain(delta, 2 * l_tilde as usize + 6, alloc)?;
    let three = stack(&[&chain, &chain, &chain], None)?;

    // Absolute-value layer: |u+u'|/4, |u|/4, |u'|/4 in [0,1].
    let mut prep = LayerDraft::new(2);
    let mut meta = || EntryMeta::grouped(alloc.fresh());
    let upp = prep.unit_with(&[(0, 1.0, meta()), (1, 1.0, meta())], (0.0, EntryMeta::FIXED));
    let upn = prep.unit_with(
        &[(0, -1.0, meta()), (1, -1.0, meta())],
        (0.0, EntryMeta::FIXED),
    );
    let up = prep.unit_with(&[(0, 1.0, meta())], (0.0, EntryMeta::FIXED));
    let un = prep.unit_with(&[(0, -1.0, meta())], (0.0, EntryMeta::FIXED));
    let vp = prep.unit_with(&[(1, 1.0, meta())], (0.0, EntryMeta::FIXED));
    let vn = prep.unit_with(&[(1, -1.0, meta())], (0.0, EntryMeta::FIXED));
    let mut prep_out = AffineDraft::new(prep.width());
    prep_out.row(&[(upp, 0.25), (upn, 0.25)], 0.0, EntryMeta::FIXED);
    prep_out.row(&[(up, 0.25), (un, 0.25)], 0.0, EntryMeta::FIXED);
    prep_out.row(&[(vp, 0.25), (vn, 0.25)], 0.0, EntryMeta::FIXED);
    let prep_net = ReluNet {
        input_dim: 2,
        layers: vec![prep.finish()?],
        output_map: prep_out.finish()?,
    };

    let body = compose(&three, &prep_net)?;

    // 8*(s1 - s2 - s3).
    let mut post = AffineDraft::new(3);
    post.row(&[(0, 8.0), (1, -8.0), (2, -8.0)], 0.0, EntryMeta::FIXED);
    let combined = crate::net::apply_output_affine(&body, &post.finish()?)?;

    let target = binary_gate_depth(l_tilde);
    pad_output_depth(&combined, target - combined.depth(), 5.0)
}

/// l-ary product gate on [-1,1]^arity with exactly (2*l_tilde+8)*arity
/// layers. Binary stages are built to accuracy epsilon/arity and share one
/// parameter set; inputs not yet consumed ride identity channels.
pub fn productl_gate(cfg: &GateConfig) -> Result<ReluNet> {
    cfg.validate()?;
    cfg.require_arity()?;
    let mut alloc = GidAlloc::new();
    let depth = product_gate_depth(cfg.l_tilde, cfg.arity);
    productl_template(cfg.arity, cfg.epsilon, cfg.l_tilde, depth, &mut alloc)
}

/// l-ary gate padded to exactly `depth` layers (callers sometimes reserve a
/// layer for a clamp on top of the formula depth).
pub(crate) fn productl_template(
    arity: u32,
    epsilon: f64,
    l_tilde: u32,
    depth: usize,
    alloc: &mut GidAlloc,
) -> Result<ReluNet> {
    let stage_depth = binary_gate_depth(l_tilde);
    if arity == 1 {
        // Product of one factor: exact identity, padded to the gate depth.
        return identity_net(1, depth, 1.0);
    }
    let ell = arity as usize;
    let stage_eps = epsilon / ell as f64;
    let p2 = product2_template(stage_eps, l_tilde, alloc)?;

    let mut net: Option<ReluNet> = None;
    for j in 1..ell {
        let carried = ell - 1 - j;
        let stage = if carried > 0 {
            let id = identity_net(carried, stage_depth, 1.0)?;
            stack(&[&p2, &id], None)?
        } else {
            p2.clone()
        };
        net = Some(match net {
            None => stage,
            Some(inner) => compose(&stage, &inner)?,
        });
    }
    let net = net.expect("arity >= 2");
    if depth < net.depth() {
        return Err(Error::InvalidParam(format!(
            "requested gate depth {depth} below natural depth {}",
            net.depth()
        )));
    }
    pad_output_depth(&net, depth - net.depth(), 4.0)
}
