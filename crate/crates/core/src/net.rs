//! Explicit layered ReLU networks with free-parameter accounting.
//!
//! A network is `x -> output_map(h_L)` where `h_k = relu(W_k h_{k-1} + b_k)`
//! and `h_0 = x`. The output map is a plain affine map (vector-valued; the
//! scalar case is one row). Entry metadata distinguishes tunable parameters
//! from fixed plumbing (identity channels, constant units, padding) and
//! assigns weight-share groups so that shared parameters are counted once.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SparseMatrix;

/// Present-but-fixed entries of one layer (the complement of the tunable set;
/// entries absent from the sparse matrix are fixed zeros already).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weights: Vec<(u32, u32)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub biases: Vec<u32>,
}

impl Mask {
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty() && self.biases.is_empty()
    }
}

/// Share-group labels. Group ids are global to the net; every entry of a
/// group holds the same value and the group counts as one free parameter.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ShareGroups {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weights: Vec<(u32, u32, u32)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub biases: Vec<(u32, u32)>,
}

impl ShareGroups {
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty() && self.biases.is_empty()
    }
}

fn skip_mask(m: &Option<Mask>) -> bool {
    m.as_ref().map_or(true, Mask::is_empty)
}

fn skip_groups(g: &Option<ShareGroups>) -> bool {
    g.as_ref().map_or(true, ShareGroups::is_empty)
}

/// One hidden layer: `h -> relu(W h + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: SparseMatrix,
    pub biases: Vec<f64>,
    #[serde(default, skip_serializing_if = "skip_mask")]
    pub mask: Option<Mask>,
    #[serde(default, skip_serializing_if = "skip_groups")]
    pub share_groups: Option<ShareGroups>,
}

/// Affine output map `h -> W h + c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub weights: SparseMatrix,
    pub offset: Vec<f64>,
    #[serde(default, skip_serializing_if = "skip_mask")]
    pub mask: Option<Mask>,
    #[serde(default, skip_serializing_if = "skip_groups")]
    pub share_groups: Option<ShareGroups>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReluNet {
    pub input_dim: usize,
    pub layers: Vec<Layer>,
    pub output_map: AffineMap,
}

/// Per-entry metadata used while building layers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EntryMeta {
    pub fixed: bool,
    pub group: Option<u32>,
}

impl EntryMeta {
    pub const FIXED: EntryMeta = EntryMeta {
        fixed: true,
        group: None,
    };
    pub const FREE: EntryMeta = EntryMeta {
        fixed: false,
        group: None,
    };
    pub fn grouped(gid: u32) -> EntryMeta {
        EntryMeta {
            fixed: false,
            group: Some(gid),
        }
    }
}

/// Allocator for share-group ids, threaded through nested constructions so
/// unrelated groups never collide.
#[derive(Debug, Default)]
pub struct GidAlloc {
    next: u32,
}

impl GidAlloc {
    pub fn new() -> Self {
        GidAlloc { next: 0 }
    }
    pub fn fresh(&mut self) -> u32 {
        let g = self.next;
        self.next += 1;
        g
    }
}

// ---------------------------------------------------------------------------
// Draft builders
// ---------------------------------------------------------------------------

/// Incremental builder for one layer. Units are appended; each unit is an
/// affine row over the previous layer's channels followed by the ReLU.
pub(crate) struct LayerDraft {
    in_dim: usize,
    weights: Vec<(u32, u32, f64, EntryMeta)>,
    biases: Vec<(f64, EntryMeta)>,
}

impl LayerDraft {
    pub fn new(in_dim: usize) -> Self {
        LayerDraft {
            in_dim,
            weights: Vec::new(),
            biases: Vec::new(),
        }
    }

    /// Appends a unit; all its weight entries carry the same metadata.
    pub fn unit(&mut self, row: &[(u32, f64)], bias: f64, meta: EntryMeta) -> u32 {
        self.unit_with(
            &row.iter().map(|&(c, v)| (c, v, meta)).collect::<Vec<_>>(),
            (bias, meta),
        )
    }

    pub fn unit_with(&mut self, row: &[(u32, f64, EntryMeta)], bias: (f64, EntryMeta)) -> u32 {
        let idx = self.biases.len() as u32;
        for &(c, v, m) in row {
            debug_assert!((c as usize) < self.in_dim);
            if v != 0.0 {
                self.weights.push((idx, c, v, m));
            }
        }
        self.biases.push(bias);
        idx
    }

    pub fn width(&self) -> usize {
        self.biases.len()
    }

    pub fn finish(self) -> Result<Layer> {
        let (matrix, mask_w, groups_w) = split_meta(self.width(), self.in_dim, self.weights)?;
        let mut mask_b = Vec::new();
        let mut groups_b = Vec::new();
        let mut biases = Vec::with_capacity(self.biases.len());
        for (i, (v, m)) in self.biases.into_iter().enumerate() {
            biases.push(v);
            if m.fixed {
                mask_b.push(i as u32);
            }
            if let Some(g) = m.group {
                groups_b.push((i as u32, g));
            }
        }
        Ok(Layer {
            weights: matrix,
            biases,
            mask: pack_mask(mask_w, mask_b),
            share_groups: pack_groups(groups_w, groups_b),
        })
    }
}

/// Builder for an affine map (output maps, combining rows).
pub(crate) struct AffineDraft {
    in_dim: usize,
    weights: Vec<(u32, u32, f64, EntryMeta)>,
    offsets: Vec<(f64, EntryMeta)>,
}

impl AffineDraft {
    pub fn new(in_dim: usize) -> Self {
        AffineDraft {
            in_dim,
            weights: Vec::new(),
            offsets: Vec::new(),
        }
    }

    pub fn row(&mut self, cols: &[(u32, f64)], offset: f64, meta: EntryMeta) -> u32 {
        self.row_with(
            &cols.iter().map(|&(c, v)| (c, v, meta)).collect::<Vec<_>>(),
            (offset, meta),
        )
    }

    pub fn row_with(&mut self, cols: &[(u32, f64, EntryMeta)], offset: (f64, EntryMeta)) -> u32 {
        let idx = self.offsets.len() as u32;
        for &(c, v, m) in cols {
            debug_assert!((c as usize) < self.in_dim);
            if v != 0.0 {
                self.weights.push((idx, c, v, m));
            }
        }
        self.offsets.push(offset);
        idx
    }

    pub fn finish(self) -> Result<AffineMap> {
        let rows = self.offsets.len();
        let (matrix, mask_w, groups_w) = split_meta(rows, self.in_dim, self.weights)?;
        let mut mask_b = Vec::new();
        let mut groups_b = Vec::new();
        let mut offset = Vec::with_capacity(rows);
        for (i, (v, m)) in self.offsets.into_iter().enumerate() {
            offset.push(v);
            if m.fixed {
                mask_b.push(i as u32);
            }
            if let Some(g) = m.group {
                groups_b.push((i as u32, g));
            }
        }
        Ok(AffineMap {
            weights: matrix,
            offset,
            mask: pack_mask(mask_w, mask_b),
            share_groups: pack_groups(groups_w, groups_b),
        })
    }
}

fn split_meta(
    rows: usize,
    cols: usize,
    entries: Vec<(u32, u32, f64, EntryMeta)>,
) -> Result<(SparseMatrix, Vec<(u32, u32)>, Vec<(u32, u32, u32)>)> {
    let mut mask = Vec::new();
    let mut groups = Vec::new();
    let mut triplets = Vec::with_capacity(entries.len());
    for (r, c, v, m) in entries {
        triplets.push((r, c, v));
        if m.fixed {
            mask.push((r, c));
        }
        if let Some(g) = m.group {
            groups.push((r, c, g));
        }
    }
    let matrix = SparseMatrix::from_triplets(rows, cols, triplets)?;
    mask.sort_unstable();
    groups.sort_unstable();
    Ok((matrix, mask, groups))
}

fn pack_mask(weights: Vec<(u32, u32)>, biases: Vec<u32>) -> Option<Mask> {
    if weights.is_empty() && biases.is_empty() {
        None
    } else {
        Some(Mask { weights, biases })
    }
}

fn pack_groups(weights: Vec<(u32, u32, u32)>, biases: Vec<(u32, u32)>) -> Option<ShareGroups> {
    if weights.is_empty() && biases.is_empty() {
        None
    } else {
        Some(ShareGroups { weights, biases })
    }
}

// ---------------------------------------------------------------------------
// Meta lookup helpers
// ---------------------------------------------------------------------------

struct MetaIndex {
    fixed_w: BTreeSet<(u32, u32)>,
    fixed_b: BTreeSet<u32>,
    group_w: HashMap<(u32, u32), u32>,
    group_b: HashMap<u32, u32>,
}

impl MetaIndex {
    fn of(mask: &Option<Mask>, groups: &Option<ShareGroups>) -> Self {
        let mut idx = MetaIndex {
            fixed_w: BTreeSet::new(),
            fixed_b: BTreeSet::new(),
            group_w: HashMap::new(),
            group_b: HashMap::new(),
        };
        if let Some(m) = mask {
            idx.fixed_w.extend(m.weights.iter().copied());
            idx.fixed_b.extend(m.biases.iter().copied());
        }
        if let Some(g) = groups {
            for &(r, c, gid) in &g.weights {
                idx.group_w.insert((r, c), gid);
            }
            for &(i, gid) in &g.biases {
                idx.group_b.insert(i, gid);
            }
        }
        idx
    }

    fn weight(&self, r: u32, c: u32) -> EntryMeta {
        EntryMeta {
            fixed: self.fixed_w.contains(&(r, c)),
            group: self.group_w.get(&(r, c)).copied(),
        }
    }

    fn bias(&self, i: u32) -> EntryMeta {
        EntryMeta {
            fixed: self.fixed_b.contains(&i),
            group: self.group_b.get(&i).copied(),
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Reusable evaluation buffers for hot loops.
#[derive(Default)]
pub struct Scratch {
    cur: Vec<f64>,
    next: Vec<f64>,
}

impl ReluNet {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn output_dim(&self) -> usize {
        self.output_map.weights.rows
    }

    pub fn max_width(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.biases.len())
            .max()
            .unwrap_or(0)
            .max(self.input_dim)
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = Scratch::default();
        Ok(self.eval_scratch(x, &mut scratch)?.to_vec())
    }

    pub fn eval_scratch<'s>(&self, x: &[f64], s: &'s mut Scratch) -> Result<&'s [f64]> {
        if x.len() != self.input_dim {
            return Err(Error::DimMismatch(format!(
                "input length {} != input_dim {}",
                x.len(),
                self.input_dim
            )));
        }
        s.cur.clear();
        s.cur.extend_from_slice(x);
        for layer in &self.layers {
            let width = layer.biases.len();
            s.next.clear();
            s.next.extend_from_slice(&layer.biases);
            debug_assert_eq!(s.next.len(), width);
            layer.weights.addmul_into(&s.cur, &mut s.next);
            for v in s.next.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            std::mem::swap(&mut s.cur, &mut s.next);
        }
        s.next.clear();
        s.next.extend_from_slice(&self.output_map.offset);
        self.output_map.weights.addmul_into(&s.cur, &mut s.next);
        Ok(&s.next)
    }

    /// Scalar convenience for single-output nets.
    pub fn eval1(&self, x: &[f64]) -> Result<f64> {
        let out = self.eval(x)?;
        if out.len() != 1 {
            return Err(Error::DimMismatch(format!(
                "expected scalar output, got {}",
                out.len()
            )));
        }
        Ok(out[0])
    }

    // -----------------------------------------------------------------------
    // Accounting
    // -----------------------------------------------------------------------

    /// Number of free parameters: each tunable entry counts once; entries of
    /// a share group count once per group; masked (fixed) entries and
    /// structural zeros count zero. Biases and output-map entries included.
    pub fn count_free_params(&self) -> usize {
        let mut groups: BTreeSet<u32> = BTreeSet::new();
        let mut count = 0usize;
        let visit = |entries: &SparseMatrix,
                         biases: &[f64],
                         mask: &Option<Mask>,
                         share: &Option<ShareGroups>,
                         count: &mut usize,
                         groups: &mut BTreeSet<u32>| {
            let idx = MetaIndex::of(mask, share);
            for &(r, c, _) in &entries.entries {
                let m = idx.weight(r, c);
                if m.fixed {
                    continue;
                }
                match m.group {
                    Some(g) => {
                        groups.insert(g);
                    }
                    None => *count += 1,
                }
            }
            for i in 0..biases.len() as u32 {
                let m = idx.bias(i);
                if m.fixed {
                    continue;
                }
                match m.group {
                    Some(g) => {
                        groups.insert(g);
                    }
                    None => *count += 1,
                }
            }
        };
        for layer in &self.layers {
            visit(
                &layer.weights,
                &layer.biases,
                &layer.mask,
                &layer.share_groups,
                &mut count,
                &mut groups,
            );
        }
        visit(
            &self.output_map.weights,
            &self.output_map.offset,
            &self.output_map.mask,
            &self.output_map.share_groups,
            &mut count,
            &mut groups,
        );
        count + groups.len()
    }

    /// Maximum absolute value over all tunable entries.
    pub fn param_bound(&self) -> f64 {
        let mut bound: f64 = 0.0;
        let visit = |entries: &SparseMatrix,
                         biases: &[f64],
                         mask: &Option<Mask>,
                         share: &Option<ShareGroups>,
                         bound: &mut f64| {
            let idx = MetaIndex::of(mask, share);
            for &(r, c, v) in &entries.entries {
                if !idx.weight(r, c).fixed {
                    *bound = bound.max(v.abs());
                }
            }
            for (i, &b) in biases.iter().enumerate() {
                if !idx.bias(i as u32).fixed {
                    *bound = bound.max(b.abs());
                }
            }
        };
        for layer in &self.layers {
            visit(
                &layer.weights,
                &layer.biases,
                &layer.mask,
                &layer.share_groups,
                &mut bound,
            );
        }
        visit(
            &self.output_map.weights,
            &self.output_map.offset,
            &self.output_map.mask,
            &self.output_map.share_groups,
            &mut bound,
        );
        bound
    }

    // -----------------------------------------------------------------------
    // Validation / serialization
    // -----------------------------------------------------------------------

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidNet("net must have at least one layer".into()));
        }
        let mut prev = self.input_dim;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.weights.validate()?;
            if layer.weights.cols != prev {
                return Err(Error::InvalidNet(format!(
                    "layer {k}: weight cols {} != previous width {prev}",
                    layer.weights.cols
                )));
            }
            if layer.biases.len() != layer.weights.rows {
                return Err(Error::InvalidNet(format!(
                    "layer {k}: {} biases for {} rows",
                    layer.biases.len(),
                    layer.weights.rows
                )));
            }
            check_meta_refs(&layer.weights, layer.biases.len(), &layer.mask, &layer.share_groups)?;
            prev = layer.weights.rows;
        }
        self.output_map.weights.validate()?;
        if self.output_map.weights.cols != prev {
            return Err(Error::InvalidNet(format!(
                "output map cols {} != last width {prev}",
                self.output_map.weights.cols
            )));
        }
        if self.output_map.offset.len() != self.output_map.weights.rows {
            return Err(Error::InvalidNet("output offset length mismatch".into()));
        }
        check_meta_refs(
            &self.output_map.weights,
            self.output_map.offset.len(),
            &self.output_map.mask,
            &self.output_map.share_groups,
        )?;
        self.check_group_values()?;
        Ok(())
    }

    /// Every share group must hold a single value across all its entries.
    fn check_group_values(&self) -> Result<()> {
        let mut values: BTreeMap<u32, f64> = BTreeMap::new();
        let mut check = |gid: u32, v: f64| -> Result<()> {
            match values.get(&gid) {
                Some(&prev) if prev.to_bits() != v.to_bits() => Err(Error::InvalidNet(format!(
                    "share group {gid} holds unequal values {prev} and {v}"
                ))),
                Some(_) => Ok(()),
                None => {
                    values.insert(gid, v);
                    Ok(())
                }
            }
        };
        let scan = |w: &SparseMatrix,
                        b: &[f64],
                        share: &Option<ShareGroups>,
                        check: &mut dyn FnMut(u32, f64) -> Result<()>|
         -> Result<()> {
            if let Some(g) = share {
                for &(r, c, gid) in &g.weights {
                    check(gid, w.get(r, c))?;
                }
                for &(i, gid) in &g.biases {
                    check(gid, b[i as usize])?;
                }
            }
            Ok(())
        };
        for layer in &self.layers {
            scan(&layer.weights, &layer.biases, &layer.share_groups, &mut check)?;
        }
        scan(
            &self.output_map.weights,
            &self.output_map.offset,
            &self.output_map.share_groups,
            &mut check,
        )?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<ReluNet> {
        let net: ReluNet = serde_json::from_str(s)?;
        net.validate()?;
        Ok(net)
    }
}

fn check_meta_refs(
    w: &SparseMatrix,
    n_bias: usize,
    mask: &Option<Mask>,
    share: &Option<ShareGroups>,
) -> Result<()> {
    let present: BTreeSet<(u32, u32)> = w.entries.iter().map(|&(r, c, _)| (r, c)).collect();
    if let Some(m) = mask {
        if m.weights.iter().any(|e| !present.contains(e)) {
            return Err(Error::InvalidNet("mask references absent entry".into()));
        }
        if m.biases.iter().any(|&i| i as usize >= n_bias) {
            return Err(Error::InvalidNet("mask references absent bias".into()));
        }
    }
    if let Some(g) = share {
        if g.weights.iter().any(|&(r, c, _)| !present.contains(&(r, c))) {
            return Err(Error::InvalidNet("share group references absent entry".into()));
        }
        if g.biases.iter().any(|&(i, _)| i as usize >= n_bias) {
            return Err(Error::InvalidNet("share group references absent bias".into()));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Structural constructors and combinators
// ---------------------------------------------------------------------------

/// Dense fully-connected net from explicit matrices; every entry tunable.
pub fn dense_net(
    input_dim: usize,
    layers: &[(Vec<Vec<f64>>, Vec<f64>)],
    output: (Vec<Vec<f64>>, Vec<f64>),
) -> Result<ReluNet> {
    let net = ReluNet {
        input_dim,
        layers: layers
            .iter()
            .map(|(w, b)| {
                Ok(Layer {
                    weights: SparseMatrix::from_dense(w)?,
                    biases: b.clone(),
                    mask: None,
                    share_groups: None,
                })
            })
            .collect::<Result<_>>()?,
        output_map: AffineMap {
            weights: SparseMatrix::from_dense(&output.0)?,
            offset: output.1,
            mask: None,
            share_groups: None,
        },
    };
    net.validate()?;
    Ok(net)
}

/// ReLU identity on `[-bound, bound]^dim` through `depth` layers.
///
/// Realized as `relu(x + bound) - bound` per channel: exact on the stated
/// domain, and inputs below `-bound` clip to `-bound`. All entries fixed.
pub fn identity_net(dim: usize, depth: usize, bound: f64) -> Result<ReluNet> {
    if dim == 0 || depth == 0 {
        return Err(Error::InvalidParam("identity_net needs dim, depth >= 1".into()));
    }
    if !(bound > 0.0) {
        return Err(Error::InvalidParam("identity_net bound must be positive".into()));
    }
    let mut layers = Vec::with_capacity(depth);
    for k in 0..depth {
        let mut draft = LayerDraft::new(dim);
        let bias = if k == 0 { bound } else { 0.0 };
        for c in 0..dim as u32 {
            draft.unit(&[(c, 1.0)], bias, EntryMeta::FIXED);
        }
        layers.push(draft.finish()?);
    }
    let mut out = AffineDraft::new(dim);
    for c in 0..dim as u32 {
        out.row(&[(c, 1.0)], -bound, EntryMeta::FIXED);
    }
    let net = ReluNet {
        input_dim: dim,
        layers,
        output_map: out.finish()?,
    };
    net.validate()?;
    Ok(net)
}

/// Composition `outer . inner` as one net: the inner output affine is fused
/// into the outer first layer, so evaluation agrees with evaluating the two
/// nets in sequence and the depth is the sum of the two depths.
pub fn compose(outer: &ReluNet, inner: &ReluNet) -> Result<ReluNet> {
    if inner.output_dim() != outer.input_dim {
        return Err(Error::DimMismatch(format!(
            "compose: inner output dim {} != outer input dim {}",
            inner.output_dim(),
            outer.input_dim
        )));
    }
    let fused = fuse_affine_into_layer(&outer.layers[0], &inner.output_map)?;
    let mut layers = inner.layers.clone();
    layers.push(fused);
    layers.extend(outer.layers[1..].iter().cloned());
    let net = ReluNet {
        input_dim: inner.input_dim,
        layers,
        output_map: outer.output_map.clone(),
    };
    net.validate()?;
    Ok(net)
}

/// W' = W A, b' = W c + b. Preserves entry metadata through unit-routing
/// output maps; general fusions produce fresh tunable entries.
fn fuse_affine_into_layer(layer: &Layer, affine: &AffineMap) -> Result<Layer> {
    let idx = MetaIndex::of(&layer.mask, &layer.share_groups);
    let offset_contrib = layer.weights.mul_vec(&affine.offset);
    let routed = affine.weights.is_unit_routing();
    let mut draft_entries: Vec<(u32, u32, f64, EntryMeta)> = Vec::new();
    if routed {
        // Column j of A holds at most one entry (k_j, 1.0): new entry
        // (i, j) is a verbatim copy of (i, k_j).
        let mut col_source: HashMap<u32, u32> = HashMap::new();
        for &(k, j, _) in &affine.weights.entries {
            col_source.insert(j, k);
        }
        let mut by_source: HashMap<u32, Vec<u32>> = HashMap::new();
        for (&j, &k) in &col_source {
            by_source.entry(k).or_default().push(j);
        }
        for &(i, k, v) in &layer.weights.entries {
            if let Some(js) = by_source.get(&k) {
                let meta = idx.weight(i, k);
                for &j in js {
                    draft_entries.push((i, j, v, meta));
                }
            }
        }
    } else {
        let product = layer.weights.matmul(&affine.weights)?;
        for &(i, j, v) in &product.entries {
            draft_entries.push((i, j, v, EntryMeta::FREE));
        }
    }
    let width = layer.biases.len();
    let (matrix, mask_w, groups_w) = split_meta(width, affine.weights.cols, draft_entries)?;
    let mut biases = Vec::with_capacity(width);
    let mut mask_b = Vec::new();
    let mut groups_b = Vec::new();
    for i in 0..width {
        let b = layer.biases[i] + offset_contrib[i];
        biases.push(b);
        let meta = if offset_contrib[i] == 0.0 {
            idx.bias(i as u32)
        } else {
            EntryMeta::FREE
        };
        if meta.fixed {
            mask_b.push(i as u32);
        }
        if let Some(g) = meta.group {
            groups_b.push((i as u32, g));
        }
    }
    Ok(Layer {
        weights: matrix,
        biases,
        mask: pack_mask(mask_w, mask_b),
        share_groups: pack_groups(groups_w, groups_b),
    })
}

/// Post-composes an affine map onto a net's output: `x -> W net(x) + c`.
pub fn apply_output_affine(net: &ReluNet, post: &AffineMap) -> Result<ReluNet> {
    if post.weights.cols != net.output_dim() {
        return Err(Error::DimMismatch(format!(
            "output affine cols {} != net output dim {}",
            post.weights.cols,
            net.output_dim()
        )));
    }
    let fused = fuse_affines(post, &net.output_map)?;
    Ok(ReluNet {
        input_dim: net.input_dim,
        layers: net.layers.clone(),
        output_map: fused,
    })
}

/// post . inner as a single affine map, with routed-metadata preservation
/// mirroring `fuse_affine_into_layer`.
fn fuse_affines(post: &AffineMap, inner: &AffineMap) -> Result<AffineMap> {
    let pseudo_layer = Layer {
        weights: post.weights.clone(),
        biases: post.offset.clone(),
        mask: post.mask.clone(),
        share_groups: post.share_groups.clone(),
    };
    let fused = fuse_affine_into_layer(&pseudo_layer, inner)?;
    Ok(AffineMap {
        weights: fused.weights,
        offset: fused.biases,
        mask: fused.mask,
        share_groups: fused.share_groups,
    })
}

enum InputLayout {
    Shared,
    BlockDiagonal,
}

/// Same-input stacking: all members read the same input vector; outputs are
/// concatenated. Shallower members are extended with identity-passthrough
/// layers when `pad_bound` is given.
pub fn parallel(nets: &[&ReluNet], pad_bound: Option<f64>) -> Result<ReluNet> {
    combine(nets, InputLayout::Shared, pad_bound)
}

/// Block-diagonal stacking on inputs and outputs: member k reads its own
/// slice of the concatenated input vector.
pub fn stack(nets: &[&ReluNet], pad_bound: Option<f64>) -> Result<ReluNet> {
    combine(nets, InputLayout::BlockDiagonal, pad_bound)
}

fn combine(nets: &[&ReluNet], layout: InputLayout, pad_bound: Option<f64>) -> Result<ReluNet> {
    if nets.is_empty() {
        return Err(Error::InvalidParam("cannot combine zero nets".into()));
    }
    if let InputLayout::Shared = layout {
        let d = nets[0].input_dim;
        if nets.iter().any(|n| n.input_dim != d) {
            return Err(Error::DimMismatch(
                "parallel members must share input_dim".into(),
            ));
        }
    }
    let max_depth = nets.iter().map(|n| n.depth()).max().unwrap();
    let mut padded: Vec<ReluNet> = Vec::with_capacity(nets.len());
    for &n in nets {
        if n.depth() < max_depth {
            let bound = pad_bound.ok_or_else(|| {
                Error::InvalidParam(
                    "members differ in depth; enable padding with a bound".into(),
                )
            })?;
            padded.push(pad_output_depth(n, max_depth - n.depth(), bound)?);
        } else {
            padded.push((*n).clone());
        }
    }

    let input_dim = match layout {
        InputLayout::Shared => padded[0].input_dim,
        InputLayout::BlockDiagonal => padded.iter().map(|n| n.input_dim).sum(),
    };

    let mut layers: Vec<Layer> = Vec::with_capacity(max_depth);
    for k in 0..max_depth {
        let mut entries: Vec<(u32, u32, f64, EntryMeta)> = Vec::new();
        let mut biases: Vec<(f64, EntryMeta)> = Vec::new();
        let mut row_off = 0u32;
        let mut col_off = 0u32;
        let mut in_dim = 0usize;
        for net in &padded {
            let layer = &net.layers[k];
            let idx = MetaIndex::of(&layer.mask, &layer.share_groups);
            let member_col_off = if k == 0 {
                match layout {
                    InputLayout::Shared => 0,
                    InputLayout::BlockDiagonal => col_off,
                }
            } else {
                col_off
            };
            for &(r, c, v) in &layer.weights.entries {
                entries.push((row_off + r, member_col_off + c, v, idx.weight(r, c)));
            }
            for (i, &b) in layer.biases.iter().enumerate() {
                biases.push((b, idx.bias(i as u32)));
            }
            row_off += layer.weights.rows as u32;
            col_off += layer.weights.cols as u32;
            in_dim += layer.weights.cols;
        }
        let total_in = if k == 0 {
            input_dim
        } else {
            in_dim
        };
        let width = biases.len();
        let (matrix, mask_w, groups_w) = split_meta(width, total_in, entries)?;
        let mut mask_b = Vec::new();
        let mut groups_b = Vec::new();
        let mut bias_vals = Vec::with_capacity(width);
        for (i, (v, m)) in biases.into_iter().enumerate() {
            bias_vals.push(v);
            if m.fixed {
                mask_b.push(i as u32);
            }
            if let Some(g) = m.group {
                groups_b.push((i as u32, g));
            }
        }
        layers.push(Layer {
            weights: matrix,
            biases: bias_vals,
            mask: pack_mask(mask_w, mask_b),
            share_groups: pack_groups(groups_w, groups_b),
        });
    }

    // Block-diagonal output map.
    let mut entries: Vec<(u32, u32, f64, EntryMeta)> = Vec::new();
    let mut offsets: Vec<(f64, EntryMeta)> = Vec::new();
    let mut row_off = 0u32;
    let mut col_off = 0u32;
    for net in &padded {
        let om = &net.output_map;
        let idx = MetaIndex::of(&om.mask, &om.share_groups);
        for &(r, c, v) in &om.weights.entries {
            entries.push((row_off + r, col_off + c, v, idx.weight(r, c)));
        }
        for (i, &o) in om.offset.iter().enumerate() {
            offsets.push((o, idx.bias(i as u32)));
        }
        row_off += om.weights.rows as u32;
        col_off += om.weights.cols as u32;
    }
    let rows = offsets.len();
    let last_width: usize = padded.iter().map(|n| n.output_map.weights.cols).sum();
    let (matrix, mask_w, groups_w) = split_meta(rows, last_width, entries)?;
    let mut mask_b = Vec::new();
    let mut groups_b = Vec::new();
    let mut offset_vals = Vec::with_capacity(rows);
    for (i, (v, m)) in offsets.into_iter().enumerate() {
        offset_vals.push(v);
        if m.fixed {
            mask_b.push(i as u32);
        }
        if let Some(g) = m.group {
            groups_b.push((i as u32, g));
        }
    }
    let net = ReluNet {
        input_dim,
        layers,
        output_map: AffineMap {
            weights: matrix,
            offset: offset_vals,
            mask: pack_mask(mask_w, mask_b),
            share_groups: pack_groups(groups_w, groups_b),
        },
    };
    net.validate()?;
    Ok(net)
}

/// Appends `extra` identity-passthrough layers after the output map.
///
/// Exact whenever every output stays in `[-bound, bound]`. The first added
/// layer absorbs the old output map (its entries keep their metadata); the
/// remaining layers and the new output map are fixed plumbing.
pub fn pad_output_depth(net: &ReluNet, extra: usize, bound: f64) -> Result<ReluNet> {
    if extra == 0 {
        return Ok(net.clone());
    }
    if !(bound > 0.0) {
        return Err(Error::InvalidParam("pad bound must be positive".into()));
    }
    let dim = net.output_dim();
    let mut layers = net.layers.clone();

    // relu(out + bound) with the old output affine folded in.
    let om = &net.output_map;
    let mut first = Layer {
        weights: om.weights.clone(),
        biases: om.offset.iter().map(|&o| o + bound).collect(),
        mask: om.mask.clone(),
        share_groups: om.share_groups.clone(),
    };
    // A bias that was fixed at offset 0 stays fixed; shifted tunable offsets
    // keep their tunability (same free slot, shifted value).
    if let Some(g) = &mut first.share_groups {
        // Shifted values break share-group equality with unshifted peers.
        g.biases.clear();
        if g.is_empty() && g.weights.is_empty() {
            first.share_groups = None;
        }
    }
    layers.push(first);
    for k in 1..extra {
        let _ = k;
        let mut draft = LayerDraft::new(dim);
        for c in 0..dim as u32 {
            draft.unit(&[(c, 1.0)], 0.0, EntryMeta::FIXED);
        }
        layers.push(draft.finish()?);
    }
    let mut out = AffineDraft::new(dim);
    for c in 0..dim as u32 {
        out.row(&[(c, 1.0)], -bound, EntryMeta::FIXED);
    }
    let net = ReluNet {
        input_dim: net.input_dim,
        layers,
        output_map: out.finish()?,
    };
    net.validate()?;
    Ok(net)
}

/// Re-indexes a net so it reads coordinates `[offset, offset+input_dim)` of a
/// wider input vector.
pub fn embed_input(net: &ReluNet, total_dim: usize, offset: usize) -> Result<ReluNet> {
    if offset + net.input_dim > total_dim {
        return Err(Error::DimMismatch(format!(
            "embed: offset {offset} + dim {} exceeds total {total_dim}",
            net.input_dim
        )));
    }
    let mut out = net.clone();
    out.input_dim = total_dim;
    let first = &mut out.layers[0];
    first.weights.cols = total_dim;
    for e in &mut first.weights.entries {
        e.1 += offset as u32;
    }
    if let Some(m) = &mut first.mask {
        for e in &mut m.weights {
            e.1 += offset as u32;
        }
    }
    if let Some(g) = &mut first.share_groups {
        for e in &mut g.weights {
            e.1 += offset as u32;
        }
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn psi_like() -> ReluNet {
        // relu(t+2) - relu(t+1) - relu(t-1) + relu(t-2)
        dense_net(
            1,
            &[(
                vec![vec![1.0], vec![1.0], vec![1.0], vec![1.0]],
                vec![2.0, 1.0, -1.0, -2.0],
            )],
            (vec![vec![1.0, -1.0, -1.0, 1.0]], vec![0.0]),
        )
        .unwrap()
    }

    fn random_net(rng: &mut ChaCha8Rng, input_dim: usize, widths: &[usize], out_dim: usize) -> ReluNet {
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for &w in widths {
            let mat: Vec<Vec<f64>> = (0..w)
                .map(|_| (0..prev).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let b: Vec<f64> = (0..w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            layers.push((mat, b));
            prev = w;
        }
        let out: Vec<Vec<f64>> = (0..out_dim)
            .map(|_| (0..prev).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let off: Vec<f64> = (0..out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        dense_net(input_dim, &layers, (out, off)).unwrap()
    }

    #[test]
    fn relu_kills_negative() {
        let net = dense_net(1, &[(vec![vec![1.0]], vec![0.0])], (vec![vec![1.0]], vec![0.0]))
            .unwrap();
        assert_eq!(net.eval1(&[-3.0]).unwrap(), 0.0);
    }

    #[test]
    fn psi_values() {
        let net = psi_like();
        assert_eq!(net.eval1(&[0.0]).unwrap(), 1.0);
        assert_eq!(net.eval1(&[1.5]).unwrap(), 0.5);
        assert_eq!(net.eval1(&[2.5]).unwrap(), 0.0);
    }

    #[test]
    fn dense_count_and_bound() {
        // d0=2, d1=3, scalar output: 3*2 + 3 + 3 + 1 = 13.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = random_net(&mut rng, 2, &[3], 1);
        assert_eq!(net.count_free_params(), 13);
        assert!(net.param_bound() <= 1.0);
    }

    #[test]
    fn share_group_counted_once() {
        // All first-layer weights in one group: 1 + 3 + 3 + 1 = 8.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = random_net(&mut rng, 2, &[3], 1);
        let l0 = &mut net.layers[0];
        let v = 0.25;
        for e in &mut l0.weights.entries {
            e.2 = v;
        }
        l0.share_groups = Some(ShareGroups {
            weights: l0.weights.entries.iter().map(|&(r, c, _)| (r, c, 7)).collect(),
            biases: vec![],
        });
        net.validate().unwrap();
        assert_eq!(net.count_free_params(), 8);
    }

    #[test]
    fn group_value_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = random_net(&mut rng, 2, &[3], 1);
        let l0 = &mut net.layers[0];
        l0.share_groups = Some(ShareGroups {
            weights: l0.weights.entries.iter().map(|&(r, c, _)| (r, c, 7)).collect(),
            biases: vec![],
        });
        assert!(net.validate().is_err());
    }

    #[test]
    fn identity_net_contract() {
        let id = identity_net(1, 3, 1.0).unwrap();
        assert_eq!(id.depth(), 3);
        assert_eq!(id.eval1(&[0.7]).unwrap(), 0.7);
        assert_eq!(id.eval1(&[-1.0]).unwrap(), -1.0);
        // Out-of-range clips at -bound: relu(-2 + 1) - 1 = -1.
        assert_eq!(id.eval1(&[-2.0]).unwrap(), -1.0);
        assert_eq!(id.count_free_params(), 0);
    }

    #[test]
    fn compose_matches_sequential_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_net(&mut rng, 3, &[5, 4], 2);
        let g = random_net(&mut rng, 2, &[4], 1);
        let gf = compose(&g, &f).unwrap();
        assert_eq!(gf.depth(), f.depth() + g.depth());
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let direct = g.eval(&f.eval(&x).unwrap()).unwrap();
            let fused = gf.eval(&x).unwrap();
            assert!((direct[0] - fused[0]).abs() <= 1e-12);
        }
    }

    #[test]
    fn compose_identity_is_pointwise_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_net(&mut rng, 2, &[6], 3);
        // Keep f's outputs inside the identity domain.
        let id = identity_net(3, 2, 100.0).unwrap();
        let idf = compose(&id, &f).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = f.eval(&x).unwrap();
            let b = idf.eval(&x).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn compose_count_formula() {
        // count(g.f) = count(f) + count(g) - count(f.out) - count(g.layer1)
        //              + count(fused layer), for dense ungrouped nets.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = random_net(&mut rng, 2, &[3], 2);
        let g = random_net(&mut rng, 2, &[2], 1);
        let gf = compose(&g, &f).unwrap();
        let count_f = f.count_free_params(); // 2*3+3 + 3*2+2 = 17
        let count_g = g.count_free_params(); // 2*2+2 + 2+1 = 9
        let f_out = 3 * 2 + 2;
        let g_l1 = 2 * 2 + 2;
        let fused = 3 * 2 + 2; // dense 2x3 fused weights + 2 biases
        assert_eq!(count_f, 17);
        assert_eq!(count_g, 9);
        assert_eq!(
            gf.count_free_params(),
            count_f + count_g - f_out - g_l1 + fused
        );
    }

    #[test]
    fn parallel_matches_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_net(&mut rng, 2, &[4], 1);
        let b = random_net(&mut rng, 2, &[3, 3], 1);
        let p = parallel(&[&a, &b], Some(50.0)).unwrap();
        assert_eq!(p.depth(), 2);
        assert_eq!(p.output_dim(), 2);
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let out = p.eval(&x).unwrap();
            assert!((out[0] - a.eval1(&x).unwrap()).abs() <= 1e-12);
            assert!((out[1] - b.eval1(&x).unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn singleton_parallel_is_identity_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_net(&mut rng, 3, &[4], 2);
        let p = parallel(&[&f], None).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert_eq!(f.eval(&x).unwrap(), p.eval(&x).unwrap());
        }
    }

    #[test]
    fn stack_routes_input_slices() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_net(&mut rng, 2, &[3], 1);
        let b = random_net(&mut rng, 1, &[2], 1);
        let s = stack(&[&a, &b], None).unwrap();
        assert_eq!(s.input_dim, 3);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let out = s.eval(&x).unwrap();
            assert!((out[0] - a.eval1(&x[..2]).unwrap()).abs() <= 1e-12);
            assert!((out[1] - b.eval1(&x[2..]).unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn padding_preserves_values_and_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let f = random_net(&mut rng, 2, &[4], 2);
        let padded = pad_output_depth(&f, 3, 100.0).unwrap();
        assert_eq!(padded.depth(), f.depth() + 3);
        assert_eq!(padded.count_free_params(), f.count_free_params());
        for _ in 0..50 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = f.eval(&x).unwrap();
            let b = padded.eval(&x).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-12, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn embed_input_reads_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = random_net(&mut rng, 2, &[3], 1);
        let e = embed_input(&f, 5, 2).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert_eq!(e.eval1(&x).unwrap(), f.eval1(&x[2..4]).unwrap());
        }
    }

    #[test]
    fn json_roundtrip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let net = random_net(&mut rng, 3, &[4, 2], 2);
            let json = net.to_json().unwrap();
            let back = ReluNet::from_json(&json).unwrap();
            assert_eq!(net, back);
            // Bit-exactness of every float.
            for (l1, l2) in net.layers.iter().zip(&back.layers) {
                for (a, b) in l1.weights.entries.iter().zip(&l2.weights.entries) {
                    assert_eq!(a.2.to_bits(), b.2.to_bits());
                }
                for (a, b) in l1.biases.iter().zip(&l2.biases) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn eval_rejects_dim_mismatch() {
        let net = psi_like();
        assert!(net.eval(&[0.0, 1.0]).is_err());
    }
}
