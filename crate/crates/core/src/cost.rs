//! Join, aggregation and repartition cost formulas.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{AxisSet, BoundVector, EinsumNode, EinsumProgram, Label, VertexId};
use crate::stats::{ProgramStats, TensorStats};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("kernel call needs {needed} bytes, over the {limit} byte limit")]
    Memory { needed: f64, limit: f64 },
    #[error("gamma perturbation needs alpha*theta = 1 with both positive, got alpha={alpha} theta={theta}")]
    InvalidGamma { alpha: f64, theta: f64 },
    #[error("cost parameter `{name}`: {message}")]
    InvalidParam { name: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub c_xfer: f64,
    pub c_fixed: f64,
    pub c_kernel_flop: f64,
    pub c_add: f64,
    pub element_bytes: f64,
    pub key_bytes: f64,
    pub memory_limit_bytes: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            c_xfer: 1.0,
            c_fixed: 100.0,
            c_kernel_flop: 0.1,
            c_add: 0.1,
            element_bytes: 8.0,
            key_bytes: 4.0,
            memory_limit_bytes: f64::INFINITY,
        }
    }
}

impl CostParams {
    pub const NAMES: [&'static str; 7] = [
        "c_xfer",
        "c_fixed",
        "c_kernel_flop",
        "c_add",
        "element_bytes",
        "key_bytes",
        "memory_limit_bytes",
    ];

    /// The four per-unit cost constants multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            c_xfer: self.c_xfer * k,
            c_fixed: self.c_fixed * k,
            c_kernel_flop: self.c_kernel_flop * k,
            c_add: self.c_add * k,
            ..*self
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "c_xfer" => self.c_xfer,
            "c_fixed" => self.c_fixed,
            "c_kernel_flop" => self.c_kernel_flop,
            "c_add" => self.c_add,
            "element_bytes" => self.element_bytes,
            "key_bytes" => self.key_bytes,
            "memory_limit_bytes" => self.memory_limit_bytes,
            _ => return None,
        })
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<(), CostError> {
        let slot = match name {
            "c_xfer" => &mut self.c_xfer,
            "c_fixed" => &mut self.c_fixed,
            "c_kernel_flop" => &mut self.c_kernel_flop,
            "c_add" => &mut self.c_add,
            "element_bytes" => &mut self.element_bytes,
            "key_bytes" => &mut self.key_bytes,
            "memory_limit_bytes" => &mut self.memory_limit_bytes,
            _ => {
                return Err(CostError::InvalidParam {
                    name: name.to_string(),
                    message: "unknown parameter".into(),
                })
            }
        };
        *slot = value;
        self.validate()
    }

    pub fn validate(&self) -> Result<(), CostError> {
        for name in Self::NAMES {
            let v = self.get(name).expect("listed name");
            let min = if name.ends_with("_bytes") && name != "memory_limit_bytes" {
                1.0
            } else {
                0.0
            };
            if v.is_nan() || v < min {
                return Err(CostError::InvalidParam {
                    name: name.to_string(),
                    message: format!("must be at least {min}, got {v}"),
                });
            }
        }
        Ok(())
    }

    /// Parses `name = value` lines over the defaults. `#` starts a comment.
    pub fn parse_config(text: &str) -> Result<Self, CostError> {
        let mut params = Self::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CostError::InvalidParam {
                name: line.to_string(),
                message: "expected name = value".into(),
            })?;
            let k = k.trim();
            let value: f64 = v.trim().parse().map_err(|_| CostError::InvalidParam {
                name: k.to_string(),
                message: format!("malformed number `{}`", v.trim()),
            })?;
            params.set(k, value)?;
        }
        Ok(params)
    }

    pub fn to_config(&self) -> String {
        let mut s = String::new();
        for name in Self::NAMES {
            let _ = writeln!(s, "{name} = {}", self.get(name).expect("listed name"));
        }
        s
    }

    /// Bytes of one tuple: a key per promoted axis plus the dense block.
    pub fn tuple_bytes(&self, bound: &BoundVector, promoted: AxisSet) -> f64 {
        let demoted = promoted.complement(bound.rank());
        self.key_bytes * promoted.len() as f64
            + self.element_bytes * bound.volume_of(demoted) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub t_join: f64,
    pub c_join: f64,
    pub t_agg: f64,
    pub c_agg: f64,
    pub c_repart_left: f64,
    pub c_repart_right: f64,
    pub total: f64,
}

impl CostBreakdown {
    pub fn with_repart(mut self, left: f64, right: f64) -> Self {
        self.c_repart_left = left;
        self.c_repart_right = right;
        self.total = self.c_join + self.c_agg + left + right;
        self
    }
}

/// A node together with its input bounds and statistics.
#[derive(Debug, Clone)]
pub struct NodeView<'a> {
    pub node: &'a EinsumNode,
    pub in_bounds: Vec<&'a BoundVector>,
    pub in_stats: Vec<&'a TensorStats>,
}

impl<'a> NodeView<'a> {
    pub fn new(p: &'a EinsumProgram, stats: &'a ProgramStats, node: &'a EinsumNode) -> Self {
        Self {
            node,
            in_bounds: p.input_bounds(node),
            in_stats: node
                .slots()
                .iter()
                .map(|&s| stats.get(p.producer(node.vertex, s)))
                .collect(),
        }
    }

    /// Per input: (promoted?, distinct count) for `label`, if present.
    fn sides(&self, label: &Label, ins: &[AxisSet]) -> Vec<(bool, f64)> {
        self.node
            .inputs
            .iter()
            .zip(&self.in_stats)
            .zip(ins)
            .filter_map(|((u, s), mask)| {
                u.labels
                    .position(label)
                    .map(|a| (mask.contains(a), s.distinct[a]))
            })
            .collect()
    }

    /// Distinct count of a promoted label: the smaller one if promoted on
    /// both sides, else the side that promotes it. `None` if not promoted.
    fn promoted_distinct(&self, label: &Label, ins: &[AxisSet]) -> Option<f64> {
        self.sides(label, ins)
            .into_iter()
            .filter(|(up, _)| *up)
            .map(|(_, d)| d)
            .reduce(f64::min)
    }

    fn output_mask_bytes(&self, out: AxisSet, params: &CostParams) -> f64 {
        params.tuple_bytes(&self.node.output.bound, out)
    }

    /// Bound of every distinct label across the inputs.
    fn label_bounds(&self) -> Vec<(Label, usize)> {
        self.node
            .all_labels()
            .into_iter()
            .map(|l| {
                let b = self.node.label_bound(&l, &self.in_bounds).expect("input label");
                (l, b)
            })
            .collect()
    }
}

/// `T(↑U)·T(↑V) / ∏ max(V(U,l), V(V,l))` with the product taken over labels
/// promoted on both sides.
pub fn join_cardinality(view: &NodeView<'_>, ins: &[AxisSet]) -> f64 {
    let tuples: Vec<f64> = view
        .in_stats
        .iter()
        .zip(ins)
        .map(|(s, &m)| s.estimate_tuples(m))
        .collect();
    if !view.node.is_binary() {
        return tuples[0];
    }
    let divisors: Vec<f64> = view
        .node
        .shared_labels()
        .iter()
        .filter_map(|l| {
            let sides = view.sides(l, ins);
            sides
                .iter()
                .all(|(up, _)| *up)
                .then(|| sides.iter().map(|(_, d)| *d).fold(0.0, f64::max))
        })
        .collect();
    join_cardinality_from(tuples[0], tuples[1], &divisors)
}

/// The join estimator on explicit tuple counts and per-label divisors.
pub fn join_cardinality_from(t_u: f64, t_v: f64, divisors: &[f64]) -> f64 {
    let num = t_u * t_v;
    if num == 0.0 {
        return 0.0;
    }
    divisors.iter().fold(num, |acc, &d| if d > 0.0 { acc / d } else { 0.0 })
}

/// Aggregation group count. With promoted aggregated labels this is
/// `min(T_join / 2, ∏ distinct)` over those labels; without any, the
/// grouping is by the promoted output labels and the halving is dropped.
pub fn agg_cardinality(view: &NodeView<'_>, ins: &[AxisSet], t_join: f64) -> f64 {
    if t_join <= 0.0 {
        return 0.0;
    }
    let agg = view.node.agg_labels();
    let up_agg: Vec<f64> = agg
        .iter()
        .filter_map(|l| view.promoted_distinct(l, ins))
        .collect();
    if !up_agg.is_empty() {
        return (t_join / 2.0).min(up_agg.iter().product());
    }
    let groups: f64 = view
        .node
        .output_labels
        .iter()
        .filter_map(|l| view.promoted_distinct(l, ins))
        .product();
    t_join.min(groups)
}

/// Bytes held by one kernel call: both input tuples and the output tuple.
pub fn kernel_bytes(view: &NodeView<'_>, ins: &[AxisSet], out: AxisSet, params: &CostParams) -> f64 {
    let inputs: f64 = view
        .in_bounds
        .iter()
        .zip(ins)
        .map(|(b, &m)| params.tuple_bytes(b, m))
        .sum();
    inputs + view.output_mask_bytes(out, params)
}

/// Dense flop count of the demoted-label kernel.
pub fn kernel_flops(view: &NodeView<'_>, ins: &[AxisSet]) -> f64 {
    2.0 * view
        .label_bounds()
        .into_iter()
        .filter(|(l, _)| view.sides(l, ins).iter().any(|(up, _)| !up))
        .map(|(_, b)| b as f64)
        .product::<f64>()
}

pub fn join_cost(
    view: &NodeView<'_>,
    ins: &[AxisSet],
    out: AxisSet,
    t_join: f64,
    params: &CostParams,
) -> Result<f64, CostError> {
    let needed = kernel_bytes(view, ins, out, params);
    if needed > params.memory_limit_bytes {
        return Err(CostError::Memory {
            needed,
            limit: params.memory_limit_bytes,
        });
    }
    let moved: f64 = view
        .in_bounds
        .iter()
        .zip(ins)
        .map(|(b, &m)| params.tuple_bytes(b, m))
        .sum();
    let kernel = params.c_kernel_flop * kernel_flops(view, ins);
    Ok(t_join * (moved * params.c_xfer + kernel + params.c_fixed))
}

pub fn agg_cost(
    view: &NodeView<'_>,
    out: AxisSet,
    t_join: f64,
    t_agg: f64,
    params: &CostParams,
) -> f64 {
    let bound = &view.node.output.bound;
    let block = bound.volume_of(out.complement(bound.rank())) as f64;
    let per = view.output_mask_bytes(out, params) * params.c_xfer
        + params.c_add * block
        + params.c_fixed;
    (t_join - t_agg).max(0.0) * per
}

/// `(2T(in ∪ out) - T(in) - T(out))` tuples of the intermediate layout,
/// each moved once. Zero when the layouts agree.
pub fn repart_cost(
    bound: &BoundVector,
    stats: &TensorStats,
    from: AxisSet,
    to: AxisSet,
    params: &CostParams,
) -> f64 {
    repart_cost_with(bound, from, to, params, |m| stats.estimate_tuples(m))
}

fn repart_cost_with(
    bound: &BoundVector,
    from: AxisSet,
    to: AxisSet,
    params: &CostParams,
    tuples: impl Fn(AxisSet) -> f64,
) -> f64 {
    if from == to {
        return 0.0;
    }
    let union = from.union(to);
    let moved = (2.0 * tuples(union) - tuples(from) - tuples(to)).max(0.0);
    moved * (params.tuple_bytes(bound, union) * params.c_xfer + params.c_fixed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Noise {
    shape: f64,
    scale: f64,
    seed: u64,
}

/// Cost formulas bound to parameters, optionally with every cardinality
/// estimate multiplied by a seeded Gamma variate.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub params: CostParams,
    noise: Option<Noise>,
}

const KIND_JOIN: u64 = 1;
const KIND_AGG: u64 = 2;
const KIND_TUPLES: u64 = 3;

fn mix(mut h: u64, x: u64) -> u64 {
    h ^= x.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

impl CostModel {
    pub fn new(params: CostParams) -> Self {
        Self {
            params,
            noise: None,
        }
    }

    /// Mean-preserving Gamma(shape, scale) noise on every estimate.
    pub fn with_gamma(params: CostParams, shape: f64, scale: f64, seed: u64) -> Result<Self, CostError> {
        if !(shape > 0.0 && scale > 0.0) || (shape * scale - 1.0).abs() > 1e-9 {
            return Err(CostError::InvalidGamma {
                alpha: shape,
                theta: scale,
            });
        }
        Ok(Self {
            params,
            noise: Some(Noise { shape, scale, seed }),
        })
    }

    pub fn is_perturbed(&self) -> bool {
        self.noise.is_some()
    }

    /// The same parameters without noise.
    pub fn unperturbed(&self) -> Self {
        Self::new(self.params)
    }

    /// Noise factor for one estimate, fixed by what the estimate is about
    /// so evaluation order does not matter.
    fn factor(&self, kind: u64, vertex: VertexId, masks: &[AxisSet]) -> f64 {
        let Some(n) = self.noise else { return 1.0 };
        let mut h = mix(n.seed, kind);
        h = mix(h, vertex.0 as u64);
        for m in masks {
            h = mix(h, u64::from(m.bits()) + 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        Gamma::new(n.shape, n.scale)
            .expect("validated parameters")
            .sample(&mut rng)
    }

    /// Join and aggregation cost of one node (no repartition terms).
    pub fn node_cost(
        &self,
        view: &NodeView<'_>,
        ins: &[AxisSet],
        out: AxisSet,
    ) -> Result<CostBreakdown, CostError> {
        let v = view.node.vertex;
        let t_join = join_cardinality(view, ins) * self.factor(KIND_JOIN, v, ins);
        let c_join = join_cost(view, ins, out, t_join, &self.params)?;
        let mut masks = ins.to_vec();
        masks.push(out);
        let t_agg = (agg_cardinality(view, ins, t_join) * self.factor(KIND_AGG, v, &masks))
            .min(t_join);
        let c_agg = agg_cost(view, out, t_join, t_agg, &self.params);
        Ok(CostBreakdown {
            t_join,
            c_join,
            t_agg,
            c_agg,
            c_repart_left: 0.0,
            c_repart_right: 0.0,
            total: c_join + c_agg,
        })
    }

    /// Cost of moving tensor `v` from layout `from` to `to`.
    pub fn repart(
        &self,
        p: &EinsumProgram,
        stats: &ProgramStats,
        v: VertexId,
        from: AxisSet,
        to: AxisSet,
    ) -> f64 {
        let s = stats.get(v);
        repart_cost_with(&p.decl(v).bound, from, to, &self.params, |m| {
            s.estimate_tuples(m) * self.factor(KIND_TUPLES, v, &[m])
        })
    }
}

/// Constants from micro-measurements, normalized so `c_xfer = 1`.
///
/// Byte cost from a large memory copy, flop cost from a dense dot product,
/// fixed cost from building and grouping a cross product of keyed tuples.
pub fn calibrate() -> CostParams {
    use std::collections::HashMap;
    use std::hint::black_box;

    let n = 1 << 22;
    let src = vec![1u8; n];
    let t = Instant::now();
    let mut dst = vec![0u8; n];
    for _ in 0..8 {
        dst.copy_from_slice(black_box(&src));
    }
    black_box(&dst);
    let per_byte = t.elapsed().as_secs_f64() / (8 * n) as f64;

    let a: Vec<f64> = (0..n / 8).map(|i| i as f64 * 1e-6).collect();
    let t = Instant::now();
    let mut acc = 0.0;
    for _ in 0..8 {
        acc += black_box(&a).iter().map(|x| x * 1.000_001).sum::<f64>();
    }
    black_box(acc);
    let per_flop = t.elapsed().as_secs_f64() / (16 * a.len()) as f64;

    let side = 600usize;
    let t = Instant::now();
    let mut groups: HashMap<usize, f64> = HashMap::new();
    for i in 0..side {
        for j in 0..side {
            *groups.entry(black_box((i * 7 + j) % 1024)).or_default() += 1.0;
        }
    }
    black_box(&groups);
    let per_tuple = t.elapsed().as_secs_f64() / (side * side) as f64;

    let base = per_byte.max(1e-15);
    CostParams {
        c_xfer: 1.0,
        c_fixed: per_tuple / base,
        c_kernel_flop: per_flop / base,
        c_add: per_flop / base,
        ..CostParams::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::ir::parse_program;
    use crate::stats::{propagate_stats, SparseTensor};
    use std::collections::BTreeMap;

    fn matmul() -> (EinsumProgram, ProgramStats) {
        let p = fixtures::matmul_program();
        let (u, v) = fixtures::matmul_inputs();
        let src: BTreeMap<_, _> = [u, v]
            .iter()
            .map(|t: &SparseTensor| (t.decl.name.clone(), TensorStats::exact(t)))
            .collect();
        let s = propagate_stats(&p, &src).unwrap();
        (p, s)
    }

    fn ax(axes: &[usize]) -> AxisSet {
        AxisSet::from_axes(axes.iter().copied())
    }

    #[test]
    fn join_cardinality_examples() {
        assert_eq!(join_cardinality_from(2.0, 2.0, &[]), 4.0);
        assert_eq!(join_cardinality_from(4.0, 4.0, &[4.0]), 4.0);
        assert_eq!(join_cardinality_from(0.0, 5.0, &[]), 0.0);

        let (p, s) = matmul();
        let view = NodeView::new(&p, &s, &p.nodes()[0]);
        let tu = s[VertexId(0)].estimate_tuples(ax(&[0]));
        let tv = s[VertexId(1)].estimate_tuples(ax(&[1]));
        assert_eq!(join_cardinality(&view, &[ax(&[0]), ax(&[1])]), tu * tv);
        let tu = s[VertexId(0)].estimate_tuples(ax(&[1]));
        let tv = s[VertexId(1)].estimate_tuples(ax(&[0]));
        let j = join_cardinality(&view, &[ax(&[1]), ax(&[0])]);
        assert!((j - tu * tv / 4.0).abs() < 1e-12);
        assert_eq!(
            join_cardinality(&view, &[ax(&[]), ax(&[])]),
            1.0 * (1.0 - (-5.0f64).exp()) * (1.0 - (-6.0f64).exp())
        );
    }

    #[test]
    fn join_cost_shapes() {
        let (p, s) = matmul();
        let view = NodeView::new(&p, &s, &p.nodes()[0]);
        let params = CostParams::default();
        let full = [ax(&[0, 1]), ax(&[0, 1])];
        assert_eq!(kernel_flops(&view, &full), 2.0);
        let c = join_cost(&view, &full, ax(&[0, 1]), 3.0, &params).unwrap();
        let per = 2.0 * (2.0 * params.key_bytes + params.element_bytes) * params.c_xfer
            + 2.0 * params.c_kernel_flop
            + params.c_fixed;
        assert!((c - 3.0 * per).abs() < 1e-9);

        let none = [AxisSet::EMPTY, AxisSet::EMPTY];
        assert_eq!(kernel_flops(&view, &none), 2.0 * 64.0);

        let tight = CostParams {
            memory_limit_bytes: 100.0,
            ..params
        };
        assert!(matches!(
            join_cost(&view, &none, AxisSet::EMPTY, 1.0, &tight),
            Err(CostError::Memory { .. })
        ));
    }

    #[test]
    fn agg_cardinality_examples() {
        let (p, s) = matmul();
        let view = NodeView::new(&p, &s, &p.nodes()[0]);
        // j promoted on both sides, output keyless.
        let ins = [ax(&[1]), ax(&[0])];
        assert_eq!(agg_cardinality(&view, &ins, 4.0), 2.0);
        assert_eq!(agg_cardinality(&view, &ins, 0.0), 0.0);
        // nothing aggregated relationally: grouping by i and k.
        let ins = [ax(&[0]), ax(&[1])];
        assert_eq!(agg_cardinality(&view, &ins, 4.0), 4.0);
        assert_eq!(agg_cardinality(&view, &ins, 3.0), 3.0);
    }

    #[test]
    fn agg_cost_examples() {
        let (p, s) = matmul();
        let view = NodeView::new(&p, &s, &p.nodes()[0]);
        let params = CostParams::default();
        assert_eq!(agg_cost(&view, ax(&[0, 1]), 4.0, 4.0, &params), 0.0);
        let c = agg_cost(&view, ax(&[0, 1]), 4.0, 2.0, &params);
        let scalar = params.element_bytes + 2.0 * params.key_bytes;
        assert!((c - 2.0 * (scalar * params.c_xfer + params.c_add + params.c_fixed)).abs() < 1e-9);
    }

    #[test]
    fn repart_cost_examples() {
        let (p, s) = matmul();
        let u = &s[VertexId(0)];
        let b = &p.decl(VertexId(0)).bound;
        let params = CostParams::default();
        assert_eq!(repart_cost(b, u, ax(&[0]), ax(&[0]), &params), 0.0);
        let up = repart_cost(b, u, AxisSet::EMPTY, ax(&[0]), &params);
        let want = (u.estimate_tuples(ax(&[0])) - u.estimate_tuples(AxisSet::EMPTY))
            * (params.tuple_bytes(b, ax(&[0])) * params.c_xfer + params.c_fixed);
        assert!((up - want).abs() < 1e-9);
        let both = repart_cost(b, u, ax(&[1]), ax(&[0]), &params);
        let t = |m: &[usize]| u.estimate_tuples(ax(m));
        let want = (2.0 * t(&[0, 1]) - t(&[0]) - t(&[1]))
            * (params.tuple_bytes(b, ax(&[0, 1])) * params.c_xfer + params.c_fixed);
        assert!((both - want).abs() < 1e-9);
    }

    #[test]
    fn config_round_trip() {
        let p = CostParams::parse_config("c_xfer = 2\n# note\nmemory_limit_bytes=inf\n").unwrap();
        assert_eq!(p.c_xfer, 2.0);
        assert!(p.memory_limit_bytes.is_infinite());
        assert_eq!(CostParams::parse_config(&p.to_config()).unwrap(), p);
        assert!(CostParams::parse_config("bogus = 1").is_err());
        assert!(CostParams::parse_config("key_bytes = 0").is_err());
        assert!(CostParams::parse_config("c_add = -1").is_err());
    }

    #[test]
    fn gamma_validation_and_determinism() {
        let params = CostParams::default();
        assert!(CostModel::with_gamma(params, 2.0, 2.0, 1).is_err());
        assert!(CostModel::with_gamma(params, 0.0, 1.0, 1).is_err());
        let m = CostModel::with_gamma(params, 2.0, 0.5, 9).unwrap();
        let a = m.factor(KIND_JOIN, VertexId(3), &[ax(&[0])]);
        let b = m.factor(KIND_JOIN, VertexId(3), &[ax(&[0])]);
        assert_eq!(a, b);
        assert_ne!(a, m.factor(KIND_JOIN, VertexId(3), &[ax(&[1])]));
        assert_eq!(CostModel::new(params).factor(KIND_JOIN, VertexId(0), &[]), 1.0);
    }

    #[test]
    fn unary_node_costs() {
        let p = parse_program("tensor A[4,3]; B[i] = sum[j] A[i,j]").unwrap();
        let src = BTreeMap::from([(
            "A".to_string(),
            TensorStats {
                nnz: 6.0,
                distinct: vec![3.0, 3.0],
            },
        )]);
        let s = propagate_stats(&p, &src).unwrap();
        let view = NodeView::new(&p, &s, &p.nodes()[0]);
        let m = CostModel::new(CostParams::default());
        let c = m.node_cost(&view, &[ax(&[0, 1])], ax(&[0])).unwrap();
        assert!(c.t_agg <= c.t_join);
        assert!(c.total > 0.0);
        assert_eq!(c.total, c.c_join + c.c_agg);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn stats2() -> impl Strategy<Value = TensorStats> {
            (1.0f64..50.0, 1.0f64..8.0, 1.0f64..8.0).prop_map(|(nnz, a, b)| TensorStats {
                nnz,
                distinct: vec![a, b],
            })
        }

        fn random_view_setup() -> impl Strategy<Value = (TensorStats, TensorStats, u8, u8, u8)> {
            (stats2(), stats2(), 0u8..4, 0u8..4, 0u8..4)
        }

        proptest! {
            #[test]
            fn costs_nonnegative_and_symmetric((su, sv, mu, mv, mw) in random_view_setup()) {
                let p = parse_program(
                    "tensor U[8,8]; tensor V[8,8]; W[i,k] = sum[j] U[i,j] * V[j,k]
                     X[k,i] = sum[j] V[j,k] * U[i,j]",
                ).unwrap();
                let mut all = vec![su.clone(), sv.clone()];
                all.push(TensorStats { nnz: 10.0, distinct: vec![4.0, 4.0] });
                all.push(TensorStats { nnz: 10.0, distinct: vec![4.0, 4.0] });
                let s = ProgramStats(all);
                let view = NodeView::new(&p, &s, &p.nodes()[0]);
                let flipped = NodeView::new(&p, &s, &p.nodes()[1]);
                let (mu, mv) = (AxisSet::from_bits(mu as u32), AxisSet::from_bits(mv as u32));
                let ins = [mu, mv];
                let tj = join_cardinality(&view, &ins);
                prop_assert!(tj >= 0.0);
                let tj2 = join_cardinality(&flipped, &[mv, mu]);
                prop_assert!((tj - tj2).abs() <= 1e-12 * tj.max(1.0));
                let ta = agg_cardinality(&view, &ins, tj);
                prop_assert!(ta <= tj && ta >= 0.0);
                let params = CostParams::default();
                let out = AxisSet::from_bits(mw as u32);
                prop_assert!(join_cost(&view, &ins, out, tj, &params).unwrap() >= 0.0);
                prop_assert!(agg_cost(&view, out, tj, ta, &params) >= 0.0);
                let b = BoundVector::new(vec![8, 8]);
                prop_assert!(repart_cost(&b, &su, mu, mv, &params) >= 0.0);
                prop_assert_eq!(repart_cost(&b, &su, mu, mu, &params), 0.0);
                let union = mu.union(mv);
                let tu = su.estimate_tuples(union);
                prop_assert!(tu >= su.estimate_tuples(mu) - 1e-12);
                prop_assert!(tu >= su.estimate_tuples(mv) - 1e-12);
            }

            #[test]
            fn scaling_scales_totals((su, sv, mu, mv, mw) in random_view_setup(), k in 0.1f64..20.0) {
                let p = parse_program("tensor U[8,8]; tensor V[8,8]; W[i,k] = sum[j] U[i,j] * V[j,k]").unwrap();
                let s = ProgramStats(vec![su, sv, TensorStats { nnz: 10.0, distinct: vec![4.0, 4.0] }]);
                let view = NodeView::new(&p, &s, &p.nodes()[0]);
                let ins = [AxisSet::from_bits(mu as u32), AxisSet::from_bits(mv as u32)];
                let out = AxisSet::from_bits(mw as u32);
                let base = CostModel::new(CostParams::default()).node_cost(&view, &ins, out).unwrap();
                let scaled = CostModel::new(CostParams::default().scaled(k)).node_cost(&view, &ins, out).unwrap();
                prop_assert!((scaled.total - k * base.total).abs() <= 1e-9 * scaled.total.max(1.0));
            }
        }
    }
}
