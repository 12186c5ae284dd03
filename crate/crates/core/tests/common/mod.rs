#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tenrel_core::cost::{CostModel, CostParams, NodeView};
use tenrel_core::fixtures;
use tenrel_core::ir::{AxisSet, EinsumProgram, VertexId};
use tenrel_core::optimizer::{
    optimize_greedy, optimize_program, plan_from_layouts, Plan, SearchOptions,
};
use tenrel_core::stats::{propagate_stats, ProgramStats, SparseTensor, TensorStats};

pub fn stats_of(p: &EinsumProgram, inputs: &BTreeMap<String, SparseTensor>) -> ProgramStats {
    let src = inputs
        .iter()
        .map(|(n, t)| (n.clone(), TensorStats::exact(t)))
        .collect();
    propagate_stats(p, &src).unwrap()
}

/// Optimized plans under two parameter sets, the greedy plan, and `extra`
/// random consistent plans.
pub fn plan_zoo(p: &EinsumProgram, stats: &ProgramStats, extra: usize, seed: u64) -> Vec<Plan> {
    let opts = SearchOptions::default();
    let base = CostModel::new(CostParams::default());
    let mut cheap = CostParams::default();
    cheap.c_fixed = 1.0;
    let cheap = CostModel::new(cheap);
    let mut out = vec![
        optimize_program(p, stats, &base, opts).unwrap(),
        optimize_program(p, stats, &cheap, opts).unwrap(),
        optimize_greedy(p, stats, &cheap, opts).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..extra {
        let (layouts, ins) = fixtures::random_layouts(p, &mut rng);
        out.push(plan_from_layouts(p, stats, &base, &layouts, &ins).unwrap());
    }
    out
}

pub fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .map(|(g, w)| {
            if g == w {
                0.0
            } else {
                (g - w).abs() / w.abs().max(g.abs()).max(f64::MIN_POSITIVE)
            }
        })
        .fold(0.0, f64::max)
}

/// Tokens compared case-insensitively, comments dropped, kernel function
/// names replaced by a placeholder.
pub fn normalize(sql: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in sql.lines() {
        let line = line.split("--").next().unwrap_or("");
        let mut cur = String::new();
        let flush = |cur: &mut String, out: &mut Vec<String>| {
            if !cur.is_empty() {
                let t = cur.to_ascii_lowercase();
                let kernel = ["outer_prod", "inner_prod", "dot_product"].contains(&t.as_str())
                    || (t.starts_with("k_")
                        && t.rsplit('_').next().is_some_and(|h| {
                            h.len() == 8 && h.chars().all(|c| c.is_ascii_hexdigit())
                        }));
                out.push(if kernel { "<kernel>".into() } else { t });
                cur.clear();
            }
        };
        for c in line.chars() {
            if c.is_ascii_alphanumeric() || c == '_' {
                cur.push(c);
            } else {
                flush(&mut cur, &mut out);
                if !c.is_whitespace() {
                    out.push(c.to_string());
                }
            }
        }
        flush(&mut cur, &mut out);
    }
    out
}

pub fn golden(name: &str) -> String {
    std::fs::read_to_string(format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}


/// Every consistent (output, inputs) choice of each node with its node cost.
fn node_choices(p: &EinsumProgram, stats: &ProgramStats, model: &CostModel) -> Vec<Vec<(AxisSet, Vec<AxisSet>, f64)>> {
    p.nodes()
        .iter()
        .map(|node| {
            let labels = node.all_labels();
            let view = NodeView::new(p, stats, node);
            (0..1u32 << labels.len())
                .map(|bits| {
                    let chosen: Vec<_> = labels
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| bits & (1 << i) != 0)
                        .map(|(_, l)| l)
                        .collect();
                    let out = node.output_labels.mask_of(chosen.iter().copied());
                    let ins: Vec<AxisSet> = node
                        .inputs
                        .iter()
                        .map(|u| u.labels.mask_of(chosen.iter().copied()))
                        .collect();
                    let cost = model.node_cost(&view, &ins, out).map_or(f64::INFINITY, |c| c.total);
                    (out, ins, cost)
                })
                .collect()
        })
        .collect()
}

/// Minimum total cost over every decomposition of every tensor, priced the
/// way plans are: node costs plus a repartition wherever a reader's layout
/// differs from the stored one. Sources may be stored in any layout.
pub fn exhaustive_min(p: &EinsumProgram, stats: &ProgramStats, model: &CostModel) -> f64 {
    let choices = node_choices(p, stats, model);
    let shared: Vec<VertexId> = (0..p.sources().len())
        .map(VertexId)
        .filter(|&v| p.consumers(v).len() > 1)
        .collect();
    let mut layouts = vec![AxisSet::EMPTY; p.vertex_count()];
    let mut best = f64::INFINITY;
    source_layouts(p, stats, model, &choices, &shared, &mut layouts, &mut best);
    best
}

fn source_layouts(
    p: &EinsumProgram,
    stats: &ProgramStats,
    model: &CostModel,
    choices: &[Vec<(AxisSet, Vec<AxisSet>, f64)>],
    shared: &[VertexId],
    layouts: &mut Vec<AxisSet>,
    best: &mut f64,
) {
    match shared.split_first() {
        Some((&v, rest)) => {
            for m in AxisSet::all_subsets(p.decl(v).rank()) {
                layouts[v.0] = m;
                source_layouts(p, stats, model, choices, rest, layouts, best);
            }
        }
        None => {
            let c = walk(p, stats, model, choices, 0, 0.0, layouts);
            *best = best.min(c);
        }
    }
}

fn walk(
    p: &EinsumProgram,
    stats: &ProgramStats,
    model: &CostModel,
    choices: &[Vec<(AxisSet, Vec<AxisSet>, f64)>],
    k: usize,
    acc: f64,
    layouts: &mut Vec<AxisSet>,
) -> f64 {
    let Some(options) = choices.get(k) else { return acc };
    let node = &p.nodes()[k];
    let mut best = f64::INFINITY;
    for (out, ins, cost) in options {
        let mut c = acc + cost;
        for (slot, &m) in node.slots().iter().zip(ins) {
            let prod = p.producer(node.vertex, *slot);
            if !p.is_source(prod) || p.consumers(prod).len() > 1 {
                c += model.repart(p, stats, prod, layouts[prod.0], m);
            }
        }
        layouts[node.vertex.0] = *out;
        best = best.min(walk(p, stats, model, choices, k + 1, c, layouts));
    }
    best
}

pub fn rel_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}
