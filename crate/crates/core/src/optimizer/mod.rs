//! Decomposition search: the per-tree dynamic program, a greedy baseline,
//! top-k enumeration and perturbation harnesses.

mod dp;
mod greedy;
mod perturb;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostBreakdown, CostError, CostModel, NodeView};
use crate::ir::{render_uclc, AxisSet, EinsumNode, EinsumProgram, LabelList, VertexId};
use crate::stats::ProgramStats;

pub use dp::{optimize_program, optimize_top_k, optimize_tree, CostTable, MAX_TOP_K};
pub use greedy::optimize_greedy;
pub use perturb::{perturb_costs, Perturbation, PerturbedPlan};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no decomposition of `{0}` fits the memory limit")]
    Infeasible(String),
    #[error("invalid plan: {0}")]
    Invalid(String),
    #[error("top-k must be between 1 and {max}, got {k}")]
    TopK { k: usize, max: usize },
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Search options shared by every strategy.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SearchOptions {
    /// Use upper-case annotations as fixed decompositions instead of hints.
    pub respect_annotations: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPlan {
    pub producer: VertexId,
    pub tensor: String,
    /// Layout the node reads.
    pub promoted: AxisSet,
    /// Layout the producer stores; a repartition runs when it differs.
    pub source_layout: AxisSet,
}

impl InputPlan {
    pub fn needs_repartition(&self) -> bool {
        self.promoted != self.source_layout
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePlan {
    pub vertex: VertexId,
    pub output_name: String,
    pub output: AxisSet,
    pub inputs: Vec<InputPlan>,
    pub cost: CostBreakdown,
}

impl NodePlan {
    pub fn input_masks(&self) -> Vec<AxisSet> {
        self.inputs.iter().map(|i| i.promoted).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    /// Stored layout of every vertex, indexed by vertex id.
    pub layouts: Vec<AxisSet>,
    /// One entry per node, in program order.
    pub nodes: Vec<NodePlan>,
    pub total: f64,
}

impl Plan {
    pub fn node(&self, v: VertexId) -> Option<&NodePlan> {
        self.nodes.iter().find(|n| n.vertex == v)
    }

    pub fn layout(&self, v: VertexId) -> AxisSet {
        self.layouts[v.0]
    }

    /// The decomposition choices, without costs.
    pub fn assignment(&self) -> Vec<(VertexId, AxisSet, Vec<AxisSet>)> {
        self.nodes
            .iter()
            .map(|n| (n.vertex, n.output, n.input_masks()))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        serde_json::from_str(text).map_err(|e| PlanError::Invalid(e.to_string()))
    }

    /// Human-readable report: one upper-case-lower-case statement per node
    /// with its cost breakdown.
    pub fn report(&self, p: &EinsumProgram) -> String {
        let mut s = String::new();
        for np in &self.nodes {
            let node = p.node(np.vertex).expect("plan node");
            let c = &np.cost;
            let _ = writeln!(s, "{}", render_uclc(node, np.output, &np.input_masks()));
            for (i, u) in np.inputs.iter().zip(&node.inputs) {
                if !i.needs_repartition() {
                    continue;
                }
                let labels = &u.labels;
                let _ = writeln!(
                    s,
                    "  repartition {}: {} -> {}",
                    i.tensor,
                    mask_names(labels, i.source_layout),
                    mask_names(labels, i.promoted)
                );
            }
            let _ = writeln!(
                s,
                "  t_join={:.3} c_join={:.3} t_agg={:.3} c_agg={:.3} c_repart={:.3}/{:.3} total={:.3}",
                c.t_join, c.c_join, c.t_agg, c.c_agg, c.c_repart_left, c.c_repart_right, c.total
            );
        }
        let _ = writeln!(s, "total cost {:.3}", self.total);
        s
    }
}

fn mask_names(labels: &LabelList, mask: AxisSet) -> String {
    let names: Vec<String> = labels.select(mask).iter().map(|l| l.upper()).collect();
    format!("{{{}}}", names.join(","))
}

/// `true` iff every label shared by the two lists has the same promotion
/// status on both sides (and repeated labels agree within each list).
pub fn is_consistent(up_u: AxisSet, up_w: AxisSet, l_u: &LabelList, l_w: &LabelList) -> bool {
    agree(up_u, l_u, up_w, l_w) && agree(up_u, l_u, up_u, l_u) && agree(up_w, l_w, up_w, l_w)
}

fn agree(a: AxisSet, la: &LabelList, b: AxisSet, lb: &LabelList) -> bool {
    la.iter().enumerate().all(|(i, l)| {
        lb.iter()
            .enumerate()
            .all(|(j, m)| l != m || a.contains(i) == b.contains(j))
    })
}

/// Whether output and input layouts form a valid decomposition of the node:
/// each pair of lists consistent, including the two inputs with each other.
pub fn node_consistent(node: &EinsumNode, out: AxisSet, ins: &[AxisSet]) -> bool {
    if ins.len() != node.inputs.len()
        || !out.fits_rank(node.output_labels.len())
        || ins
            .iter()
            .zip(&node.inputs)
            .any(|(m, u)| !m.fits_rank(u.labels.len()))
    {
        return false;
    }
    let lists: Vec<(AxisSet, &LabelList)> = std::iter::once((out, &node.output_labels))
        .chain(ins.iter().copied().zip(node.inputs.iter().map(|u| &u.labels)))
        .collect();
    lists.iter().enumerate().all(|(i, (a, la))| {
        lists[i..]
            .iter()
            .all(|(b, lb)| is_consistent(*a, *b, la, lb))
    })
}

/// Masks of a label list ordered by promoted count, then by the sorted
/// names of the promoted labels.
pub(crate) fn canonical_masks(labels: &LabelList) -> Vec<AxisSet> {
    let mut masks: Vec<AxisSet> = AxisSet::all_subsets(labels.len()).collect();
    masks.sort_by_cached_key(|m| {
        let mut names: Vec<String> = labels.select(*m).iter().map(|l| l.to_string()).collect();
        names.sort();
        (m.len(), names)
    });
    masks
}

/// `new` beats `best` by more than a relative hair.
pub(crate) fn improves(new: f64, best: f64) -> bool {
    if best.is_infinite() {
        return new.is_finite();
    }
    new < best - 1e-12 * best.abs()
}

/// Checks a plan's shape against the program: layouts in range, every node
/// decomposition consistent, and each input's source layout equal to the
/// producer's stored layout.
pub fn validate_plan(p: &EinsumProgram, plan: &Plan) -> Result<(), PlanError> {
    let invalid = |m: String| Err(PlanError::Invalid(m));
    if plan.layouts.len() != p.vertex_count() {
        return invalid(format!(
            "{} layouts for {} tensors",
            plan.layouts.len(),
            p.vertex_count()
        ));
    }
    for v in 0..p.vertex_count() {
        let v = VertexId(v);
        if !plan.layouts[v.0].fits_rank(p.decl(v).rank()) {
            return invalid(format!("layout of `{}` exceeds its rank", p.name(v)));
        }
    }
    if plan.nodes.len() != p.nodes().len() {
        return invalid("plan does not cover every node".into());
    }
    for (np, node) in plan.nodes.iter().zip(p.nodes()) {
        if np.vertex != node.vertex {
            return invalid(format!("node order differs at `{}`", node.output.name));
        }
        if np.output != plan.layouts[node.vertex.0] {
            return invalid(format!("`{}` output differs from its layout", node.output.name));
        }
        if !node_consistent(node, np.output, &np.input_masks()) {
            return invalid(format!("inconsistent decomposition at `{}`", node.output.name));
        }
        for (k, (ip, &slot)) in np.inputs.iter().zip(node.slots()).enumerate() {
            let producer = p.producer(node.vertex, slot);
            if ip.producer != producer || ip.tensor != node.inputs[k].tensor {
                return invalid(format!("input {k} of `{}` has the wrong producer", node.output.name));
            }
            if ip.source_layout != plan.layouts[producer.0] {
                return invalid(format!(
                    "input `{}` of `{}` does not read the stored layout",
                    ip.tensor, node.output.name
                ));
            }
        }
    }
    Ok(())
}

/// Recomputes every cost of `plan` under `model`.
pub fn evaluate_plan(
    p: &EinsumProgram,
    stats: &ProgramStats,
    model: &CostModel,
    plan: &Plan,
) -> Result<Plan, PlanError> {
    validate_plan(p, plan)?;
    let mut out = plan.clone();
    let mut total = 0.0;
    for np in &mut out.nodes {
        let node = p.node(np.vertex).expect("validated");
        let view = NodeView::new(p, stats, node);
        let base = model.node_cost(&view, &np.input_masks(), np.output)?;
        let reparts: Vec<f64> = np
            .inputs
            .iter()
            .map(|i| model.repart(p, stats, i.producer, i.source_layout, i.promoted))
            .collect();
        np.cost = base.with_repart(reparts[0], reparts.get(1).copied().unwrap_or(0.0));
        total += np.cost.total;
    }
    out.total = total;
    Ok(out)
}

/// Plan from explicit per-node layouts: sources take the layout their first
/// reader wants unless given; costs are evaluated under `model`.
pub fn plan_from_layouts(
    p: &EinsumProgram,
    stats: &ProgramStats,
    model: &CostModel,
    layouts: &[AxisSet],
    inputs: &[Vec<AxisSet>],
) -> Result<Plan, PlanError> {
    let mut plan = Plan {
        layouts: layouts.to_vec(),
        nodes: Vec::new(),
        total: 0.0,
    };
    for (node, ins) in p.nodes().iter().zip(inputs) {
        let inputs = node
            .slots()
            .iter()
            .zip(ins)
            .zip(&node.inputs)
            .map(|((&slot, &m), u)| {
                let producer = p.producer(node.vertex, slot);
                InputPlan {
                    producer,
                    tensor: u.tensor.clone(),
                    promoted: m,
                    source_layout: layouts[producer.0],
                }
            })
            .collect();
        plan.nodes.push(NodePlan {
            vertex: node.vertex,
            output_name: node.output.name.clone(),
            output: layouts[node.vertex.0],
            inputs,
            cost: CostBreakdown::default(),
        });
    }
    evaluate_plan(p, stats, model, &plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ll(names: &[&str]) -> LabelList {
        LabelList::parse(names).unwrap()
    }

    fn ax(axes: &[usize]) -> AxisSet {
        AxisSet::from_axes(axes.iter().copied())
    }

    #[test]
    fn consistency_examples() {
        let lu = ll(&["i", "j"]);
        let lw = ll(&["i", "k"]);
        assert!(is_consistent(ax(&[0]), ax(&[0]), &lu, &lw));
        assert!(!is_consistent(ax(&[]), ax(&[0]), &lu, &lw));
        let other = ll(&["a", "b"]);
        for m in 0..4 {
            assert!(is_consistent(AxisSet::from_bits(m), ax(&[0, 1]), &other, &lw));
        }
        assert!(is_consistent(ax(&[0, 1]), ax(&[0, 1]), &lu, &lw));
    }

    #[test]
    fn canonical_order() {
        let l = ll(&["k", "i"]);
        let masks = canonical_masks(&l);
        assert_eq!(masks, vec![ax(&[]), ax(&[1]), ax(&[0]), ax(&[0, 1])]);
    }

    #[test]
    fn improvement_is_strict() {
        assert!(improves(1.0, f64::INFINITY));
        assert!(!improves(f64::INFINITY, f64::INFINITY));
        assert!(!improves(1.0, 1.0));
        assert!(!improves(1.0 - 1e-15, 1.0));
        assert!(improves(0.5, 1.0));
    }
}
