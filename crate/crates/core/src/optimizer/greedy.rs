use super::{
    canonical_masks, improves, node_consistent, InputPlan, NodePlan, Plan, PlanError,
    SearchOptions,
};
use crate::cost::{CostBreakdown, CostError, CostModel, NodeView};
use crate::ir::{AxisSet, EinsumProgram, VertexId};
use crate::stats::ProgramStats;

/// Node-at-a-time baseline: in topological order, each node takes the
/// cheapest local decomposition given the layouts already fixed upstream.
/// A source not yet read is fixed by its first reader.
pub fn optimize_greedy(
    p: &EinsumProgram,
    stats: &ProgramStats,
    model: &CostModel,
    opts: SearchOptions,
) -> Result<Plan, PlanError> {
    let mut layouts: Vec<Option<AxisSet>> = vec![None; p.vertex_count()];
    let mut nodes = Vec::new();
    for &v in p.topo_order() {
        let Some(node) = p.node(v) else { continue };
        let view = NodeView::new(p, stats, node);
        let producers: Vec<VertexId> = node.slots().iter().map(|&s| p.producer(v, s)).collect();
        let masks = |k: usize| match node.inputs[k].hint {
            Some(h) if opts.respect_annotations => vec![h],
            _ => canonical_masks(&node.inputs[k].labels),
        };
        let out_masks = match node.output_hint {
            Some(h) if opts.respect_annotations => vec![h],
            _ => canonical_masks(&node.output_labels),
        };
        let pairs: Vec<Vec<AxisSet>> = if node.is_binary() {
            let right = masks(1);
            masks(0)
                .into_iter()
                .flat_map(|u| right.iter().map(move |&w| vec![u, w]))
                .collect()
        } else {
            masks(0).into_iter().map(|u| vec![u]).collect()
        };

        let mut best: Option<(f64, AxisSet, Vec<AxisSet>, Vec<AxisSet>, CostBreakdown)> = None;
        for &w in &out_masks {
            for ins in &pairs {
                if !node_consistent(node, w, ins) {
                    continue;
                }
                let mut srcs = Vec::with_capacity(ins.len());
                for (k, &prod) in producers.iter().enumerate() {
                    let src = layouts[prod.0]
                        .or_else(|| (k == 1 && producers[0] == prod).then(|| srcs[0]))
                        .unwrap_or(ins[k]);
                    srcs.push(src);
                }
                let reparts: Vec<f64> = producers
                    .iter()
                    .zip(&srcs)
                    .zip(ins)
                    .map(|((&prod, &src), &to)| model.repart(p, stats, prod, src, to))
                    .collect();
                let base = match model.node_cost(&view, ins, w) {
                    Ok(c) => c,
                    Err(CostError::Memory { .. }) => continue,
                    Err(e) => return Err(e.into()),
                };
                let cost = base.with_repart(reparts[0], reparts.get(1).copied().unwrap_or(0.0));
                if improves(cost.total, best.as_ref().map_or(f64::INFINITY, |b| b.0)) {
                    best = Some((cost.total, w, ins.clone(), srcs, cost));
                }
            }
        }
        let (_, w, ins, srcs, cost) =
            best.ok_or_else(|| PlanError::Infeasible(node.output.name.clone()))?;
        let mut inputs = Vec::new();
        for (k, &prod) in producers.iter().enumerate() {
            layouts[prod.0].get_or_insert(srcs[k]);
            inputs.push(InputPlan {
                producer: prod,
                tensor: node.inputs[k].tensor.clone(),
                promoted: ins[k],
                source_layout: srcs[k],
            });
        }
        layouts[v.0] = Some(w);
        nodes.push(NodePlan {
            vertex: v,
            output_name: node.output.name.clone(),
            output: w,
            inputs,
            cost,
        });
    }
    nodes.sort_by_key(|n| n.vertex);
    let total = nodes.iter().map(|n| n.cost.total).sum();
    Ok(Plan {
        layouts: layouts.into_iter().map(|l| l.unwrap_or(AxisSet::EMPTY)).collect(),
        nodes,
        total,
    })
}
