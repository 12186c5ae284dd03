use std::collections::BTreeMap;

use super::{
    canonical_masks, improves, node_consistent, InputPlan, NodePlan, Plan, PlanError,
    SearchOptions,
};
use crate::cost::{CostBreakdown, CostError, CostModel, NodeView};
use crate::ir::{split_into_trees, AxisSet, EinsumNode, EinsumProgram, Tree, VertexId};
use crate::stats::ProgramStats;

pub const MAX_TOP_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Choice {
    output: AxisSet,
    ins: [AxisSet; 2],
    srcs: [AxisSet; 2],
    cost: CostBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    cost: f64,
    choice: Option<Choice>,
}

const UNREACHABLE: Entry = Entry {
    cost: f64::INFINITY,
    choice: None,
};

/// `C[v, ↑W]`: best cumulative cost per vertex and promoted set, with the
/// choice that achieves it. Pruned or unreachable entries hold +infinity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostTable {
    entries: BTreeMap<VertexId, Vec<Entry>>,
}

impl CostTable {
    pub fn cost(&self, v: VertexId, mask: AxisSet) -> Option<f64> {
        self.entries
            .get(&v)
            .and_then(|e| e.get(mask.bits() as usize))
            .map(|e| e.cost)
    }

    /// Number of entries held for `v`.
    pub fn len(&self, v: VertexId) -> usize {
        self.entries.get(&v).map_or(0, Vec::len)
    }

    pub fn vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.entries.keys().copied()
    }

    fn entry(&self, v: VertexId, mask: AxisSet) -> Entry {
        self.entries[&v][mask.bits() as usize]
    }
}

/// Decompositions and costs for one tree's nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TreePlan {
    pub nodes: Vec<NodePlan>,
    /// Layout chosen for every member and every source first read here.
    pub layouts: Vec<(VertexId, AxisSet)>,
    pub total: f64,
}

struct Search<'a> {
    p: &'a EinsumProgram,
    stats: &'a ProgramStats,
    model: &'a CostModel,
    opts: SearchOptions,
}

/// Best way to feed one input slot from the producer's table.
#[derive(Debug, Clone, Copy)]
struct Feed {
    cost: f64,
    src: AxisSet,
    repart: f64,
}

impl<'a> Search<'a> {
    fn out_masks(&self, node: &EinsumNode) -> Vec<AxisSet> {
        match node.output_hint {
            Some(h) if self.opts.respect_annotations => vec![h],
            _ => canonical_masks(&node.output_labels),
        }
    }

    fn in_masks(&self, node: &EinsumNode, k: usize) -> Vec<AxisSet> {
        match node.inputs[k].hint {
            Some(h) if self.opts.respect_annotations => vec![h],
            _ => canonical_masks(&node.inputs[k].labels),
        }
    }

    /// Source layouts tried for a target: the target first, then canonical.
    fn src_order(&self, node: &EinsumNode, k: usize, target: AxisSet) -> Vec<AxisSet> {
        std::iter::once(target)
            .chain(
                canonical_masks(&node.inputs[k].labels)
                    .into_iter()
                    .filter(|&m| m != target),
            )
            .collect()
    }

    fn feed(&self, table: &CostTable, node: &EinsumNode, k: usize, producer: VertexId, target: AxisSet) -> Feed {
        let mut best = Feed {
            cost: f64::INFINITY,
            src: target,
            repart: 0.0,
        };
        for src in self.src_order(node, k, target) {
            let upstream = table.entry(producer, src).cost;
            if upstream.is_infinite() {
                continue;
            }
            let repart = self.model.repart(self.p, self.stats, producer, src, target);
            if improves(upstream + repart, best.cost) {
                best = Feed {
                    cost: upstream + repart,
                    src,
                    repart,
                };
            }
        }
        best
    }

    /// Both slots read the same producer: one stored layout serves both.
    fn joint_feed(
        &self,
        table: &CostTable,
        node: &EinsumNode,
        producer: VertexId,
        targets: [AxisSet; 2],
    ) -> (f64, AxisSet, [f64; 2]) {
        let mut best = (f64::INFINITY, targets[0], [0.0, 0.0]);
        for src in self.src_order(node, 0, targets[0]) {
            let upstream = table.entry(producer, src).cost;
            if upstream.is_infinite() {
                continue;
            }
            let r = targets.map(|t| self.model.repart(self.p, self.stats, producer, src, t));
            let total = upstream + r[0] + r[1];
            if improves(total, best.0) {
                best = (total, src, r);
            }
        }
        best
    }

    /// Every feasible (↑W, ↑U, ↑V) of a node in canonical order, each with
    /// its best feeding layouts and cumulative cost.
    fn candidates(&self, table: &CostTable, v: VertexId) -> Result<Vec<(f64, Choice)>, PlanError> {
        let p = self.p;
        let node = p.node(v).expect("member is a node");
        let view = NodeView::new(p, self.stats, node);
        let producers: Vec<VertexId> = node.slots().iter().map(|&s| p.producer(v, s)).collect();
        let same = producers.len() == 2 && producers[0] == producers[1];

        let in_masks: Vec<Vec<AxisSet>> = (0..node.inputs.len()).map(|k| self.in_masks(node, k)).collect();
        let mut feeds: Vec<BTreeMap<AxisSet, Feed>> = Vec::new();
        if !same {
            for (k, &prod) in producers.iter().enumerate() {
                feeds.push(
                    in_masks[k]
                        .iter()
                        .map(|&t| (t, self.feed(table, node, k, prod, t)))
                        .collect(),
                );
            }
        }

        let mut out = Vec::new();
        let mut pairs: Vec<[AxisSet; 2]> = Vec::new();
        for &u in &in_masks[0] {
            if node.is_binary() {
                for &w in &in_masks[1] {
                    pairs.push([u, w]);
                }
            } else {
                pairs.push([u, AxisSet::EMPTY]);
            }
        }
        for w in self.out_masks(node) {
            for pair in &pairs {
                let ins = &pair[..node.inputs.len()];
                if !node_consistent(node, w, ins) {
                    continue;
                }
                let (upstream, srcs, reparts) = if same {
                    let (c, src, r) = self.joint_feed(table, node, producers[0], *pair);
                    (c, [src, src], r)
                } else {
                    let f: Vec<Feed> = ins
                        .iter()
                        .enumerate()
                        .map(|(k, m)| feeds[k][m])
                        .collect();
                    let mut srcs = [AxisSet::EMPTY; 2];
                    let mut reparts = [0.0; 2];
                    for (k, fk) in f.iter().enumerate() {
                        srcs[k] = fk.src;
                        reparts[k] = fk.repart;
                    }
                    (f.iter().map(|x| x.cost).sum(), srcs, reparts)
                };
                if upstream.is_infinite() {
                    continue;
                }
                let base = match self.model.node_cost(&view, ins, w) {
                    Ok(c) => c,
                    Err(CostError::Memory { .. }) => continue,
                    Err(e) => return Err(e.into()),
                };
                let cost = base.with_repart(reparts[0], reparts[1]);
                out.push((
                    upstream - reparts[0] - reparts[1] + cost.total,
                    Choice {
                        output: w,
                        ins: *pair,
                        srcs,
                        cost,
                    },
                ));
            }
        }
        Ok(out)
    }

    fn fill(&self, tree: &Tree, frozen: &[Option<AxisSet>]) -> Result<CostTable, PlanError> {
        let p = self.p;
        let mut table = CostTable::default();
        for &s in &tree.sources {
            let n = 1usize << p.decl(s).rank();
            table.entries.insert(
                s,
                vec![
                    Entry {
                        cost: 0.0,
                        choice: None
                    };
                    n
                ],
            );
        }
        for &f in &tree.frozen {
            let n = 1usize << p.decl(f).rank();
            let mut e = vec![UNREACHABLE; n];
            let layout = frozen[f.0].expect("frozen boundary has a layout");
            e[layout.bits() as usize].cost = 0.0;
            table.entries.insert(f, e);
        }
        for &v in &tree.nodes {
            let n = 1usize << p.decl(v).rank();
            let mut entries = vec![UNREACHABLE; n];
            for (cost, choice) in self.candidates(&table, v)? {
                let slot = &mut entries[choice.output.bits() as usize];
                if improves(cost, slot.cost) {
                    *slot = Entry {
                        cost,
                        choice: Some(choice),
                    };
                }
            }
            if entries.iter().all(|e| e.cost.is_infinite()) {
                return Err(PlanError::Infeasible(p.name(v).to_string()));
            }
            table.entries.insert(v, entries);
        }
        Ok(table)
    }

    fn argmin(&self, table: &CostTable, v: VertexId) -> AxisSet {
        let node = self.p.node(v).expect("root is a node");
        let mut best = (f64::INFINITY, AxisSet::EMPTY);
        for m in self.out_masks(node) {
            let c = table.entry(v, m).cost;
            if improves(c, best.0) {
                best = (c, m);
            }
        }
        best.1
    }

    fn reconstruct(
        &self,
        table: &CostTable,
        tree: &Tree,
        v: VertexId,
        choice: Choice,
        out: &mut TreePlan,
    ) {
        let node = self.p.node(v).expect("member");
        let mut inputs = Vec::new();
        for (k, &slot) in node.slots().iter().enumerate() {
            let producer = self.p.producer(v, slot);
            let src = choice.srcs[k];
            let seen = out.layouts.iter().any(|(u, _)| *u == producer);
            if tree.contains(producer) {
                if !seen {
                    let e = table.entry(producer, src);
                    self.reconstruct(table, tree, producer, e.choice.expect("finite entry"), out);
                }
            } else if tree.sources.contains(&producer) && !seen {
                out.layouts.push((producer, src));
            }
            inputs.push(InputPlan {
                producer,
                tensor: node.inputs[k].tensor.clone(),
                promoted: choice.ins[k],
                source_layout: src,
            });
        }
        out.layouts.push((v, choice.output));
        out.total += choice.cost.total;
        out.nodes.push(NodePlan {
            vertex: v,
            output_name: node.output.name.clone(),
            output: choice.output,
            inputs,
            cost: choice.cost,
        });
    }

    fn tree_plan(&self, table: &CostTable, tree: &Tree, forced: Option<(VertexId, Choice)>) -> TreePlan {
        let mut out = TreePlan {
            nodes: Vec::new(),
            layouts: Vec::new(),
            total: 0.0,
        };
        for root in tree.roots(self.p) {
            let choice = match forced {
                Some((v, c)) if v == root => c,
                _ => {
                    let m = self.argmin(table, root);
                    table.entry(root, m).choice.expect("feasible root")
                }
            };
            self.reconstruct(table, tree, root, choice, &mut out);
        }
        out
    }
}

/// Alg. 1 on one tree. `frozen[v]` holds the fixed layout of every tensor
/// settled by an earlier tree.
pub fn optimize_tree(
    p: &EinsumProgram,
    stats: &ProgramStats,
    model: &CostModel,
    tree: &Tree,
    frozen: &[Option<AxisSet>],
    opts: SearchOptions,
) -> Result<(CostTable, TreePlan), PlanError> {
    let search = Search {
        p,
        stats,
        model,
        opts,
    };
    let table = search.fill(tree, frozen)?;
    let plan = search.tree_plan(&table, tree, None);
    Ok((table, plan))
}

fn assemble(p: &EinsumProgram, layouts: &[Option<AxisSet>], mut nodes: Vec<NodePlan>) -> Plan {
    nodes.sort_by_key(|n| n.vertex);
    let total = nodes.iter().map(|n| n.cost.total).sum();
    Plan {
        layouts: (0..p.vertex_count())
            .map(|v| layouts[v].unwrap_or(AxisSet::EMPTY))
            .collect(),
        nodes,
        total,
    }
}

fn absorb(layouts: &mut [Option<AxisSet>], tp: &TreePlan) {
    for &(v, m) in &tp.layouts {
        layouts[v.0] = Some(m);
    }
}

/// Splits into trees and optimizes them in order, freezing every boundary
/// tensor once its tree is done.
pub fn optimize_program(
    p: &EinsumProgram,
    stats: &ProgramStats,
    model: &CostModel,
    opts: SearchOptions,
) -> Result<Plan, PlanError> {
    let mut layouts = vec![None; p.vertex_count()];
    let mut nodes = Vec::new();
    for tree in split_into_trees(p) {
        let (_, tp) = optimize_tree(p, stats, model, &tree, &layouts, opts)?;
        absorb(&mut layouts, &tp);
        nodes.extend(tp.nodes);
    }
    Ok(assemble(p, &layouts, nodes))
}

/// The `k` cheapest plans that differ in the last root's decomposition.
/// Each round takes the cheapest root candidate not returned before.
pub fn optimize_top_k(
    p: &EinsumProgram,
    stats: &ProgramStats,
    model: &CostModel,
    opts: SearchOptions,
    k: usize,
) -> Result<Vec<Plan>, PlanError> {
    if k == 0 || k > MAX_TOP_K {
        return Err(PlanError::TopK { k, max: MAX_TOP_K });
    }
    let search = Search {
        p,
        stats,
        model,
        opts,
    };
    let trees = split_into_trees(p);
    let Some((last, head)) = trees.split_last() else {
        return Ok(vec![assemble(p, &vec![None; p.vertex_count()], Vec::new())]);
    };
    let mut layouts = vec![None; p.vertex_count()];
    let mut nodes = Vec::new();
    for tree in head {
        let table = search.fill(tree, &layouts)?;
        let tp = search.tree_plan(&table, tree, None);
        absorb(&mut layouts, &tp);
        nodes.extend(tp.nodes);
    }
    let table = search.fill(last, &layouts)?;
    let root = *last.roots(p).last().expect("tree has a root");
    let candidates = search.candidates(&table, root)?;
    let mut taken = vec![false; candidates.len()];
    let mut plans = Vec::new();
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for (i, (c, _)) in candidates.iter().enumerate() {
            if !taken[i] && improves(*c, best.map_or(f64::INFINITY, |b| candidates[b].0)) {
                best = Some(i);
            }
        }
        let Some(i) = best else { break };
        taken[i] = true;
        let tp = search.tree_plan(&table, last, Some((root, candidates[i].1)));
        let mut l = layouts.clone();
        absorb(&mut l, &tp);
        let mut all = nodes.clone();
        all.extend(tp.nodes);
        plans.push(assemble(p, &l, all));
    }
    Ok(plans)
}
