use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use super::{Edge, EinsumProgram, VertexId};

/// Kahn's algorithm with a min-heap so ties resolve by vertex id.
///
/// On a cycle, returns the smallest vertex left unordered.
pub fn topo_sort(vertex_count: usize, edges: &[Edge]) -> Result<Vec<VertexId>, VertexId> {
    let mut indegree = vec![0usize; vertex_count];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); vertex_count];
    for e in edges {
        indegree[e.consumer.0] += 1;
        succ[e.producer.0].push(e.consumer.0);
    }
    let mut heap: BinaryHeap<Reverse<usize>> = (0..vertex_count)
        .filter(|&v| indegree[v] == 0)
        .map(Reverse)
        .collect();
    let mut order = Vec::with_capacity(vertex_count);
    while let Some(Reverse(v)) = heap.pop() {
        order.push(VertexId(v));
        for &w in &succ[v] {
            indegree[w] -= 1;
            if indegree[w] == 0 {
                heap.push(Reverse(w));
            }
        }
    }
    if order.len() == vertex_count {
        Ok(order)
    } else {
        let stuck = (0..vertex_count)
            .find(|&v| indegree[v] > 0)
            .expect("unordered vertex exists");
        Err(VertexId(stuck))
    }
}

/// A subgraph in which every tensor is consumed at most once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tree {
    /// Member nodes in topological order.
    pub nodes: Vec<VertexId>,
    /// Source tensors first read by this tree.
    pub sources: Vec<VertexId>,
    /// Inputs produced or first read by an earlier tree; their decomposition
    /// is fixed by the time this tree is optimized.
    pub frozen: Vec<VertexId>,
}

impl Tree {
    pub fn contains(&self, v: VertexId) -> bool {
        self.nodes.contains(&v)
    }

    /// Members whose output is not consumed inside the tree.
    pub fn roots(&self, p: &EinsumProgram) -> Vec<VertexId> {
        self.nodes
            .iter()
            .copied()
            .filter(|&v| !p.consumers(v).iter().any(|(c, _)| self.contains(*c)))
            .collect()
    }
}

/// Greedy maximal extraction in topological order.
///
/// A node joins the current tree when each of its distinct producers is
/// either frozen, or a member/unclaimed source that nothing in the tree has
/// consumed yet. Remaining nodes seed the next tree.
pub fn split_into_trees(p: &EinsumProgram) -> Vec<Tree> {
    let n = p.vertex_count();
    let mut assigned = vec![false; n];
    let mut frozen = vec![false; n];
    let mut trees = Vec::new();
    let mut left = p.nodes().len();

    while left > 0 {
        let mut in_tree = vec![false; n];
        let mut consumed = vec![false; n];
        let mut tree = Tree {
            nodes: Vec::new(),
            sources: Vec::new(),
            frozen: Vec::new(),
        };
        for &v in p.topo_order() {
            let Some(node) = p.node(v) else { continue };
            if assigned[v.0] {
                continue;
            }
            let producers: BTreeSet<VertexId> = node
                .slots()
                .iter()
                .map(|&s| p.producer(v, s))
                .collect();
            let ok = producers.iter().all(|&u| {
                frozen[u.0] || ((in_tree[u.0] || p.is_source(u)) && !consumed[u.0])
            });
            if !ok {
                continue;
            }
            for &u in &producers {
                if frozen[u.0] {
                    if !tree.frozen.contains(&u) {
                        tree.frozen.push(u);
                    }
                } else {
                    consumed[u.0] = true;
                    if p.is_source(u) {
                        tree.sources.push(u);
                    }
                }
            }
            in_tree[v.0] = true;
            assigned[v.0] = true;
            tree.nodes.push(v);
            left -= 1;
        }
        debug_assert!(!tree.nodes.is_empty(), "each pass claims a node");
        for &v in tree.nodes.iter().chain(&tree.sources) {
            frozen[v.0] = true;
        }
        trees.push(tree);
    }
    trees
}
