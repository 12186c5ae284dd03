//! EinSum intermediate representation.
//!
//! A program is a DAG whose vertices are either declared source tensors or
//! unary/binary EinSum nodes. Every vertex produces exactly one tensor, so a
//! [`VertexId`] doubles as a tensor handle.

mod graph;
mod parser;
mod printer;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use graph::{split_into_trees, topo_sort, Tree};
pub use parser::{parse_program, parse_program_with, ParseOptions};
pub use printer::render_uclc;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IrError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid label `{0}`")]
    InvalidLabel(String),
    #[error("label `{label}` has bound {first} and {second} in the statement producing `{tensor}`")]
    BoundMismatch {
        tensor: String,
        label: String,
        first: usize,
        second: usize,
    },
    #[error("undeclared tensor `{0}`")]
    UndeclaredTensor(String),
    #[error("tensor `{0}` is defined more than once")]
    DuplicateTensor(String),
    #[error("`{tensor}` uses {labels} labels but has rank {rank}")]
    RankMismatch {
        tensor: String,
        labels: usize,
        rank: usize,
    },
    #[error("label `{label}` repeats in a label list of `{tensor}`")]
    RepeatedLabel { tensor: String, label: String },
    #[error("output label `{label}` of `{tensor}` does not appear in any input")]
    DanglingOutputLabel { tensor: String, label: String },
    #[error("aggregation list of `{tensor}` is [{given}] but the inputs aggregate [{derived}]")]
    AggregationMismatch {
        tensor: String,
        given: String,
        derived: String,
    },
    #[error("label `{label}` missing from source list")]
    LabelNotInSource { label: String },
    #[error("bound entries must be positive (tensor `{0}`)")]
    ZeroBound(String),
    #[error("program graph has a cycle through `{0}`")]
    Cycle(String),
}

/// Index label. Stored lower-case; surface case only carries a promotion hint.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(String);

impl Label {
    pub fn new(name: &str) -> Result<Self, IrError> {
        let mut chars = name.chars();
        let valid = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
            && chars.all(|c| c.is_ascii_alphanumeric());
        if !valid {
            return Err(IrError::InvalidLabel(name.to_string()));
        }
        Ok(Self(name.to_ascii_lowercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn upper(&self) -> String {
        self.0.to_ascii_uppercase()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Per-axis extents of a tensor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoundVector(Vec<usize>);

impl BoundVector {
    pub fn new(bounds: Vec<usize>) -> Self {
        Self(bounds)
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Number of cells in the full index grid.
    pub fn volume(&self) -> usize {
        self.0.iter().product()
    }

    /// Product of the extents of the selected axes.
    pub fn volume_of(&self, axes: AxisSet) -> usize {
        axes.iter().map(|a| self.0[a]).product()
    }

    pub fn select(&self, axes: AxisSet) -> Vec<usize> {
        axes.iter().map(|a| self.0[a]).collect()
    }
}

impl std::ops::Index<usize> for BoundVector {
    type Output = usize;
    fn index(&self, i: usize) -> &usize {
        &self.0[i]
    }
}

/// Ordered list of labels indexing one tensor use.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelList(Vec<Label>);

impl LabelList {
    pub fn new(labels: Vec<Label>) -> Self {
        Self(labels)
    }

    pub fn parse(names: &[&str]) -> Result<Self, IrError> {
        names.iter().map(|n| Label::new(n)).collect::<Result<_, _>>().map(Self)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Label> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[Label] {
        &self.0
    }

    /// First axis carrying `label`.
    pub fn position(&self, label: &Label) -> Option<usize> {
        self.0.iter().position(|l| l == label)
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.position(label).is_some()
    }

    pub fn first_repeat(&self) -> Option<&Label> {
        let mut seen = BTreeSet::new();
        self.0.iter().find(|l| !seen.insert(*l))
    }

    /// Axes whose label is in `labels`.
    pub fn mask_of<'a>(&self, labels: impl IntoIterator<Item = &'a Label>) -> AxisSet {
        let wanted: BTreeSet<&Label> = labels.into_iter().collect();
        let mut set = AxisSet::EMPTY;
        for (axis, l) in self.0.iter().enumerate() {
            if wanted.contains(l) {
                set.insert(axis);
            }
        }
        set
    }

    pub fn select(&self, axes: AxisSet) -> Vec<&Label> {
        axes.iter().map(|a| &self.0[a]).collect()
    }
}

impl std::ops::Index<usize> for LabelList {
    type Output = Label;
    fn index(&self, i: usize) -> &Label {
        &self.0[i]
    }
}

impl<'a> IntoIterator for &'a LabelList {
    type Item = &'a Label;
    type IntoIter = std::slice::Iter<'a, Label>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Projection and permutation of a bound vector: `result[i] = b[j]` where
/// `target[i] == source[j]`, taking the first match on duplicates.
pub fn project_bound(
    b: &BoundVector,
    target: &LabelList,
    source: &LabelList,
) -> Result<BoundVector, IrError> {
    target
        .iter()
        .map(|l| {
            source
                .position(l)
                .map(|j| b[j])
                .ok_or_else(|| IrError::LabelNotInSource {
                    label: l.to_string(),
                })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(BoundVector)
}

/// Set of tensor axes, used for promoted label sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct AxisSet(u32);

impl AxisSet {
    pub const EMPTY: AxisSet = AxisSet(0);
    pub const MAX_RANK: usize = 24;

    pub fn from_bits(bits: u32) -> Self {
        Self(bits)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn full(rank: usize) -> Self {
        debug_assert!(rank <= Self::MAX_RANK);
        Self(((1u64 << rank) - 1) as u32)
    }

    pub fn from_axes(axes: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::EMPTY;
        for a in axes {
            s.insert(a);
        }
        s
    }

    pub fn contains(self, axis: usize) -> bool {
        self.0 >> axis & 1 == 1
    }

    pub fn insert(&mut self, axis: usize) {
        self.0 |= 1 << axis;
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: Self) -> Self {
        Self(self.0 | other.0)
    }

    pub fn intersection(self, other: Self) -> Self {
        Self(self.0 & other.0)
    }

    pub fn difference(self, other: Self) -> Self {
        Self(self.0 & !other.0)
    }

    pub fn complement(self, rank: usize) -> Self {
        Self::full(rank).difference(self)
    }

    pub fn is_subset(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn fits_rank(self, rank: usize) -> bool {
        self.is_subset(Self::full(rank))
    }

    /// Ascending axis indices.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..32).filter(move |a| bits >> a & 1 == 1)
    }

    /// All subsets of `0..rank`, in bit order.
    pub fn all_subsets(rank: usize) -> impl Iterator<Item = AxisSet> {
        (0..(1u32 << rank)).map(AxisSet)
    }
}

impl Serialize for AxisSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for AxisSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let axes = Vec::<usize>::deserialize(d)?;
        if axes.iter().any(|&a| a >= Self::MAX_RANK) {
            return Err(serde::de::Error::custom("axis index out of range"));
        }
        Ok(Self::from_axes(axes))
    }
}

/// Partition of one tensor use's labels into promoted and demoted lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub promoted: Vec<Label>,
    pub demoted: Vec<Label>,
}

impl Decomposition {
    pub fn of(labels: &LabelList, promoted: AxisSet) -> Self {
        let mut up = Vec::new();
        let mut down = Vec::new();
        for (axis, l) in labels.iter().enumerate() {
            if promoted.contains(axis) {
                up.push(l.clone());
            } else {
                down.push(l.clone());
            }
        }
        Self {
            promoted: up,
            demoted: down,
        }
    }

    /// Bound of each stored sub-tensor, `b[demoted; labels]`.
    pub fn block_bound(&self, b: &BoundVector, labels: &LabelList) -> BoundVector {
        project_bound(b, &LabelList(self.demoted.clone()), labels)
            .expect("demoted labels come from the same list")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorDecl {
    pub name: String,
    pub bound: BoundVector,
}

impl TensorDecl {
    pub fn new(name: impl Into<String>, bound: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            bound: BoundVector(bound),
        }
    }

    pub fn rank(&self) -> usize {
        self.bound.rank()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    Multiply,
    Add,
    Subtract,
    Divide,
}

impl Combine {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Combine::Multiply => a * b,
            Combine::Add => a + b,
            Combine::Subtract => a - b,
            Combine::Divide => a / b,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Combine::Multiply => "*",
            Combine::Add => "+",
            Combine::Subtract => "-",
            Combine::Divide => "/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Sum,
    Max,
}

impl Aggregate {
    /// Identity element of the reduction.
    pub fn zero(self) -> f64 {
        match self {
            Aggregate::Sum => 0.0,
            Aggregate::Max => f64::NEG_INFINITY,
        }
    }

    pub fn fold(self, acc: f64, x: f64) -> f64 {
        match self {
            Aggregate::Sum => acc + x,
            Aggregate::Max => acc.max(x),
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Aggregate::Sum => "sum",
            Aggregate::Max => "max",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnaryFn {
    Identity,
    Relu,
    Exp,
    Scale(f64),
    Square,
}

impl UnaryFn {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            UnaryFn::Identity => x,
            UnaryFn::Relu => x.max(0.0),
            UnaryFn::Exp => x.exp(),
            UnaryFn::Scale(c) => c * x,
            UnaryFn::Square => x * x,
        }
    }

    /// Scalar multiplications spent per application.
    pub fn multiplies(self) -> u64 {
        match self {
            UnaryFn::Scale(_) | UnaryFn::Square => 1,
            _ => 0,
        }
    }

    pub fn maps_zero_to_zero(self) -> bool {
        self.apply(0.0) == 0.0
    }
}

/// Combine, reduction and optional pointwise function of an extended EinSum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpSpec {
    pub combine: Combine,
    pub aggregate: Aggregate,
    pub unary: UnaryFn,
}

impl Default for OpSpec {
    fn default() -> Self {
        Self {
            combine: Combine::Multiply,
            aggregate: Aggregate::Sum,
            unary: UnaryFn::Identity,
        }
    }
}

impl OpSpec {
    pub fn zero(&self) -> f64 {
        self.aggregate.zero()
    }

    /// `(sum, multiply)`.
    pub fn is_semiring(&self) -> bool {
        self.aggregate == Aggregate::Sum && self.combine == Combine::Multiply
    }

    /// Whether absent (all-zero) sub-tensors can be skipped by the join and
    /// dropped from the result. Requires a semiring whose pointwise function
    /// keeps zero at zero.
    pub fn sparse_safe(&self) -> bool {
        self.is_semiring() && self.unary.maps_zero_to_zero()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VertexId(pub usize);

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Left,
    Right,
    Only,
}

impl Slot {
    pub fn index(self) -> usize {
        match self {
            Slot::Left | Slot::Only => 0,
            Slot::Right => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub producer: VertexId,
    pub consumer: VertexId,
    pub slot: Slot,
}

/// A tensor referenced with a label list, optionally carrying the promotion
/// pattern written in upper-case-lower-case surface syntax.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorUse {
    pub tensor: String,
    pub labels: LabelList,
    pub hint: Option<AxisSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EinsumNode {
    pub vertex: VertexId,
    pub output: TensorDecl,
    pub output_labels: LabelList,
    pub output_hint: Option<AxisSet>,
    pub inputs: Vec<TensorUse>,
    pub op: OpSpec,
}

impl EinsumNode {
    pub fn is_binary(&self) -> bool {
        self.inputs.len() == 2
    }

    pub fn slots(&self) -> &'static [Slot] {
        if self.is_binary() {
            &[Slot::Left, Slot::Right]
        } else {
            &[Slot::Only]
        }
    }

    /// Every distinct label of the node, in order of first appearance across
    /// the inputs.
    pub fn all_labels(&self) -> Vec<Label> {
        let mut out: Vec<Label> = Vec::new();
        for u in &self.inputs {
            for l in &u.labels {
                if !out.contains(l) {
                    out.push(l.clone());
                }
            }
        }
        out
    }

    /// Labels present in the inputs but not in the output.
    pub fn agg_labels(&self) -> Vec<Label> {
        self.all_labels()
            .into_iter()
            .filter(|l| !self.output_labels.contains(l))
            .collect()
    }

    /// Labels shared by both inputs.
    pub fn shared_labels(&self) -> Vec<Label> {
        if !self.is_binary() {
            return Vec::new();
        }
        self.inputs[0]
            .labels
            .iter()
            .filter(|l| self.inputs[1].labels.contains(l))
            .cloned()
            .collect()
    }

    /// Bound of `label` within this node.
    pub fn label_bound(&self, label: &Label, bounds: &[&BoundVector]) -> Option<usize> {
        self.inputs
            .iter()
            .zip(bounds)
            .find_map(|(u, b)| u.labels.position(label).map(|p| b[p]))
    }
}

/// Validated DAG of EinSum nodes over declared source tensors.
///
/// Vertex ids: sources in declaration order, then nodes in statement order.
#[derive(Debug, Clone, PartialEq)]
pub struct EinsumProgram {
    sources: Vec<TensorDecl>,
    nodes: Vec<EinsumNode>,
    edges: Vec<Edge>,
    order: Vec<VertexId>,
}

impl EinsumProgram {
    pub fn sources(&self) -> &[TensorDecl] {
        &self.sources
    }

    pub fn nodes(&self) -> &[EinsumNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn vertex_count(&self) -> usize {
        self.sources.len() + self.nodes.len()
    }

    pub fn is_source(&self, v: VertexId) -> bool {
        v.0 < self.sources.len()
    }

    pub fn node(&self, v: VertexId) -> Option<&EinsumNode> {
        v.0.checked_sub(self.sources.len())
            .and_then(|i| self.nodes.get(i))
    }

    pub fn decl(&self, v: VertexId) -> &TensorDecl {
        match self.node(v) {
            Some(n) => &n.output,
            None => &self.sources[v.0],
        }
    }

    pub fn name(&self, v: VertexId) -> &str {
        &self.decl(v).name
    }

    pub fn vertex_by_name(&self, name: &str) -> Option<VertexId> {
        (0..self.vertex_count())
            .map(VertexId)
            .find(|&v| self.name(v) == name)
    }

    /// Topological order, ties broken by vertex id.
    pub fn topo_order(&self) -> &[VertexId] {
        &self.order
    }

    pub fn producer(&self, consumer: VertexId, slot: Slot) -> VertexId {
        self.edges
            .iter()
            .find(|e| e.consumer == consumer && e.slot == slot)
            .map(|e| e.producer)
            .expect("validated program fills every slot")
    }

    pub fn consumers(&self, producer: VertexId) -> Vec<(VertexId, Slot)> {
        self.edges
            .iter()
            .filter(|e| e.producer == producer)
            .map(|e| (e.consumer, e.slot))
            .collect()
    }

    /// Bound vectors of a node's inputs, in slot order.
    pub fn input_bounds(&self, node: &EinsumNode) -> Vec<&BoundVector> {
        node.slots()
            .iter()
            .map(|&s| &self.decl(self.producer(node.vertex, s)).bound)
            .collect()
    }

    /// Vertices with no consumers.
    pub fn sinks(&self) -> Vec<VertexId> {
        self.order
            .iter()
            .copied()
            .filter(|&v| !self.is_source(v) && self.consumers(v).is_empty())
            .collect()
    }

    pub(crate) fn from_parts(
        sources: Vec<TensorDecl>,
        nodes: Vec<EinsumNode>,
        edges: Vec<Edge>,
        order: Vec<VertexId>,
    ) -> Self {
        Self {
            sources,
            nodes,
            edges,
            order,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ll(names: &[&str]) -> LabelList {
        LabelList::parse(names).unwrap()
    }

    #[test]
    fn project_bound_examples() {
        let b = BoundVector::new(vec![2, 3, 4]);
        let got = project_bound(&b, &ll(&["k", "i"]), &ll(&["i", "j", "k"])).unwrap();
        assert_eq!(got.as_slice(), &[4, 2]);

        let b = BoundVector::new(vec![5]);
        assert_eq!(
            project_bound(&b, &ll(&["i"]), &ll(&["i"])).unwrap().as_slice(),
            &[5]
        );

        let b = BoundVector::new(vec![10, 100, 20, 100, 20, 2000]);
        let src = ll(&["i", "j", "b", "j", "b", "k"]);
        assert_eq!(
            project_bound(&b, &ll(&["b", "j"]), &src).unwrap().as_slice(),
            &[20, 100]
        );
    }

    #[test]
    fn project_bound_missing_label() {
        let b = BoundVector::new(vec![2]);
        let err = project_bound(&b, &ll(&["q"]), &ll(&["i"])).unwrap_err();
        assert!(matches!(err, IrError::LabelNotInSource { .. }));
    }

    #[test]
    fn labels_are_case_insensitive() {
        assert_eq!(Label::new("J").unwrap(), Label::new("j").unwrap());
        assert!(Label::new("1a").is_err());
        assert!(Label::new("").is_err());
        assert!(Label::new("a_b").is_err());
    }

    #[test]
    fn semiring_flags() {
        let mut op = OpSpec::default();
        assert!(op.is_semiring() && op.sparse_safe());
        op.unary = UnaryFn::Exp;
        assert!(op.is_semiring() && !op.sparse_safe());
        op = OpSpec {
            combine: Combine::Subtract,
            aggregate: Aggregate::Max,
            unary: UnaryFn::Square,
        };
        assert!(!op.is_semiring());
        assert_eq!(op.zero(), f64::NEG_INFINITY);
    }

    #[test]
    fn axis_set_ops() {
        let s = AxisSet::from_axes([0, 2]);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(s.complement(3), AxisSet::from_axes([1]));
        assert!(AxisSet::EMPTY.is_subset(s));
        assert_eq!(AxisSet::all_subsets(3).count(), 8);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn labels_and_bounds() -> impl Strategy<Value = (Vec<String>, Vec<usize>)> {
            proptest::sample::subsequence(
                vec!["a", "b", "c", "d", "e", "f"],
                1..=6,
            )
            .prop_shuffle()
            .prop_flat_map(|names| {
                let n = names.len();
                (
                    Just(names.into_iter().map(String::from).collect::<Vec<_>>()),
                    proptest::collection::vec(1usize..50, n),
                )
            })
        }

        proptest! {
            #[test]
            fn identity_projection((names, bounds) in labels_and_bounds()) {
                let refs: Vec<&str> = names.iter().map(String::as_str).collect();
                let l = LabelList::parse(&refs).unwrap();
                let b = BoundVector::new(bounds);
                prop_assert_eq!(project_bound(&b, &l, &l).unwrap(), b);
            }

            #[test]
            fn projection_composes(
                (names, bounds) in labels_and_bounds(),
                keep2 in any::<u8>(),
                keep3 in any::<u8>(),
            ) {
                let refs: Vec<&str> = names.iter().map(String::as_str).collect();
                let l1 = LabelList::parse(&refs).unwrap();
                let b = BoundVector::new(bounds);
                let l2: Vec<&str> = refs.iter().enumerate()
                    .filter(|(i, _)| keep2 >> i & 1 == 1).map(|(_, n)| *n).rev().collect();
                let l3: Vec<&str> = l2.iter().enumerate()
                    .filter(|(i, _)| keep3 >> i & 1 == 1).map(|(_, n)| *n).collect();
                let l2 = LabelList::parse(&l2).unwrap();
                let l3 = LabelList::parse(&l3).unwrap();
                let via = project_bound(&project_bound(&b, &l2, &l1).unwrap(), &l3, &l2).unwrap();
                prop_assert_eq!(via, project_bound(&b, &l3, &l1).unwrap());
            }
        }
    }
}
