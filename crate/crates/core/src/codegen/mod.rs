//! Tensor-relational SQL emission.
//!
//! The dialect has `TENSOR[..]` value types, the `ALLINTS` table function,
//! the `STACK` aggregate and a `FILL` table function that adds zero blocks
//! for every missing key (used by operators that do not keep zero at zero).

mod interp;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use interp::{run_script, ScriptError};

use crate::ir::{
    render_uclc, AxisSet, BoundVector, EinsumNode, EinsumProgram, Label, LabelList, OpSpec,
    TensorUse,
};
use crate::optimizer::{node_consistent, validate_plan, NodePlan, Plan, PlanError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodegenError {
    #[error("inconsistent decomposition at `{0}`")]
    Inconsistent(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Relation layout: one INT key column per promoted axis, then the value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSchema {
    pub name: String,
    pub tensor: String,
    pub bound: BoundVector,
    /// Labels naming the key columns, one per axis.
    pub labels: LabelList,
    pub promoted: AxisSet,
}

impl RelationSchema {
    pub fn new(
        name: impl Into<String>,
        tensor: impl Into<String>,
        bound: BoundVector,
        labels: LabelList,
        promoted: AxisSet,
    ) -> Self {
        assert_eq!(bound.rank(), labels.len(), "one label per axis");
        Self {
            name: name.into(),
            tensor: tensor.into(),
            bound,
            labels,
            promoted,
        }
    }

    /// Column name of a promoted axis. Repeated labels get an axis suffix.
    pub fn column(&self, axis: usize) -> String {
        let l = &self.labels[axis];
        if self.labels.position(l) == Some(axis) {
            l.upper()
        } else {
            format!("{}_{axis}", l.upper())
        }
    }

    pub fn key_columns(&self) -> Vec<String> {
        self.promoted.iter().map(|a| self.column(a)).collect()
    }

    pub fn value_column(&self) -> String {
        format!("val{}", self.tensor)
    }

    pub fn block_bound(&self) -> Vec<usize> {
        self.bound.select(self.promoted.complement(self.bound.rank()))
    }

    /// Promoted axis of a key column.
    pub fn axis_of(&self, column: &str) -> Option<usize> {
        self.promoted.iter().find(|&a| self.column(a) == column)
    }

    fn value_type(&self) -> String {
        let b = self.block_bound();
        if b.is_empty() {
            "DOUBLE".into()
        } else {
            let dims: Vec<String> = b.iter().map(|x| x.to_string()).collect();
            format!("TENSOR[{}]", dims.join(", "))
        }
    }

    fn with(&self, name: String, promoted: AxisSet) -> Self {
        Self {
            name,
            promoted,
            ..self.clone()
        }
    }
}

/// `CREATE TABLE` statement for a relation.
pub fn emit_schema(schema: &RelationSchema) -> String {
    let mut cols: Vec<String> = schema
        .key_columns()
        .into_iter()
        .map(|c| format!("{c} INT"))
        .collect();
    cols.push(format!("{} {}", schema.value_column(), schema.value_type()));
    format!("CREATE TABLE {} ({});", schema.name, cols.join(", "))
}

/// Dense sub-computation run per joined tuple, over demoted labels only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub name: String,
    pub node: String,
    /// The kernel as a statement over demoted labels.
    pub einsum: String,
    /// Declarations plus statement; parses as a program.
    pub program: String,
    pub inputs: Vec<(String, Vec<usize>)>,
    pub output: Vec<usize>,
    pub op: OpSpec,
}

fn demoted_use(name: &str, labels: &LabelList, mask: AxisSet) -> TensorUse {
    TensorUse {
        tensor: name.to_string(),
        labels: LabelList::new(
            labels
                .iter()
                .enumerate()
                .filter(|(a, _)| !mask.contains(*a))
                .map(|(_, l)| l.clone())
                .collect(),
        ),
        hint: None,
    }
}

fn short_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .take(4)
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn kernel_spec(node: &EinsumNode, in_bounds: &[&BoundVector], out: AxisSet, ins: &[AxisSet]) -> KernelSpec {
    let mut names: Vec<String> = node.inputs.iter().map(|u| u.tensor.clone()).collect();
    if names.len() == 2 && names[0] == names[1] {
        names[1] = format!("{}_2", names[1]);
    }
    let inputs: Vec<TensorUse> = node
        .inputs
        .iter()
        .zip(&names)
        .zip(ins)
        .map(|((u, n), &m)| demoted_use(n, &u.labels, m))
        .collect();
    let out_use = demoted_use(&node.output.name, &node.output_labels, out);
    let out_bound = node.output.bound.select(out.complement(node.output.bound.rank()));
    let mut knode = node.clone();
    knode.output.bound = BoundVector::new(out_bound.clone());
    knode.output_labels = out_use.labels;
    knode.output_hint = None;
    knode.inputs = inputs;
    let empty = vec![AxisSet::EMPTY; knode.inputs.len()];
    let einsum = render_uclc(&knode, AxisSet::EMPTY, &empty);
    let in_blocks: Vec<(String, Vec<usize>)> = names
        .iter()
        .zip(in_bounds)
        .zip(ins)
        .map(|((n, b), &m)| (n.clone(), b.select(m.complement(b.rank()))))
        .collect();
    let mut program = String::new();
    for (n, b) in &in_blocks {
        let dims: Vec<String> = b.iter().map(|x| x.to_string()).collect();
        let _ = write!(program, "tensor {n}[{}]; ", dims.join(","));
    }
    program.push_str(&einsum);
    let name = format!(
        "k_{}_{}",
        node.output.name.to_ascii_lowercase(),
        short_hash(&program)
    );
    KernelSpec {
        name,
        node: node.output.name.clone(),
        einsum,
        program,
        inputs: in_blocks,
        output: out_bound,
        op: node.op,
    }
}

/// SQL for one node plus the kernel it calls.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSql {
    /// `INSERT INTO ... SELECT ...` with explicit join predicates.
    pub insert: String,
    /// The bare `SELECT` with explicit join predicates.
    pub select: String,
    /// The same query written with `NATURAL JOIN`.
    pub natural: String,
    pub kernel: KernelSpec,
}

/// Node query reading `inputs` (the relations in the layouts the node reads)
/// and writing `output`.
pub fn emit_node_sql(
    node: &EinsumNode,
    inputs: &[&RelationSchema],
    output: &RelationSchema,
) -> Result<NodeSql, CodegenError> {
    let ins: Vec<AxisSet> = inputs.iter().map(|s| s.promoted).collect();
    if inputs.len() != node.inputs.len() || !node_consistent(node, output.promoted, &ins) {
        return Err(CodegenError::Inconsistent(node.output.name.clone()));
    }
    let bounds: Vec<&BoundVector> = inputs.iter().map(|s| &s.bound).collect();
    let kernel = kernel_spec(node, &bounds, output.promoted, &ins);

    let mut aliases: Vec<String> = inputs.iter().map(|s| s.name.clone()).collect();
    if aliases.len() == 2 && aliases[0] == aliases[1] {
        aliases[1] = format!("{}_2", aliases[1]);
    }
    let from_item = |k: usize| {
        let s = inputs[k];
        let base = if node.op.sparse_safe() {
            s.name.clone()
        } else {
            format!("FILL ({})", s.name)
        };
        if base == aliases[k] {
            base
        } else {
            format!("{base} AS {}", aliases[k])
        }
    };
    let from: Vec<String> = (0..inputs.len()).map(from_item).collect();

    // First promoted occurrence of each label, as a qualified column.
    let mut first: BTreeMap<&Label, String> = BTreeMap::new();
    let mut preds: Vec<String> = Vec::new();
    for (k, (u, s)) in node.inputs.iter().zip(inputs).enumerate() {
        for a in s.promoted.iter() {
            let col = format!("{}.{}", aliases[k], s.column(a));
            match first.get(&u.labels[a]) {
                Some(prev) => preds.push(format!("{prev} = {col}")),
                None => {
                    first.insert(&u.labels[a], col);
                }
            }
        }
    }
    let keys: Vec<String> = output
        .promoted
        .iter()
        .map(|a| first[&node.output_labels[a]].clone())
        .collect();
    let args: Vec<String> = aliases
        .iter()
        .zip(inputs)
        .map(|(a, s)| format!("{a}.{}", s.value_column()))
        .collect();
    let call = format!("{} ({})", kernel.name, args.join(", "));
    let agg_promoted = node.agg_labels().iter().any(|l| first.contains_key(l));
    let value = if agg_promoted {
        format!("{} ({call})", node.op.aggregate.keyword().to_uppercase())
    } else {
        call
    };
    let mut items = keys.clone();
    items.push(format!("{value} AS {}", output.value_column()));

    let mut select = format!("SELECT {}\nFROM {}", items.join(", "), from.join(", "));
    if !preds.is_empty() {
        let _ = write!(select, "\nWHERE {}", preds.join(" AND "));
    }
    let group = agg_promoted && !keys.is_empty();
    if group {
        let _ = write!(select, "\nGROUP BY {}", keys.join(", "));
    }

    let mut natural = format!("SELECT {}\nFROM {}", items.join(", "), from.join(" NATURAL JOIN "));
    if group {
        let _ = write!(natural, "\nGROUP BY {}", keys.join(", "));
    }

    let mut cols = output.key_columns();
    cols.push(output.value_column());
    let insert = format!("INSERT INTO {} ({})\n{select};", output.name, cols.join(", "));
    Ok(NodeSql {
        insert,
        select,
        natural,
        kernel,
    })
}

/// Statements moving `src` into the layout of `dst`, plus the schemas of
/// every view they create. Empty when the layouts agree.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RepartitionSql {
    pub statements: Vec<String>,
    pub views: Vec<RelationSchema>,
}

/// Splits blocks along newly promoted axes through `ALLINTS`, then stacks
/// newly demoted axes back into blocks with one `STACK` view per axis.
/// `dst` names the columns it creates; `src` keeps its own.
pub fn emit_repartition_sql(src: &RelationSchema, dst: &RelationSchema) -> RepartitionSql {
    let mut out = RepartitionSql::default();
    if src.promoted == dst.promoted {
        return out;
    }
    let union = src.promoted.union(dst.promoted);
    let mut cur = src.clone();
    if union != src.promoted {
        let name = if union == dst.promoted {
            dst.name.clone()
        } else {
            format!("{}_int", dst.name)
        };
        let view = dst.with(name, union);
        out.statements.push(decompose_view(&cur, &view));
        out.views.push(view.clone());
        cur = view;
    }
    let stacked: Vec<usize> = union.difference(dst.promoted).iter().collect();
    for (n, &axis) in stacked.iter().enumerate() {
        let mut promoted = cur.promoted;
        promoted = promoted.difference(AxisSet::from_axes([axis]));
        let name = if n + 1 == stacked.len() {
            dst.name.clone()
        } else {
            format!("{}_s{}", dst.name, n + 1)
        };
        let view = dst.with(name, promoted);
        out.statements.push(stack_view(&cur, &view, axis));
        out.views.push(view.clone());
        cur = view;
    }
    out
}

fn view_head(view: &RelationSchema) -> String {
    let mut cols = view.key_columns();
    cols.push(view.value_column());
    format!("CREATE VIEW {} ({}) AS", view.name, cols.join(", "))
}

fn decompose_view(src: &RelationSchema, view: &RelationSchema) -> String {
    let new_axes: Vec<usize> = view.promoted.difference(src.promoted).iter().collect();
    let alias = |n: usize| {
        let a = if new_axes.len() == 1 {
            "A".to_string()
        } else {
            format!("A{n}")
        };
        if a == src.name {
            format!("{a}_idx")
        } else {
            a
        }
    };
    let mut items = Vec::new();
    for a in view.promoted.iter() {
        items.push(match new_axes.iter().position(|&x| x == a) {
            Some(n) => format!("{}.index", alias(n)),
            None => format!("{}.{}", src.name, src.column(a)),
        });
    }
    let slice: Vec<String> = src
        .promoted
        .complement(src.bound.rank())
        .iter()
        .map(|a| match new_axes.iter().position(|&x| x == a) {
            Some(n) => format!("{}.index", alias(n)),
            None => ":".into(),
        })
        .collect();
    items.push(format!("{}.{}[{}]", src.name, src.value_column(), slice.join(", ")));
    let mut from: Vec<String> = new_axes
        .iter()
        .enumerate()
        .map(|(n, &a)| format!("ALLINTS (0, {}) AS {}", src.bound[a], alias(n)))
        .collect();
    from.push(src.name.clone());
    format!(
        "{}\nSELECT {}\nFROM {};",
        view_head(view),
        items.join(", "),
        from.join(", ")
    )
}

fn stack_view(src: &RelationSchema, view: &RelationSchema, axis: usize) -> String {
    let keys: Vec<String> = view
        .promoted
        .iter()
        .map(|a| format!("{}.{}", src.name, src.column(a)))
        .collect();
    let dim = view
        .promoted
        .complement(view.bound.rank())
        .iter()
        .position(|a| a == axis)
        .expect("stacked axis is demoted in the view");
    let mut items = keys.clone();
    items.push(format!(
        "STACK ({}.{}, {}.{}, {dim}, {})",
        src.name,
        src.value_column(),
        src.name,
        src.column(axis),
        src.bound[axis]
    ));
    let mut s = format!("{}\nSELECT {}\nFROM {}", view_head(view), items.join(", "), src.name);
    if !keys.is_empty() {
        let _ = write!(s, "\nGROUP BY {}", keys.join(", "));
    }
    s.push(';');
    s
}

/// Everything the script references, as a structured sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kernels: Vec<KernelSpec>,
    pub relations: Vec<RelationSchema>,
    /// Relations holding source data, loaded before the script runs.
    pub sources: Vec<String>,
}

impl Manifest {
    pub fn kernel(&self, name: &str) -> Option<&KernelSpec> {
        self.kernels.iter().find(|k| k.name == name)
    }

    pub fn relation(&self, name: &str) -> Option<&RelationSchema> {
        self.relations.iter().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledProgram {
    pub script: String,
    pub manifest: Manifest,
}

fn stored_labels(p: &EinsumProgram, v: crate::ir::VertexId) -> LabelList {
    if let Some(n) = p.node(v) {
        return n.output_labels.clone();
    }
    for (c, slot) in p.consumers(v) {
        let node = p.node(c).expect("consumer is a node");
        return node.inputs[slot.index()].labels.clone();
    }
    let rank = p.decl(v).rank();
    LabelList::new(
        (0..rank)
            .map(|a| Label::new(&format!("d{a}")).expect("valid label"))
            .collect(),
    )
}

fn view_name(p: &EinsumProgram, np: &NodePlan, k: usize) -> String {
    let ip = &np.inputs[k];
    let base = format!("{}_to_{}", p.name(ip.producer), np.output_name);
    let self_join = np.inputs.len() == 2 && np.inputs[0].producer == np.inputs[1].producer;
    if self_join && np.inputs[0].promoted != np.inputs[1].promoted {
        format!("{base}_{k}")
    } else {
        base
    }
}

/// Full script for a plan: DDL for every stored relation, then per node in
/// topological order its repartition views and its query.
pub fn emit_program(p: &EinsumProgram, plan: &Plan) -> Result<CompiledProgram, CodegenError> {
    validate_plan(p, plan)?;
    let stored: Vec<RelationSchema> = (0..p.vertex_count())
        .map(|v| {
            let v = crate::ir::VertexId(v);
            let d = p.decl(v);
            RelationSchema::new(
                d.name.clone(),
                d.name.clone(),
                d.bound.clone(),
                stored_labels(p, v),
                plan.layouts[v.0],
            )
        })
        .collect();
    let mut script = String::new();
    let mut relations = stored.clone();
    let mut kernels = Vec::new();
    script.push_str("-- relations\n");
    for s in &stored {
        let _ = writeln!(script, "{}", emit_schema(s));
    }
    for &v in p.topo_order() {
        let Some(node) = p.node(v) else { continue };
        let np = plan.node(v).expect("validated plan");
        let _ = writeln!(
            script,
            "\n-- {}",
            render_uclc(node, np.output, &np.input_masks())
        );
        let mut reads: Vec<RelationSchema> = Vec::new();
        for (k, ip) in np.inputs.iter().enumerate() {
            let src = &stored[ip.producer.0];
            if !ip.needs_repartition() {
                reads.push(src.clone());
                continue;
            }
            let dst = RelationSchema::new(
                view_name(p, np, k),
                src.tensor.clone(),
                src.bound.clone(),
                node.inputs[k].labels.clone(),
                ip.promoted,
            );
            let already = k == 1 && reads.first().is_some_and(|r| r.name == dst.name);
            if !already {
                let rep = emit_repartition_sql(src, &dst);
                for st in &rep.statements {
                    let _ = writeln!(script, "{st}");
                }
                relations.extend(rep.views);
            }
            reads.push(dst);
        }
        let refs: Vec<&RelationSchema> = reads.iter().collect();
        let sql = emit_node_sql(node, &refs, &stored[v.0])?;
        let _ = writeln!(script, "{}", sql.insert);
        script.push_str("-- natural join form:\n");
        for line in sql.natural.lines() {
            let _ = writeln!(script, "--   {line}");
        }
        kernels.push(sql.kernel);
    }
    Ok(CompiledProgram {
        script,
        manifest: Manifest {
            kernels,
            relations,
            sources: p.sources().iter().map(|d| d.name.clone()).collect(),
        },
    })
}
