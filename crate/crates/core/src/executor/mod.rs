//! In-memory tensor-relational engine and the dense reference evaluator.

mod dense;
mod kernel;
mod relation;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

pub use dense::{dense_eval, DenseTensor, DENSE_LIMIT};
pub use kernel::exec_node;
pub use relation::{decompose_tensor, exec_repartition, TensorRelation};

use crate::ir::EinsumProgram;
use crate::optimizer::{validate_plan, Plan, PlanError};
use crate::stats::SparseTensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("no data for source tensor `{0}`")]
    MissingInput(String),
    #[error("shape mismatch in `{tensor}`: {message}")]
    Shape { tensor: String, message: String },
    #[error("index {index:?} out of bounds for `{tensor}`")]
    OutOfBounds { tensor: String, index: Vec<usize> },
    #[error("label `{label}` is promoted in some uses and demoted in others at `{node}`")]
    Inconsistent { node: String, label: String },
    #[error("`{tensor}` needs {cells} dense cells, limit is {limit}")]
    TooLarge {
        tensor: String,
        cells: usize,
        limit: usize,
    },
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Work done by the engine.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct OpCounter {
    pub scalar_multiplies: u64,
    pub scalar_adds: u64,
    /// Tuples produced, per operator.
    pub tuples: BTreeMap<String, u64>,
}

impl OpCounter {
    pub fn count_tuples(&mut self, operator: &str, n: u64) {
        *self.tuples.entry(operator.to_string()).or_default() += n;
    }

    pub fn tuples_of(&self, operator: &str) -> u64 {
        self.tuples.get(operator).copied().unwrap_or(0)
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// Executes a plan: decomposes the sources, then runs each node in
/// topological order, repartitioning inputs where the plan says so.
/// Returns every tensor of the program by name.
pub fn exec_plan(
    p: &EinsumProgram,
    plan: &Plan,
    inputs: &BTreeMap<String, SparseTensor>,
    counter: &mut OpCounter,
) -> Result<BTreeMap<String, TensorRelation>, ExecError> {
    validate_plan(p, plan)?;
    let mut rels: Vec<Option<TensorRelation>> = vec![None; p.vertex_count()];
    for (v, decl) in p.sources().iter().enumerate() {
        let t = inputs
            .get(&decl.name)
            .ok_or_else(|| ExecError::MissingInput(decl.name.clone()))?;
        if t.decl != *decl {
            return Err(ExecError::Shape {
                tensor: decl.name.clone(),
                message: format!(
                    "data has bound {:?}, declared {:?}",
                    t.decl.bound.as_slice(),
                    decl.bound.as_slice()
                ),
            });
        }
        rels[v] = Some(decompose_tensor(t, plan.layouts[v]));
    }
    for &v in p.topo_order() {
        let Some(node) = p.node(v) else { continue };
        let np = plan.node(v).expect("validated plan covers every node");
        let mut ins = Vec::with_capacity(np.inputs.len());
        for ip in &np.inputs {
            let stored = rels[ip.producer.0].as_ref().expect("topological order");
            ins.push(if ip.needs_repartition() {
                exec_repartition(stored.clone(), ip.promoted, counter)
            } else {
                stored.clone()
            });
        }
        let refs: Vec<&TensorRelation> = ins.iter().collect();
        rels[v.0] = Some(exec_node(node, &refs, np.output, counter)?);
    }
    Ok(rels
        .into_iter()
        .map(|r| {
            let r = r.expect("every vertex executed");
            (r.name.clone(), r)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::AxisSet;
    use crate::fixtures;

    fn ax(a: &[usize]) -> AxisSet {
        AxisSet::from_axes(a.iter().copied())
    }

    #[test]
    fn worked_matmul_node() {
        let p = fixtures::matmul_program();
        let (u, v) = fixtures::matmul_inputs();
        let node = &p.nodes()[0];
        let ub = decompose_tensor(&u, ax(&[0]));
        let vb = decompose_tensor(&v, ax(&[1]));
        let mut c = OpCounter::default();
        let w = exec_node(node, &[&ub, &vb], ax(&[0, 1]), &mut c).unwrap();
        let rows: Vec<(Vec<usize>, f64)> = w.rows().map(|(k, b)| (k.clone(), b[0])).collect();
        let rounded: Vec<(Vec<usize>, f64)> = rows
            .iter()
            .map(|(k, x)| (k.clone(), (x * 100.0).round() / 100.0))
            .collect();
        assert_eq!(
            rounded,
            vec![
                (vec![0, 0], 7.0),
                (vec![0, 2], 7.55),
                (vec![2, 0], 4.48),
                (vec![2, 2], 3.14)
            ]
        );
        assert_eq!(c.scalar_multiplies, 16);
        assert_eq!(c.tuples_of("join"), 4);

        let mut d = OpCounter::default();
        let inputs = fixtures::load("matmul", 0).unwrap().inputs;
        let dense = dense_eval(&p, &inputs, &mut d).unwrap();
        assert_eq!(d.scalar_multiplies, 64);
        assert_eq!(dense["W"].values, w.densify());
    }

    #[test]
    fn inconsistent_layout_rejected() {
        let p = fixtures::matmul_program();
        let (u, v) = fixtures::matmul_inputs();
        let ub = decompose_tensor(&u, ax(&[1]));
        let vb = decompose_tensor(&v, ax(&[]));
        let err = exec_node(&p.nodes()[0], &[&ub, &vb], ax(&[]), &mut OpCounter::default());
        assert!(matches!(err, Err(ExecError::Inconsistent { .. })));
    }

    #[test]
    fn missing_input() {
        let f = fixtures::load("matmul", 0).unwrap();
        let mut inputs = f.inputs.clone();
        inputs.remove("V");
        let r = dense_eval(&f.program, &inputs, &mut OpCounter::default());
        assert_eq!(r.unwrap_err(), ExecError::MissingInput("V".into()));
    }
}
