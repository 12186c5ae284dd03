use std::collections::BTreeMap;

use super::{ExecError, OpCounter};
use crate::ir::{Aggregate, Combine, EinsumNode, EinsumProgram, Label, TensorDecl};
use crate::stats::{flatten, unflatten, SparseTensor};

/// Largest tensor, and largest per-node loop nest, the oracle will touch.
pub const DENSE_LIMIT: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    pub decl: TensorDecl,
    /// Row-major.
    pub values: Vec<f64>,
}

impl DenseTensor {
    pub fn get(&self, index: &[usize]) -> f64 {
        self.values[flatten(index, self.decl.bound.as_slice())]
    }

    pub fn to_sparse(&self) -> SparseTensor {
        SparseTensor::from_dense(self.decl.clone(), &self.values)
    }
}

fn too_large(name: &str, cells: usize) -> ExecError {
    ExecError::TooLarge {
        tensor: name.to_string(),
        cells,
        limit: DENSE_LIMIT,
    }
}

fn eval_node(
    node: &EinsumNode,
    inputs: &[&DenseTensor],
    counter: &mut OpCounter,
) -> Result<DenseTensor, ExecError> {
    let out_bound = node.output.bound.as_slice();
    let agg = node.agg_labels();
    let agg_bound: Vec<usize> = agg
        .iter()
        .map(|l| {
            node.label_bound(l, &inputs.iter().map(|t| &t.decl.bound).collect::<Vec<_>>())
                .expect("bound")
        })
        .collect();
    let out_cells = node.output.bound.volume();
    let agg_cells: usize = agg_bound.iter().product();
    if out_cells.saturating_mul(agg_cells) > DENSE_LIMIT {
        return Err(too_large(&node.output.name, out_cells.saturating_mul(agg_cells)));
    }
    let op = node.op;
    let binary = node.is_binary();
    let mut values = vec![0.0; out_cells];
    let value_of = |env: &dyn Fn(&Label) -> usize, k: usize| -> f64 {
        let idx: Vec<usize> = node.inputs[k].labels.iter().map(env).collect();
        inputs[k].get(&idx)
    };
    for (flat, slot) in values.iter_mut().enumerate() {
        let oidx = unflatten(flat, out_bound);
        // Repeated output labels address only the diagonal.
        let mut fixed: Vec<(&Label, usize)> = Vec::new();
        let mut diagonal = true;
        for (l, &i) in node.output_labels.iter().zip(&oidx) {
            match fixed.iter().find(|(x, _)| *x == l) {
                Some(&(_, j)) if j != i => diagonal = false,
                Some(_) => {}
                None => fixed.push((l, i)),
            }
        }
        if !diagonal {
            continue;
        }
        let mut acc: Option<f64> = None;
        for a in 0..agg_cells {
            let aidx = unflatten(a, &agg_bound);
            let env = |l: &Label| -> usize {
                fixed
                    .iter()
                    .find(|(x, _)| *x == l)
                    .map(|&(_, i)| i)
                    .unwrap_or_else(|| aidx[agg.iter().position(|x| x == l).expect("label")])
            };
            let x = if binary {
                let r = op.combine.apply(value_of(&env, 0), value_of(&env, 1));
                match op.combine {
                    Combine::Multiply | Combine::Divide => counter.scalar_multiplies += 1,
                    Combine::Add | Combine::Subtract => counter.scalar_adds += 1,
                }
                r
            } else {
                value_of(&env, 0)
            };
            counter.scalar_multiplies += op.unary.multiplies();
            let x = op.unary.apply(x);
            acc = Some(match acc {
                None => x,
                Some(prev) => {
                    if op.aggregate == Aggregate::Sum {
                        counter.scalar_adds += 1;
                    }
                    op.aggregate.fold(prev, x)
                }
            });
        }
        *slot = acc.expect("nonempty loop");
    }
    Ok(DenseTensor {
        decl: node.output.clone(),
        values,
    })
}

/// Reference evaluation over full dense arrays, every tensor of the program.
pub fn dense_eval(
    p: &EinsumProgram,
    inputs: &BTreeMap<String, SparseTensor>,
    counter: &mut OpCounter,
) -> Result<BTreeMap<String, DenseTensor>, ExecError> {
    let mut vals: Vec<Option<DenseTensor>> = vec![None; p.vertex_count()];
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
        if decl.bound.volume() > DENSE_LIMIT {
            return Err(too_large(&decl.name, decl.bound.volume()));
        }
        vals[v] = Some(DenseTensor {
            decl: decl.clone(),
            values: t.to_dense(),
        });
    }
    for &v in p.topo_order() {
        let Some(node) = p.node(v) else { continue };
        let ins: Vec<&DenseTensor> = node
            .slots()
            .iter()
            .map(|&s| vals[p.producer(v, s).0].as_ref().expect("topological order"))
            .collect();
        vals[v.0] = Some(eval_node(node, &ins, counter)?);
    }
    Ok(vals
        .into_iter()
        .map(|t| {
            let t = t.expect("every vertex evaluated");
            (t.decl.name.clone(), t)
        })
        .collect())
}
