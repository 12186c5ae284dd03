use std::borrow::Cow;
use std::collections::BTreeMap;

use super::{ExecError, OpCounter, TensorRelation};
use crate::ir::{Aggregate, AxisSet, Combine, EinsumNode, Label, LabelList};

/// Per-label facts for one node under one decomposition.
struct LabelInfo {
    labels: Vec<Label>,
    bound: Vec<usize>,
    promoted: Vec<bool>,
}

impl LabelInfo {
    fn new(node: &EinsumNode, inputs: &[&TensorRelation], out: AxisSet) -> Result<Self, ExecError> {
        let labels = node.all_labels();
        let mut bound = vec![0; labels.len()];
        let mut promoted: Vec<Option<bool>> = vec![None; labels.len()];
        let mut uses: Vec<(&LabelList, AxisSet, &[usize])> = inputs
            .iter()
            .zip(&node.inputs)
            .map(|(r, u)| (&u.labels, r.promoted, r.bound.as_slice()))
            .collect();
        uses.push((&node.output_labels, out, node.output.bound.as_slice()));
        for (list, mask, b) in uses {
            for (axis, l) in list.iter().enumerate() {
                let i = labels.iter().position(|x| x == l).ok_or_else(|| ExecError::Shape {
                    tensor: node.output.name.clone(),
                    message: format!("label {l} not bound by any input"),
                })?;
                if bound[i] == 0 {
                    bound[i] = b[axis];
                } else if bound[i] != b[axis] {
                    return Err(ExecError::Shape {
                        tensor: node.output.name.clone(),
                        message: format!("label {l} has bounds {} and {}", bound[i], b[axis]),
                    });
                }
                let p = mask.contains(axis);
                match promoted[i] {
                    None => promoted[i] = Some(p),
                    Some(q) if q != p => {
                        return Err(ExecError::Inconsistent {
                            node: node.output.name.clone(),
                            label: l.to_string(),
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(Self {
            labels,
            bound,
            promoted: promoted.into_iter().map(|p| p.unwrap_or(false)).collect(),
        })
    }

    fn index(&self, l: &Label) -> usize {
        self.labels.iter().position(|x| x == l).expect("known label")
    }

    /// Label index of each promoted axis of a use.
    fn key_labels(&self, list: &LabelList, mask: AxisSet) -> Vec<usize> {
        mask.iter().map(|a| self.index(&list[a])).collect()
    }

    /// Label stride for a block laid out over the demoted axes of a use.
    fn strides(&self, list: &LabelList, mask: AxisSet, bound: &[usize]) -> Vec<usize> {
        let demoted: Vec<usize> = (0..list.len()).filter(|&a| !mask.contains(a)).collect();
        let mut out = vec![0; self.labels.len()];
        let mut s = 1;
        for &a in demoted.iter().rev() {
            out[self.index(&list[a])] += s;
            s *= bound[a];
        }
        out
    }
}

/// Fills a per-label assignment from a key. `None` when a repeated label
/// takes two different values.
fn assign(into: &mut [Option<usize>], key: &[usize], key_labels: &[usize]) -> bool {
    for (&l, &k) in key_labels.iter().zip(key) {
        match into[l] {
            Some(x) if x != k => return false,
            _ => into[l] = Some(k),
        }
    }
    true
}

/// Dense loop over demoted labels for one matched tuple.
struct Kernel {
    /// (left, right, out) offsets of each output cell.
    cells: Vec<[usize; 3]>,
    /// (left, right) offsets of each reduced combination.
    reduced: Vec<[usize; 2]>,
    out_len: usize,
    binary: bool,
    node: EinsumNode,
}

fn offsets(labels: &[usize], bound: &[usize], strides: &[&[usize]]) -> Vec<Vec<usize>> {
    let n: usize = labels.iter().map(|&l| bound[l]).product();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0; labels.len()];
    for _ in 0..n {
        out.push(
            strides
                .iter()
                .map(|s| labels.iter().zip(&idx).map(|(&l, &i)| s[l] * i).sum())
                .collect(),
        );
        for d in (0..labels.len()).rev() {
            idx[d] += 1;
            if idx[d] < bound[labels[d]] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

impl Kernel {
    fn new(node: &EinsumNode, info: &LabelInfo, inputs: &[&TensorRelation], out: AxisSet) -> Self {
        let mut cell_labels: Vec<usize> = Vec::new();
        for l in node.output_labels.iter() {
            let i = info.index(l);
            if !info.promoted[i] && !cell_labels.contains(&i) {
                cell_labels.push(i);
            }
        }
        let reduced_labels: Vec<usize> = node
            .agg_labels()
            .iter()
            .map(|l| info.index(l))
            .filter(|&i| !info.promoted[i])
            .collect();
        let zero = vec![0; info.labels.len()];
        let s: Vec<Vec<usize>> = inputs
            .iter()
            .zip(&node.inputs)
            .map(|(r, u)| info.strides(&u.labels, r.promoted, r.bound.as_slice()))
            .collect();
        let right = s.get(1).unwrap_or(&zero);
        let so = info.strides(&node.output_labels, out, node.output.bound.as_slice());
        let cells = offsets(&cell_labels, &info.bound, &[&s[0], right, &so])
            .into_iter()
            .map(|v| [v[0], v[1], v[2]])
            .collect();
        let reduced = offsets(&reduced_labels, &info.bound, &[&s[0], right])
            .into_iter()
            .map(|v| [v[0], v[1]])
            .collect();
        Self {
            cells,
            reduced,
            out_len: node.output.bound.volume_of(out.complement(node.output.bound.rank())),
            binary: node.is_binary(),
            node: node.clone(),
        }
    }

    fn run(&self, u: &[f64], v: &[f64], counter: &mut OpCounter) -> Vec<f64> {
        let op = self.node.op;
        let mut out = vec![0.0; self.out_len];
        let (mut muls, mut adds) = (0u64, 0u64);
        let per_value_mul = u64::from(
            self.binary && matches!(op.combine, Combine::Multiply | Combine::Divide),
        ) + op.unary.multiplies();
        let per_value_add =
            u64::from(self.binary && matches!(op.combine, Combine::Add | Combine::Subtract));
        for &[cu, cv, co] in &self.cells {
            let mut acc: Option<f64> = None;
            for &[ru, rv] in &self.reduced {
                let a = u[cu + ru];
                let x = if self.binary {
                    op.combine.apply(a, v[cv + rv])
                } else {
                    a
                };
                let x = op.unary.apply(x);
                acc = Some(match acc {
                    None => x,
                    Some(prev) => {
                        adds += u64::from(op.aggregate == Aggregate::Sum);
                        op.aggregate.fold(prev, x)
                    }
                });
            }
            muls += per_value_mul * self.reduced.len() as u64;
            adds += per_value_add * self.reduced.len() as u64;
            out[co] = acc.expect("at least one reduced combination");
        }
        counter.scalar_multiplies += muls;
        counter.scalar_adds += adds;
        out
    }
}

/// Runs one node relationally: join on shared promoted labels, dense kernel
/// per matched pair, then group by promoted output labels.
///
/// Inputs must already be in the layouts this node reads.
pub fn exec_node(
    node: &EinsumNode,
    inputs: &[&TensorRelation],
    out: AxisSet,
    counter: &mut OpCounter,
) -> Result<TensorRelation, ExecError> {
    if inputs.len() != node.inputs.len() {
        return Err(ExecError::Shape {
            tensor: node.output.name.clone(),
            message: format!("{} inputs, expected {}", inputs.len(), node.inputs.len()),
        });
    }
    for (r, u) in inputs.iter().zip(&node.inputs) {
        if r.bound.rank() != u.labels.len() {
            return Err(ExecError::Shape {
                tensor: r.name.clone(),
                message: format!("rank {}, used with {} labels", r.bound.rank(), u.labels.len()),
            });
        }
    }
    let info = LabelInfo::new(node, inputs, out)?;
    let safe = node.op.sparse_safe();
    // Operators that do not keep zero at zero must see every tuple.
    let filled: Vec<Cow<'_, TensorRelation>> = inputs
        .iter()
        .map(|&r| {
            if safe {
                Cow::Borrowed(r)
            } else {
                let mut r = r.clone();
                r.fill();
                Cow::Owned(r)
            }
        })
        .collect();
    let kernel = Kernel::new(node, &info, inputs, out);
    let keys: Vec<Vec<usize>> = filled
        .iter()
        .zip(&node.inputs)
        .map(|(r, u)| info.key_labels(&u.labels, r.promoted))
        .collect();
    let out_keys = info.key_labels(&node.output_labels, out);
    let n = info.labels.len();

    let mut groups: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    let mut pairs = 0u64;
    let mut emit = |a: &[Option<usize>], block: Vec<f64>, counter: &mut OpCounter| {
        let key: Vec<usize> = out_keys.iter().map(|&l| a[l].expect("bound")).collect();
        match groups.get_mut(&key) {
            Some(acc) => {
                if node.op.aggregate == Aggregate::Sum {
                    counter.scalar_adds += block.len() as u64;
                }
                for (x, y) in acc.iter_mut().zip(block) {
                    *x = node.op.aggregate.fold(*x, y);
                }
            }
            None => {
                groups.insert(key, block);
            }
        }
    };

    if node.is_binary() {
        let shared: Vec<usize> = (0..n)
            .filter(|&l| info.promoted[l] && keys[0].contains(&l) && keys[1].contains(&l))
            .collect();
        let mut index: BTreeMap<Vec<usize>, Vec<(Vec<Option<usize>>, &[f64])>> = BTreeMap::new();
        for (key, block) in filled[1].rows() {
            let mut a = vec![None; n];
            if !assign(&mut a, key, &keys[1]) {
                continue;
            }
            let s: Vec<usize> = shared.iter().map(|&l| a[l].expect("bound")).collect();
            index.entry(s).or_default().push((a, block));
        }
        for (key, block) in filled[0].rows() {
            let mut a = vec![None; n];
            if !assign(&mut a, key, &keys[0]) {
                continue;
            }
            let s: Vec<usize> = shared.iter().map(|&l| a[l].expect("bound")).collect();
            let Some(matches) = index.get(&s) else { continue };
            for (b, right) in matches {
                let mut full = a.clone();
                for l in 0..n {
                    if full[l].is_none() {
                        full[l] = b[l];
                    }
                }
                pairs += 1;
                let out_block = kernel.run(block, right, counter);
                emit(&full, out_block, counter);
            }
        }
    } else {
        for (key, block) in filled[0].rows() {
            let mut a = vec![None; n];
            if !assign(&mut a, key, &keys[0]) {
                continue;
            }
            pairs += 1;
            let out_block = kernel.run(block, &[], counter);
            emit(&a, out_block, counter);
        }
    }

    let mut rel = TensorRelation::new(
        node.output.name.clone(),
        node.output.bound.clone(),
        out,
        safe,
    );
    counter.count_tuples("join", pairs);
    counter.count_tuples("aggregate", groups.len() as u64);
    for (k, b) in groups {
        rel.insert(k, b)?;
    }
    Ok(rel)
}
