use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{ExecError, OpCounter};
use crate::ir::{AxisSet, BoundVector, TensorDecl};
use crate::stats::{flatten, unflatten, SparseTensor};

/// A decomposed tensor: promoted coordinates map to dense blocks over the
/// demoted axes (row-major, axis order). Absent keys mean all-zero blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRelation {
    pub name: String,
    pub bound: BoundVector,
    pub promoted: AxisSet,
    rows: BTreeMap<Vec<usize>, Vec<f64>>,
    /// All-zero blocks are dropped. False for results of operators that do
    /// not keep zero at zero, whose relations are kept dense.
    pub prunable: bool,
}

impl TensorRelation {
    pub fn new(name: impl Into<String>, bound: BoundVector, promoted: AxisSet, prunable: bool) -> Self {
        assert!(promoted.fits_rank(bound.rank()), "promoted axes within rank");
        Self {
            name: name.into(),
            bound,
            promoted,
            rows: BTreeMap::new(),
            prunable,
        }
    }

    pub fn demoted(&self) -> AxisSet {
        self.promoted.complement(self.bound.rank())
    }

    pub fn key_bound(&self) -> Vec<usize> {
        self.bound.select(self.promoted)
    }

    pub fn block_bound(&self) -> Vec<usize> {
        self.bound.select(self.demoted())
    }

    pub fn block_len(&self) -> usize {
        self.bound.volume_of(self.demoted())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&Vec<usize>, &Vec<f64>)> {
        self.rows.iter()
    }

    pub fn get(&self, key: &[usize]) -> Option<&[f64]> {
        self.rows.get(key).map(Vec::as_slice)
    }

    /// Inserts a block, dropping it when prunable and entirely zero.
    pub fn insert(&mut self, key: Vec<usize>, block: Vec<f64>) -> Result<(), ExecError> {
        if block.len() != self.block_len() || key.len() != self.promoted.len() {
            return Err(ExecError::Shape {
                tensor: self.name.clone(),
                message: format!(
                    "row {key:?} with {} values, expected key of {} and block of {}",
                    block.len(),
                    self.promoted.len(),
                    self.block_len()
                ),
            });
        }
        if self.prunable && block.iter().all(|&x| x == 0.0) {
            self.rows.remove(&key);
        } else {
            self.rows.insert(key, block);
        }
        Ok(())
    }

    /// Adds explicit zero blocks for every missing key.
    pub fn fill(&mut self) {
        let kb = self.key_bound();
        let n: usize = kb.iter().product();
        let len = self.block_len();
        for flat in 0..n {
            self.rows
                .entry(unflatten(flat, &kb))
                .or_insert_with(|| vec![0.0; len]);
        }
    }

    fn split(&self, index: &[usize]) -> (Vec<usize>, usize) {
        let key = self.promoted.iter().map(|a| index[a]).collect();
        let inner: Vec<usize> = self.demoted().iter().map(|a| index[a]).collect();
        (key, flatten(&inner, &self.block_bound()))
    }

    /// Element at a full coordinate; zero when the key is absent.
    pub fn lookup(&self, index: &[usize]) -> Result<f64, ExecError> {
        let ok = index.len() == self.bound.rank()
            && index.iter().zip(self.bound.as_slice()).all(|(i, b)| i < b);
        if !ok {
            return Err(ExecError::OutOfBounds {
                tensor: self.name.clone(),
                index: index.to_vec(),
            });
        }
        let (key, offset) = self.split(index);
        Ok(self.rows.get(&key).map_or(0.0, |b| b[offset]))
    }

    /// Row-major dense values.
    pub fn densify(&self) -> Vec<f64> {
        let bound = self.bound.as_slice();
        let mut out = vec![0.0; self.bound.volume()];
        let demoted: Vec<usize> = self.demoted().iter().collect();
        let bb = self.block_bound();
        for (key, block) in &self.rows {
            let mut index = vec![0; bound.len()];
            for (a, &k) in self.promoted.iter().zip(key) {
                index[a] = k;
            }
            for (off, &v) in block.iter().enumerate() {
                for (&a, i) in demoted.iter().zip(unflatten(off, &bb)) {
                    index[a] = i;
                }
                out[flatten(&index, bound)] = v;
            }
        }
        out
    }

    pub fn to_sparse(&self) -> SparseTensor {
        SparseTensor::from_dense(
            TensorDecl {
                name: self.name.clone(),
                bound: self.bound.clone(),
            },
            &self.densify(),
        )
    }

    /// Key tuple, then the row-major block, one row per line.
    pub fn to_block_text(&self) -> String {
        let axes: Vec<String> = self.promoted.iter().map(|a| a.to_string()).collect();
        let mut s = format!(
            "{} bound {:?} promoted [{}] rows {}\n",
            self.name,
            self.bound.as_slice(),
            axes.join(","),
            self.rows.len()
        );
        for (key, block) in &self.rows {
            let k: Vec<String> = key.iter().map(|x| x.to_string()).collect();
            let b: Vec<String> = block.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(s, "{} | {}", k.join(" "), b.join(" "));
        }
        s
    }
}

/// Groups a tensor's nonzeros by promoted coordinates into dense blocks.
pub fn decompose_tensor(t: &SparseTensor, promoted: AxisSet) -> TensorRelation {
    let mut rel = TensorRelation::new(t.decl.name.clone(), t.decl.bound.clone(), promoted, true);
    let len = rel.block_len();
    let bb = rel.block_bound();
    for (index, value) in t.entries() {
        let (key, _) = rel.split(index);
        let inner: Vec<usize> = rel.demoted().iter().map(|a| index[a]).collect();
        let off = flatten(&inner, &bb);
        rel.rows.entry(key).or_insert_with(|| vec![0.0; len])[off] = *value;
    }
    rel
}

/// Moves a relation to another promoted set: split blocks along newly
/// promoted axes, then stack along newly demoted ones. Either step is
/// skipped when one set contains the other; equal sets return the input.
pub fn exec_repartition(rel: TensorRelation, to: AxisSet, counter: &mut OpCounter) -> TensorRelation {
    if rel.promoted == to {
        return rel;
    }
    let union = rel.promoted.union(to);
    let mid = if union == rel.promoted {
        rel
    } else {
        let out = split_step(&rel, union);
        counter.count_tuples("decompose", out.len() as u64);
        out
    };
    if union == to {
        return mid;
    }
    let out = stack_step(&mid, to);
    counter.count_tuples("recompose", mid.len() as u64);
    out
}

/// Index of each axis of `sub` within the ordered axis list of `sup`.
fn positions(sub: AxisSet, sup: AxisSet) -> Vec<usize> {
    let axes: Vec<usize> = sup.iter().collect();
    sub.iter()
        .map(|a| axes.iter().position(|&x| x == a).expect("subset"))
        .collect()
}

fn split_step(rel: &TensorRelation, union: AxisSet) -> TensorRelation {
    let mut out = TensorRelation::new(rel.name.clone(), rel.bound.clone(), union, rel.prunable);
    let old_demoted = rel.demoted();
    let old_bb = rel.block_bound();
    let new_keys = union.difference(rel.promoted);
    let nk_bound = rel.bound.select(new_keys);
    let nk_count: usize = nk_bound.iter().product();
    let new_len = out.block_len();
    // Position of each old block axis inside the new key or the new block.
    let in_key = positions(new_keys, old_demoted);
    let in_block = positions(out.demoted(), old_demoted);
    let old_key_pos = positions(rel.promoted, union);
    let new_key_pos = positions(new_keys, union);
    let new_bb = out.block_bound();
    for (key, block) in &rel.rows {
        for nk in 0..nk_count {
            let nk_idx = unflatten(nk, &nk_bound);
            let mut sub = vec![0.0; new_len];
            let mut old_idx = vec![0; old_bb.len()];
            for (off, slot) in sub.iter_mut().enumerate() {
                for (&p, v) in in_block.iter().zip(unflatten(off, &new_bb)) {
                    old_idx[p] = v;
                }
                for (&p, &v) in in_key.iter().zip(&nk_idx) {
                    old_idx[p] = v;
                }
                *slot = block[flatten(&old_idx, &old_bb)];
            }
            if rel.prunable && sub.iter().all(|&x| x == 0.0) {
                continue;
            }
            let mut full = vec![0; union.len()];
            for (&p, &v) in old_key_pos.iter().zip(key) {
                full[p] = v;
            }
            for (&p, &v) in new_key_pos.iter().zip(&nk_idx) {
                full[p] = v;
            }
            out.rows.insert(full, sub);
        }
    }
    out
}

fn stack_step(rel: &TensorRelation, to: AxisSet) -> TensorRelation {
    let mut out = TensorRelation::new(rel.name.clone(), rel.bound.clone(), to, rel.prunable);
    let keep_pos = positions(to, rel.promoted);
    let moved = rel.promoted.difference(to);
    let moved_pos = positions(moved, rel.promoted);
    let out_demoted = out.demoted();
    let out_bb = out.block_bound();
    let len = out.block_len();
    // Position of each old block axis and each moved key axis in the new block.
    let from_block = positions(rel.demoted(), out_demoted);
    let from_key = positions(moved, out_demoted);
    let old_bb = rel.block_bound();
    for (key, block) in &rel.rows {
        let new_key: Vec<usize> = keep_pos.iter().map(|&p| key[p]).collect();
        let target = out.rows.entry(new_key).or_insert_with(|| vec![0.0; len]);
        let mut idx = vec![0; out_bb.len()];
        for (&p, &k) in from_key.iter().zip(moved_pos.iter().map(|&m| &key[m])) {
            idx[p] = k;
        }
        for (off, &v) in block.iter().enumerate() {
            for (&p, i) in from_block.iter().zip(unflatten(off, &old_bb)) {
                idx[p] = i;
            }
            target[flatten(&idx, &out_bb)] = v;
        }
    }
    out
}
