//! Sparsity statistics: nonzero counts, per-axis distinct slice counts, and
//! the tuple-count estimator for promoted label sets.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{AxisSet, EinsumProgram, Label, LabelList, TensorDecl, VertexId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("tensor `{tensor}` has rank {rank} but {labels} labels were given")]
    RankMismatch {
        tensor: String,
        rank: usize,
        labels: usize,
    },
    #[error("no statistics supplied for source tensor `{0}`")]
    MissingStats(String),
    #[error("label `{0}` is not in the tensor's label list")]
    UnknownLabel(String),
    #[error("index {index:?} is outside bound {bound:?} of `{tensor}`")]
    OutOfBounds {
        tensor: String,
        index: Vec<usize>,
        bound: Vec<usize>,
    },
    #[error("index {index:?} of `{tensor}` appears twice")]
    Duplicate { tensor: String, index: Vec<usize> },
    #[error("COO line {line}: {message}")]
    Coo { line: usize, message: String },
}

/// COO tensor: the stored entries are exactly the nonzeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    pub decl: TensorDecl,
    entries: Vec<(Vec<usize>, f64)>,
}

impl SparseTensor {
    /// Validates bounds and uniqueness; zero-valued entries are dropped.
    pub fn new(decl: TensorDecl, entries: Vec<(Vec<usize>, f64)>) -> Result<Self, StatsError> {
        let mut map = BTreeMap::new();
        for (index, value) in entries {
            let in_bounds = index.len() == decl.rank()
                && index.iter().zip(decl.bound.as_slice()).all(|(i, b)| i < b);
            if !in_bounds {
                return Err(StatsError::OutOfBounds {
                    tensor: decl.name.clone(),
                    index,
                    bound: decl.bound.as_slice().to_vec(),
                });
            }
            if map.contains_key(&index) {
                return Err(StatsError::Duplicate {
                    tensor: decl.name.clone(),
                    index,
                });
            }
            map.insert(index, value);
        }
        Ok(Self {
            decl,
            entries: map.into_iter().filter(|(_, v)| *v != 0.0).collect(),
        })
    }

    /// From a row-major dense buffer.
    pub fn from_dense(decl: TensorDecl, values: &[f64]) -> Self {
        assert_eq!(values.len(), decl.bound.volume(), "dense buffer size");
        let bound = decl.bound.as_slice().to_vec();
        let entries = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(flat, v)| (unflatten(flat, &bound), *v))
            .collect();
        Self { decl, entries }
    }

    pub fn empty(decl: TensorDecl) -> Self {
        Self {
            decl,
            entries: Vec::new(),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let bound = self.decl.bound.as_slice();
        let mut out = vec![0.0; self.decl.bound.volume()];
        for (idx, v) in &self.entries {
            out[flatten(idx, bound)] = *v;
        }
        out
    }

    /// Nonzeros in lexicographic index order.
    pub fn entries(&self) -> &[(Vec<usize>, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn rank(&self) -> usize {
        self.decl.rank()
    }

    pub fn parse_coo(text: &str) -> Result<Self, StatsError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or(StatsError::Coo {
            line: 1,
            message: "missing header".into(),
        })?;
        let coo = |line: usize, message: &str| StatsError::Coo {
            line,
            message: message.to_string(),
        };
        let mut fields = header.split_whitespace();
        let name = fields.next().ok_or_else(|| coo(hline, "missing name"))?;
        let rank: usize = fields
            .next()
            .and_then(|r| r.parse().ok())
            .ok_or_else(|| coo(hline, "missing or malformed rank"))?;
        let bound: Vec<usize> = fields
            .map(|f| f.parse().map_err(|_| coo(hline, "malformed bound")))
            .collect::<Result<_, _>>()?;
        if bound.len() != rank {
            return Err(coo(hline, "bound count differs from rank"));
        }
        let decl = TensorDecl::new(name, bound);
        let mut entries = Vec::new();
        for (line, text) in lines {
            let fields: Vec<&str> = text.split_whitespace().collect();
            if fields.len() != rank + 1 {
                return Err(coo(line, "expected rank indices and a value"));
            }
            let index = fields[..rank]
                .iter()
                .map(|f| f.parse::<usize>().map_err(|_| coo(line, "malformed index")))
                .collect::<Result<Vec<_>, _>>()?;
            let value: f64 = fields[rank]
                .parse()
                .map_err(|_| coo(line, "malformed value"))?;
            entries.push((index, value));
        }
        Self::new(decl, entries)
    }

    pub fn to_coo(&self) -> String {
        let mut s = format!("{} {}", self.decl.name, self.rank());
        for b in self.decl.bound.as_slice() {
            let _ = write!(s, " {b}");
        }
        s.push('\n');
        for (idx, v) in &self.entries {
            for i in idx {
                let _ = write!(s, "{i} ");
            }
            let _ = writeln!(s, "{v}");
        }
        s
    }
}

pub(crate) fn flatten(index: &[usize], bound: &[usize]) -> usize {
    index.iter().zip(bound).fold(0, |acc, (i, b)| acc * b + i)
}

pub(crate) fn unflatten(mut flat: usize, bound: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; bound.len()];
    for (slot, b) in idx.iter_mut().zip(bound).rev() {
        *slot = flat % b;
        flat /= b;
    }
    idx
}

/// `T(U)` and `V(l, U)` per axis. Kept as reals so estimates propagate
/// without rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorStats {
    pub nnz: f64,
    pub distinct: Vec<f64>,
}

impl TensorStats {
    pub fn rank(&self) -> usize {
        self.distinct.len()
    }

    pub fn exact(t: &SparseTensor) -> Self {
        let mut seen: Vec<Vec<bool>> = t
            .decl
            .bound
            .as_slice()
            .iter()
            .map(|&b| vec![false; b])
            .collect();
        for (idx, _) in t.entries() {
            for (axis, &i) in idx.iter().enumerate() {
                seen[axis][i] = true;
            }
        }
        Self {
            nnz: t.nnz() as f64,
            distinct: seen
                .iter()
                .map(|s| s.iter().filter(|&&x| x).count() as f64)
                .collect(),
        }
    }

    /// Statistics of a tensor whose every entry may be nonzero.
    pub fn dense(bound: &[usize]) -> Self {
        Self {
            nnz: bound.iter().product::<usize>() as f64,
            distinct: bound.iter().map(|&b| b as f64).collect(),
        }
    }

    /// `n(↑U)`: product of distinct counts over the promoted axes.
    pub fn possible_tuples(&self, promoted: AxisSet) -> f64 {
        debug_assert!(promoted.fits_rank(self.rank()));
        promoted.iter().map(|a| self.distinct[a]).product()
    }

    /// `T(↑U) = n(1 - e^{-T/n})`.
    pub fn estimate_tuples(&self, promoted: AxisSet) -> f64 {
        let n = self.possible_tuples(promoted);
        if self.nnz <= 0.0 || n <= 0.0 {
            return 0.0;
        }
        -n * (-self.nnz / n).exp_m1()
    }
}

/// Exact statistics for a tensor used under `labels`.
pub fn exact_stats(t: &SparseTensor, labels: &LabelList) -> Result<TensorStats, StatsError> {
    if labels.len() != t.rank() {
        return Err(StatsError::RankMismatch {
            tensor: t.decl.name.clone(),
            rank: t.rank(),
            labels: labels.len(),
        });
    }
    Ok(TensorStats::exact(t))
}

fn label_mask(promoted: &[Label], labels: &LabelList) -> Result<AxisSet, StatsError> {
    let mut mask = AxisSet::EMPTY;
    for l in promoted {
        let axis = labels
            .position(l)
            .ok_or_else(|| StatsError::UnknownLabel(l.to_string()))?;
        mask.insert(axis);
    }
    Ok(mask)
}

/// Label-keyed form of [`TensorStats::possible_tuples`].
pub fn possible_tuples(
    promoted: &[Label],
    labels: &LabelList,
    s: &TensorStats,
) -> Result<f64, StatsError> {
    Ok(s.possible_tuples(label_mask(promoted, labels)?))
}

/// Label-keyed form of [`TensorStats::estimate_tuples`].
pub fn estimate_tuples(
    promoted: &[Label],
    labels: &LabelList,
    s: &TensorStats,
) -> Result<f64, StatsError> {
    Ok(s.estimate_tuples(label_mask(promoted, labels)?))
}

/// Statistics for every vertex, indexed by vertex id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramStats(pub Vec<TensorStats>);

impl ProgramStats {
    pub fn get(&self, v: VertexId) -> &TensorStats {
        &self.0[v.0]
    }
}

impl std::ops::Index<VertexId> for ProgramStats {
    type Output = TensorStats;
    fn index(&self, v: VertexId) -> &TensorStats {
        &self.0[v.0]
    }
}

/// Source statistics keyed by tensor name, propagated through every node.
///
/// Join size divides the product of input counts by the larger distinct
/// count of each shared label. Output distinct counts take the smaller side
/// for shared labels, the owning side otherwise. The output count is the
/// join size capped by the product of output distinct counts. Nodes whose
/// operator does not keep zeros at zero are treated as dense.
pub fn propagate_stats(
    p: &EinsumProgram,
    sources: &BTreeMap<String, TensorStats>,
) -> Result<ProgramStats, StatsError> {
    let mut out: Vec<Option<TensorStats>> = vec![None; p.vertex_count()];
    for &v in p.topo_order() {
        let decl = p.decl(v);
        let Some(node) = p.node(v) else {
            let s = sources
                .get(&decl.name)
                .ok_or_else(|| StatsError::MissingStats(decl.name.clone()))?;
            if s.rank() != decl.rank() {
                return Err(StatsError::RankMismatch {
                    tensor: decl.name.clone(),
                    rank: decl.rank(),
                    labels: s.rank(),
                });
            }
            out[v.0] = Some(s.clone());
            continue;
        };
        let bound = decl.bound.as_slice();
        if !node.op.sparse_safe() {
            out[v.0] = Some(TensorStats::dense(bound));
            continue;
        }
        let ins: Vec<&TensorStats> = node
            .slots()
            .iter()
            .map(|&s| out[p.producer(v, s).0].as_ref().expect("topological order"))
            .collect();
        let per_label = |label: &Label| -> Vec<f64> {
            node.inputs
                .iter()
                .zip(&ins)
                .filter_map(|(u, s)| u.labels.position(label).map(|a| s.distinct[a]))
                .collect()
        };

        let mut join = ins.iter().map(|s| s.nnz).product::<f64>();
        for l in node.shared_labels() {
            let d = per_label(&l).into_iter().fold(0.0, f64::max);
            join = if d > 0.0 { join / d } else { 0.0 };
        }

        let mut distinct: Vec<f64> = node
            .output_labels
            .iter()
            .map(|l| per_label(l).into_iter().fold(f64::INFINITY, f64::min))
            .collect();
        let groups: f64 = distinct.iter().product();
        let volume = bound.iter().product::<usize>() as f64;
        let nnz = join.min(groups).min(volume).max(0.0);
        for (d, &b) in distinct.iter_mut().zip(bound) {
            *d = if nnz > 0.0 {
                d.min(b as f64).min(nnz.max(1.0)).max(1.0)
            } else {
                0.0
            };
        }
        out[v.0] = Some(TensorStats { nnz, distinct });
    }
    Ok(ProgramStats(
        out.into_iter().map(|s| s.expect("all vertices visited")).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::ir::parse_program;

    fn ll(names: &[&str]) -> LabelList {
        LabelList::parse(names).unwrap()
    }

    #[test]
    fn exact_stats_of_matmul_inputs() {
        let (u, v) = fixtures::matmul_inputs();
        let su = exact_stats(&u, &ll(&["i", "j"])).unwrap();
        assert_eq!(su.nnz, 5.0);
        assert_eq!(su.distinct, vec![2.0, 4.0]);
        let sv = exact_stats(&v, &ll(&["j", "k"])).unwrap();
        assert_eq!(sv.nnz, 6.0);
        assert_eq!(sv.distinct, vec![4.0, 2.0]);
        assert!(exact_stats(&u, &ll(&["i"])).is_err());
    }

    #[test]
    fn all_zero_tensor() {
        let t = SparseTensor::from_dense(TensorDecl::new("Z", vec![3, 2]), &[0.0; 6]);
        let s = TensorStats::exact(&t);
        assert_eq!(s.nnz, 0.0);
        assert_eq!(s.distinct, vec![0.0, 0.0]);
        assert_eq!(s.estimate_tuples(AxisSet::from_axes([0])), 0.0);
    }

    #[test]
    fn tuple_counts() {
        let (u, _) = fixtures::matmul_inputs();
        let s = TensorStats::exact(&u);
        let l = ll(&["i", "j"]);
        assert_eq!(possible_tuples(&[], &l, &s).unwrap(), 1.0);
        assert_eq!(possible_tuples(&l.as_slice()[..1], &l, &s).unwrap(), 2.0);
        assert_eq!(possible_tuples(l.as_slice(), &l, &s).unwrap(), 8.0);
        assert!(possible_tuples(&[Label::new("q").unwrap()], &l, &s).is_err());

        let est = estimate_tuples(&l.as_slice()[..1], &l, &s).unwrap();
        assert!((est - 2.0 * (1.0 - (-2.5f64).exp())).abs() < 1e-12);
        assert!((est - 1.8358).abs() < 1e-4);

        let grid = TensorStats {
            nnz: 100.0,
            distinct: vec![10.0, 10.0],
        };
        let full = grid.estimate_tuples(AxisSet::full(2));
        assert!((full - 100.0 * (1.0 - (-1.0f64).exp())).abs() < 1e-9);
    }

    #[test]
    fn estimate_approaches_nnz_for_huge_grids() {
        let s = TensorStats {
            nnz: 50.0,
            distinct: vec![50_000.0, 1000.0],
        };
        let est = s.estimate_tuples(AxisSet::full(2));
        assert!((est - 50.0).abs() / 50.0 < 1e-3);
    }

    #[test]
    fn propagate_matmul() {
        let p = fixtures::matmul_program();
        let (u, v) = fixtures::matmul_inputs();
        let src = BTreeMap::from([
            ("U".to_string(), TensorStats::exact(&u)),
            ("V".to_string(), TensorStats::exact(&v)),
        ]);
        let st = propagate_stats(&p, &src).unwrap();
        let w = &st[p.vertex_by_name("W").unwrap()];
        assert_eq!(w.nnz, 4.0);
        assert_eq!(w.distinct, vec![2.0, 2.0]);

        assert!(matches!(
            propagate_stats(&p, &BTreeMap::new()),
            Err(StatsError::MissingStats(_))
        ));
    }

    #[test]
    fn propagate_cross_product_and_copy() {
        let p = parse_program(
            "tensor A[10]; tensor B[10]
             C[i,j] = sum[] A[i] * B[j]
             D[i,j] = sum[] C[i,j]",
        )
        .unwrap();
        let a = TensorStats {
            nnz: 3.0,
            distinct: vec![3.0],
        };
        let b = TensorStats {
            nnz: 4.0,
            distinct: vec![4.0],
        };
        let src = BTreeMap::from([("A".to_string(), a), ("B".to_string(), b)]);
        let st = propagate_stats(&p, &src).unwrap();
        let c = &st[p.vertex_by_name("C").unwrap()];
        assert_eq!(c.nnz, 12.0);
        assert_eq!(st[p.vertex_by_name("D").unwrap()], *c);
    }

    #[test]
    fn non_sparse_safe_nodes_are_dense() {
        let p = parse_program("tensor A[3,2]; E[i,j] = exp(A[i,j])").unwrap();
        let src = BTreeMap::from([(
            "A".to_string(),
            TensorStats {
                nnz: 1.0,
                distinct: vec![1.0, 1.0],
            },
        )]);
        let st = propagate_stats(&p, &src).unwrap();
        assert_eq!(st[VertexId(1)], TensorStats::dense(&[3, 2]));
    }

    #[test]
    fn coo_round_trip_and_errors() {
        let (u, _) = fixtures::matmul_inputs();
        let text = u.to_coo();
        assert!(text.starts_with("U 2 4 4\n"));
        assert_eq!(SparseTensor::parse_coo(&text).unwrap(), u);

        assert!(matches!(
            SparseTensor::parse_coo("X 1 3\n3 1.0\n"),
            Err(StatsError::OutOfBounds { .. })
        ));
        assert!(matches!(
            SparseTensor::parse_coo("X 1 3\n1 1.0\n1 2.0\n"),
            Err(StatsError::Duplicate { .. })
        ));
        assert!(matches!(
            SparseTensor::parse_coo("X 2 3\n1 1.0\n"),
            Err(StatsError::Coo { line: 1, .. })
        ));
        let scalar = SparseTensor::parse_coo("S 0\n2.5\n").unwrap();
        assert_eq!(scalar.to_dense(), vec![2.5]);
        let empty = SparseTensor::parse_coo("E 2 3 3\n").unwrap();
        assert_eq!(empty.nnz(), 0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn dense_tensor() -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
            proptest::collection::vec(1usize..5, 0..4).prop_flat_map(|bound| {
                let n: usize = bound.iter().product();
                (
                    Just(bound),
                    proptest::collection::vec(
                        prop_oneof![3 => Just(0.0), 1 => -5.0f64..5.0],
                        n,
                    ),
                )
            })
        }

        proptest! {
            #[test]
            fn exact_matches_dense_scan((bound, values) in dense_tensor()) {
                let t = SparseTensor::from_dense(TensorDecl::new("T", bound.clone()), &values);
                let s = TensorStats::exact(&t);
                prop_assert_eq!(s.nnz as usize, values.iter().filter(|v| **v != 0.0).count());
                for (axis, &b) in bound.iter().enumerate() {
                    let mut count = 0;
                    for slice in 0..b {
                        let hit = values.iter().enumerate().any(|(flat, v)| {
                            *v != 0.0 && unflatten(flat, &bound)[axis] == slice
                        });
                        count += usize::from(hit);
                    }
                    prop_assert_eq!(s.distinct[axis] as usize, count);
                }
                prop_assert_eq!(t.to_dense(), values);
            }

            #[test]
            fn estimate_is_monotone(t in 0.0f64..1e4, dt in 0.0f64..1e3, n in 1.0f64..1e4, dn in 0.0f64..1e3) {
                let est = |t: f64, n: f64| TensorStats { nnz: t, distinct: vec![n] }
                    .estimate_tuples(AxisSet::full(1));
                let base = est(t, n);
                prop_assert!(est(t + dt, n) >= base - 1e-9);
                prop_assert!(est(t, n + dn) >= base - 1e-9);
                prop_assert!(base <= t.min(n) * (1.0 + 1e-12) + 1e-12);
            }
        }
    }
}
