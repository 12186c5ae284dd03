//! Bundled example programs at toy scale, with seeded input generators.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ir::{parse_program, AxisSet, EinsumProgram, TensorDecl};
use crate::stats::SparseTensor;

pub const MATMUL: &str = include_str!("../fixtures/matmul.ein");
pub const CHAIN: &str = include_str!("../fixtures/chain.ein");
pub const MLP: &str = include_str!("../fixtures/mlp.ein");
pub const GCN: &str = include_str!("../fixtures/gcn.ein");
pub const ATTENTION: &str = include_str!("../fixtures/attention.ein");
pub const QUANTUM: &str = include_str!("../fixtures/quantum.ein");

pub const NAMES: [&str; 6] = ["matmul", "chain", "mlp", "gcn", "attention", "quantum"];

pub fn source(name: &str) -> Option<&'static str> {
    Some(match name {
        "matmul" => MATMUL,
        "chain" => CHAIN,
        "mlp" => MLP,
        "gcn" => GCN,
        "attention" => ATTENTION,
        "quantum" => QUANTUM,
        _ => return None,
    })
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub program: EinsumProgram,
    pub inputs: BTreeMap<String, SparseTensor>,
}

/// Program and inputs for a bundled fixture. Only random features depend
/// on `seed`; graph structure and the matmul matrices are fixed.
pub fn load(name: &str, seed: u64) -> Option<Fixture> {
    let name = *NAMES.iter().find(|n| **n == name)?;
    let program = parse_program(source(name)?).expect("bundled fixtures parse");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = BTreeMap::new();
    let mut put = |t: SparseTensor| {
        inputs.insert(t.decl.name.clone(), t);
    };
    match name {
        "matmul" => {
            let (u, v) = matmul_inputs();
            put(u);
            put(v);
        }
        "chain" => {
            for n in ["X", "Y", "Z"] {
                put(random_sparse(decl(&program, n), 0.4, &mut rng));
            }
        }
        "mlp" => {
            put(random_dense(decl(&program, "W1"), &mut rng));
            put(random_dense(decl(&program, "X"), &mut rng));
            put(random_dense(decl(&program, "W2"), &mut rng));
        }
        "gcn" => {
            let adj = toy_graph(true);
            let n = adj.len();
            let mut dh = vec![0.0; n * n];
            for (i, row) in adj.iter().enumerate() {
                let deg = row.iter().filter(|&&a| a).count() as f64;
                dh[i * n + i] = 1.0 / deg.sqrt();
            }
            put(SparseTensor::from_dense(decl(&program, "Dh"), &dh));
            put(SparseTensor::from_dense(decl(&program, "Ah"), &flatten_adj(&adj)));
            put(random_dense(decl(&program, "H"), &mut rng));
            put(random_dense(decl(&program, "Wl"), &mut rng));
        }
        "attention" => {
            put(random_dense(decl(&program, "X"), &mut rng));
            put(random_dense(decl(&program, "WQ"), &mut rng));
            put(random_dense(decl(&program, "WK"), &mut rng));
            put(SparseTensor::from_dense(
                decl(&program, "A"),
                &flatten_adj(&toy_graph(false)),
            ));
        }
        "quantum" => {
            for (n, g) in ["G1", "G2", "G3"].into_iter().zip(circuit_layers()) {
                put(SparseTensor::from_dense(decl(&program, n), &g));
            }
            let mut psi = vec![0.0; 8];
            psi[0] = 1.0;
            put(SparseTensor::from_dense(decl(&program, "Psi"), &psi));
        }
        _ => unreachable!(),
    }
    Some(Fixture {
        name,
        program,
        inputs,
    })
}

pub fn all(seed: u64) -> Vec<Fixture> {
    NAMES
        .iter()
        .map(|n| load(n, seed).expect("known fixture"))
        .collect()
}

fn decl(p: &EinsumProgram, name: &str) -> TensorDecl {
    p.decl(p.vertex_by_name(name).expect("fixture tensor")).clone()
}

pub fn matmul_program() -> EinsumProgram {
    parse_program(MATMUL).expect("bundled fixture parses")
}

/// The two sparse 4x4 matrices of the worked product example.
pub fn matmul_inputs() -> (SparseTensor, SparseTensor) {
    #[rustfmt::skip]
    let u = [
        1.4, 2.2, 0.0, 2.1,
        0.0, 0.0, 0.0, 0.0,
        1.4, 0.0, 1.1, 0.0,
        0.0, 0.0, 0.0, 0.0,
    ];
    #[rustfmt::skip]
    let v = [
        3.2, 0.0, 1.3, 0.0,
        0.0, 0.0, 0.6, 0.0,
        0.0, 0.0, 1.2, 0.0,
        1.2, 0.0, 2.1, 0.0,
    ];
    (
        SparseTensor::from_dense(TensorDecl::new("U", vec![4, 4]), &u),
        SparseTensor::from_dense(TensorDecl::new("V", vec![4, 4]), &v),
    )
}

/// Six vertices on a ring plus one chord.
fn toy_graph(self_loops: bool) -> Vec<Vec<bool>> {
    let n = 6;
    let mut adj = vec![vec![false; n]; n];
    let mut link = |a: usize, b: usize| {
        adj[a][b] = true;
        adj[b][a] = true;
    };
    for i in 0..n {
        link(i, (i + 1) % n);
    }
    link(0, 3);
    if self_loops {
        for (i, row) in adj.iter_mut().enumerate() {
            row[i] = true;
        }
    }
    adj
}

fn flatten_adj(adj: &[Vec<bool>]) -> Vec<f64> {
    adj.iter()
        .flatten()
        .map(|&a| if a { 1.0 } else { 0.0 })
        .collect()
}

/// Hadamard on every qubit, then a CNOT, then a rotation on the last qubit.
fn circuit_layers() -> [Vec<f64>; 3] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let hadamard = [h, h, h, -h];
    let mut layer1 = vec![1.0];
    let mut dim = 1;
    for _ in 0..3 {
        layer1 = kron(&layer1, dim, &hadamard, 2);
        dim *= 2;
    }
    #[rustfmt::skip]
    let cnot = [
        1.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
        0.0, 0.0, 1.0, 0.0,
    ];
    let id2 = [1.0, 0.0, 0.0, 1.0];
    let layer2 = kron(&cnot, 4, &id2, 2);
    let (s, c) = 0.3f64.sin_cos();
    let rot = [c, -s, s, c];
    let id4 = kron(&id2, 2, &id2, 2);
    let layer3 = kron(&id4, 4, &rot, 2);
    [layer1, layer2, layer3]
}

fn kron(a: &[f64], n: usize, b: &[f64], m: usize) -> Vec<f64> {
    let dim = n * m;
    let mut out = vec![0.0; dim * dim];
    for i in 0..n {
        for j in 0..n {
            for k in 0..m {
                for l in 0..m {
                    out[(i * m + k) * dim + j * m + l] = a[i * n + j] * b[k * m + l];
                }
            }
        }
    }
    out
}

/// Each cell nonzero with probability `density`, values in [0.5, 2).
pub fn random_sparse<R: Rng>(decl: TensorDecl, density: f64, rng: &mut R) -> SparseTensor {
    let values: Vec<f64> = (0..decl.bound.volume())
        .map(|_| {
            if rng.random_bool(density) {
                rng.random_range(0.5..2.0)
            } else {
                0.0
            }
        })
        .collect();
    SparseTensor::from_dense(decl, &values)
}

/// Dense values in [-1, 1) with zeros excluded.
pub fn random_dense<R: Rng>(decl: TensorDecl, rng: &mut R) -> SparseTensor {
    let values: Vec<f64> = (0..decl.bound.volume())
        .map(|_| loop {
            let x: f64 = rng.random_range(-1.0..1.0);
            if x != 0.0 {
                break x;
            }
        })
        .collect();
    SparseTensor::from_dense(decl, &values)
}

const LETTERS: [&str; 8] = ["i", "j", "k", "l", "m", "n", "p", "q"];

/// Shape limits for `random_program`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgramShape {
    pub nodes: usize,
    /// Labels per tensor.
    pub max_rank: usize,
    /// Distinct labels per node.
    pub max_node_labels: usize,
    pub bound: usize,
    /// Every tensor read at most once.
    pub tree: bool,
}

impl Default for ProgramShape {
    fn default() -> Self {
        Self {
            nodes: 4,
            max_rank: 3,
            max_node_labels: 4,
            bound: 4,
            tree: true,
        }
    }
}

fn label_text(labels: &[&str]) -> String {
    labels.join(",")
}

/// A random sum-product program over `shape.bound`-sized axes. Inputs are
/// earlier results or fresh sources.
pub fn random_program<R: Rng>(shape: ProgramShape, rng: &mut R) -> EinsumProgram {
    let mut sources: Vec<usize> = Vec::new();
    let mut pool: Vec<(String, usize)> = Vec::new();
    let mut body = String::new();
    for t in 0..shape.nodes {
        let binary = rng.random_bool(0.75);
        let mut pick = |rng: &mut R, pool: &mut Vec<(String, usize)>| {
            if !pool.is_empty() && rng.random_bool(0.6) {
                let i = rng.random_range(0..pool.len());
                if shape.tree {
                    pool.remove(i)
                } else {
                    pool[i].clone()
                }
            } else {
                let rank = rng.random_range(1..=shape.max_rank);
                sources.push(rank);
                (format!("S{}", sources.len() - 1), rank)
            }
        };
        let a = pick(rng, &mut pool);
        let b = binary.then(|| pick(rng, &mut pool));
        let la: Vec<&str> = LETTERS[..a.1].to_vec();
        let mut all = la.clone();
        let mut lb: Vec<&str> = Vec::new();
        if let Some((_, rank)) = &b {
            for _ in 0..*rank {
                let shareable: Vec<&str> = la.iter().copied().filter(|l| !lb.contains(l)).collect();
                let fresh_ok = all.len() < shape.max_node_labels;
                let l = if !shareable.is_empty() && (!fresh_ok || rng.random_bool(0.5)) {
                    shareable[rng.random_range(0..shareable.len())]
                } else if fresh_ok {
                    let l = LETTERS[all.len()];
                    all.push(l);
                    l
                } else {
                    // Out of labels: reuse one not yet in this list.
                    let unused: Vec<&str> = all.iter().copied().filter(|l| !lb.contains(l)).collect();
                    unused[rng.random_range(0..unused.len())]
                };
                lb.push(l);
            }
        }
        let mut out: Vec<&str> = all.clone();
        for i in (1..out.len()).rev() {
            out.swap(i, rng.random_range(0..=i));
        }
        out.truncate(rng.random_range(1..=shape.max_rank.min(all.len())));
        let agg: Vec<&str> = all.iter().copied().filter(|l| !out.contains(l)).collect();
        let name = format!("T{t}");
        body.push_str(&format!(
            "{name}[{}] = sum[{}] {}[{}]",
            label_text(&out),
            label_text(&agg),
            a.0,
            label_text(&la)
        ));
        if let Some((bn, _)) = &b {
            body.push_str(&format!(" * {bn}[{}]", label_text(&lb)));
        }
        body.push('\n');
        pool.push((name, out.len()));
    }
    let mut text = String::new();
    for (i, &rank) in sources.iter().enumerate() {
        let dims = vec![shape.bound.to_string(); rank];
        text.push_str(&format!("tensor S{i}[{}];\n", dims.join(",")));
    }
    text.push_str(&body);
    parse_program(&text).expect("generated program parses")
}

/// Operator family of `random_binary_node`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    SumProduct,
    MaxSquaredDifference,
}

/// One binary node over labels of random bounds in `2..=max_bound`, each
/// input of rank `1..=max_rank`.
pub fn random_binary_node<R: Rng>(
    kind: NodeKind,
    max_rank: usize,
    max_bound: usize,
    rng: &mut R,
) -> EinsumProgram {
    let letters = &LETTERS[..5];
    let bounds: Vec<usize> = letters.iter().map(|_| rng.random_range(2..=max_bound)).collect();
    let pick = |rng: &mut R| {
        let mut ls: Vec<usize> = (0..letters.len()).collect();
        for i in (1..ls.len()).rev() {
            ls.swap(i, rng.random_range(0..=i));
        }
        ls.truncate(rng.random_range(1..=max_rank));
        ls
    };
    let a = pick(rng);
    let b = pick(rng);
    let mut all = a.clone();
    all.extend(b.iter().filter(|l| !a.contains(l)));
    let mut out = all.clone();
    for i in (1..out.len()).rev() {
        out.swap(i, rng.random_range(0..=i));
    }
    out.truncate(rng.random_range(0..=max_rank.min(all.len())));
    let agg: Vec<usize> = all.iter().copied().filter(|l| !out.contains(l)).collect();
    let names = |ls: &[usize]| ls.iter().map(|&l| letters[l]).collect::<Vec<_>>().join(",");
    let dims = |ls: &[usize]| ls.iter().map(|&l| bounds[l].to_string()).collect::<Vec<_>>().join(",");
    let (agg_kw, body) = match kind {
        NodeKind::SumProduct => ("sum", format!("A[{}] * B[{}]", names(&a), names(&b))),
        NodeKind::MaxSquaredDifference => ("max", format!("(A[{}] - B[{}])^2", names(&a), names(&b))),
    };
    let text = format!(
        "tensor A[{}]; tensor B[{}]\nW[{}] = {agg_kw}[{}] {body}",
        dims(&a),
        dims(&b),
        names(&out),
        names(&agg)
    );
    parse_program(&text).expect("generated node parses")
}

/// Random consistent layouts: each node promotes a random subset of its
/// labels; each source gets a random layout. Returns per-vertex layouts and
/// per-node input layouts, as taken by `plan_from_layouts`.
pub fn random_layouts<R: Rng>(p: &EinsumProgram, rng: &mut R) -> (Vec<AxisSet>, Vec<Vec<AxisSet>>) {
    let mut layouts: Vec<AxisSet> = p
        .sources()
        .iter()
        .map(|d| AxisSet::from_bits(rng.random_range(0..1u32 << d.rank())))
        .collect();
    let mut inputs = Vec::new();
    for node in p.nodes() {
        let labels = node.all_labels();
        let chosen: Vec<_> = labels.iter().filter(|_| rng.random_bool(0.5)).collect();
        layouts.push(node.output_labels.mask_of(chosen.iter().copied()));
        inputs.push(
            node.inputs
                .iter()
                .map(|u| u.labels.mask_of(chosen.iter().copied()))
                .collect(),
        );
    }
    (layouts, inputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_load_with_all_inputs() {
        for f in all(7) {
            for d in f.program.sources() {
                let t = &f.inputs[&d.name];
                assert_eq!(t.decl, *d, "{}", f.name);
            }
        }
        assert!(load("nope", 0).is_none());
    }

    #[test]
    fn gates_are_orthogonal() {
        for g in circuit_layers() {
            for i in 0..8 {
                for j in 0..8 {
                    let dot: f64 = (0..8).map(|k| g[k * 8 + i] * g[k * 8 + j]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn generators_are_seeded() {
        let d = TensorDecl::new("T", vec![5, 5]);
        let a = random_sparse(d.clone(), 0.3, &mut ChaCha8Rng::seed_from_u64(1));
        let b = random_sparse(d, 0.3, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
    }
}
