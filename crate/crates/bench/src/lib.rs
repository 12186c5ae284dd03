//! Workloads shared by the benchmarks.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tenrel_core::fixtures::{self, ProgramShape};
use tenrel_core::{parse_program, propagate_stats, EinsumProgram, ProgramStats, SparseTensor, TensorStats};

pub struct Workload {
    pub name: String,
    pub program: EinsumProgram,
    pub inputs: BTreeMap<String, SparseTensor>,
    pub stats: ProgramStats,
}

impl Workload {
    pub fn new(name: impl Into<String>, program: EinsumProgram, inputs: BTreeMap<String, SparseTensor>) -> Self {
        let exact = inputs
            .iter()
            .map(|(n, t)| (n.clone(), TensorStats::exact(t)))
            .collect();
        let stats = propagate_stats(&program, &exact).expect("inputs cover every source");
        Self {
            name: name.into(),
            program,
            inputs,
            stats,
        }
    }
}

/// Every bundled example program with seeded inputs.
pub fn fixtures(seed: u64) -> Vec<Workload> {
    fixtures::all(seed)
        .into_iter()
        .map(|f| Workload::new(f.name, f.program, f.inputs))
        .collect()
}

/// `W = U V` over `n x n` matrices with the given nonzero density.
pub fn sparse_matmul(n: usize, density: f64, seed: u64) -> Workload {
    let src = format!("tensor U[{n},{n}]; tensor V[{n},{n}]\nW[i,k] = sum[j] U[i,j] * V[j,k]");
    let program = parse_program(&src).expect("valid program");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = program
        .sources()
        .iter()
        .map(|d| (d.name.clone(), fixtures::random_sparse(d.clone(), density, &mut rng)))
        .collect();
    Workload::new(format!("matmul_{n}_{density}"), program, inputs)
}

/// A random DAG of sum-product nodes over uniformly sparse sources.
pub fn random_dag(nodes: usize, bound: usize, density: f64, seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = ProgramShape {
        nodes,
        bound,
        tree: false,
        ..ProgramShape::default()
    };
    let program = fixtures::random_program(shape, &mut rng);
    let inputs = program
        .sources()
        .iter()
        .map(|d| (d.name.clone(), fixtures::random_sparse(d.clone(), density, &mut rng)))
        .collect();
    Workload::new(format!("dag_{nodes}"), program, inputs)
}
