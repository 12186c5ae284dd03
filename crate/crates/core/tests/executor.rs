mod common;

use common::{max_rel_err, plan_zoo, stats_of};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tenrel_core::executor::{
    decompose_tensor, dense_eval, exec_node, exec_plan, exec_repartition, OpCounter,
};
use tenrel_core::fixtures;
use tenrel_core::ir::{AxisSet, TensorDecl};

#[test]
fn every_fixture_plan_matches_dense_oracle() {
    for f in fixtures::all(3) {
        let stats = stats_of(&f.program, &f.inputs);
        let dense = dense_eval(&f.program, &f.inputs, &mut OpCounter::default()).unwrap();
        for plan in plan_zoo(&f.program, &stats, 8, 11) {
            let rels = exec_plan(&f.program, &plan, &f.inputs, &mut OpCounter::default()).unwrap();
            for (name, want) in &dense {
                let got = rels[name].densify();
                let err = max_rel_err(&got, &want.values);
                assert!(err <= 1e-12, "{} {name}: {err}", f.name);
                let rel = &rels[name];
                if rel.prunable {
                    assert!(rel.rows().all(|(_, b)| b.iter().any(|&x| x != 0.0)));
                }
            }
        }
    }
}

#[test]
fn softmax_sums_to_one() {
    let f = fixtures::load("mlp", 5).unwrap();
    let out = dense_eval(&f.program, &f.inputs, &mut OpCounter::default()).unwrap();
    let total: f64 = out["E"].values.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn max_squared_difference_by_hand() {
    let p = tenrel_core::ir::parse_program(
        "tensor A[2,2]; tensor B[2,2]\nC[i] = max[j] (A[i,j] - B[i,j])^2",
    )
    .unwrap();
    let a = tenrel_core::stats::SparseTensor::from_dense(TensorDecl::new("A", vec![2, 2]), &[1.0, 4.0, -2.0, 0.5]);
    let b = tenrel_core::stats::SparseTensor::from_dense(TensorDecl::new("B", vec![2, 2]), &[3.0, 3.5, 0.0, 0.0]);
    let inputs = [("A".to_string(), a.clone()), ("B".to_string(), b.clone())].into();
    let out = dense_eval(&p, &inputs, &mut OpCounter::default()).unwrap();
    // Row 0: max(4, 0.25); row 1: max(4, 0.25).
    assert_eq!(out["C"].values, vec![4.0, 4.0]);
    let ub = decompose_tensor(&a, AxisSet::from_axes([0]));
    let vb = decompose_tensor(&b, AxisSet::EMPTY);
    let vb = exec_repartition(vb, AxisSet::from_axes([0]), &mut OpCounter::default());
    let c = exec_node(&p.nodes()[0], &[&ub, &vb], AxisSet::from_axes([0]), &mut OpCounter::default()).unwrap();
    assert_eq!(c.densify(), vec![4.0, 4.0]);
}

#[test]
fn empty_input_gives_empty_output() {
    let p = fixtures::matmul_program();
    let u = tenrel_core::stats::SparseTensor::empty(TensorDecl::new("U", vec![4, 4]));
    let (_, v) = fixtures::matmul_inputs();
    let w = exec_node(
        &p.nodes()[0],
        &[&decompose_tensor(&u, AxisSet::from_axes([0])), &decompose_tensor(&v, AxisSet::EMPTY)],
        AxisSet::from_axes([0]),
        &mut OpCounter::default(),
    )
    .unwrap();
    assert!(w.is_empty());
}

#[test]
fn quantum_chain_matches_matrix_vector_products() {
    let f = fixtures::load("quantum", 0).unwrap();
    let out = dense_eval(&f.program, &f.inputs, &mut OpCounter::default()).unwrap();
    let mut psi = f.inputs["Psi"].to_dense();
    for g in ["G1", "G2", "G3"] {
        let m = f.inputs[g].to_dense();
        psi = (0..8).map(|i| (0..8).map(|j| m[i * 8 + j] * psi[j]).sum()).collect();
    }
    assert!(max_rel_err(&out["S3"].values, &psi) <= 1e-12);
    let norm: f64 = psi.iter().map(|x| x * x).sum();
    assert!((norm - 1.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn decompose_then_densify_is_identity(seed in any::<u64>(), bits in 0u32..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = fixtures::random_sparse(TensorDecl::new("T", vec![3, 4, 2]), 0.3, &mut rng);
        let r = decompose_tensor(&t, AxisSet::from_bits(bits));
        prop_assert_eq!(r.densify(), t.to_dense());
        prop_assert!(r.rows().all(|(_, b)| b.iter().any(|&x| x != 0.0)));
    }

    #[test]
    fn repartition_round_trip(seed in any::<u64>(), a in 0u32..8, b in 0u32..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = fixtures::random_sparse(TensorDecl::new("T", vec![3, 4, 2]), 0.3, &mut rng);
        let (a, b) = (AxisSet::from_bits(a), AxisSet::from_bits(b));
        let r = decompose_tensor(&t, a);
        let mut c = OpCounter::default();
        let there = exec_repartition(r.clone(), b, &mut c);
        prop_assert_eq!(there.densify(), t.to_dense());
        prop_assert_eq!(&exec_repartition(there, a, &mut c), &r);
    }

    #[test]
    fn counters_never_decrease(seed in any::<u64>()) {
        let f = fixtures::load("chain", seed).unwrap();
        let stats = stats_of(&f.program, &f.inputs);
        let mut c = OpCounter::default();
        let mut last = c.clone();
        for plan in plan_zoo(&f.program, &stats, 2, seed) {
            exec_plan(&f.program, &plan, &f.inputs, &mut c).unwrap();
            prop_assert!(c.scalar_multiplies >= last.scalar_multiplies);
            prop_assert!(c.scalar_adds >= last.scalar_adds);
            for (k, v) in &last.tuples {
                prop_assert!(c.tuples_of(k) >= *v);
            }
            last = c.clone();
        }
    }
}
