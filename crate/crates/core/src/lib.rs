//! Sparsity-aware tensor-relational compilation of EinSum programs.
//!
//! A program is parsed into a DAG of extended EinSum nodes, sparsity
//! statistics are propagated through it, a cost-based search picks which
//! labels to promote to relational keys, and the result is emitted as SQL
//! or executed on an in-memory engine.

pub mod codegen;
pub mod cost;
pub mod executor;
pub mod fixtures;
pub mod ir;
pub mod optimizer;
pub mod stats;

use thiserror::Error;

pub use codegen::{emit_program, run_script, CodegenError, CompiledProgram, Manifest, ScriptError};
pub use cost::{CostBreakdown, CostError, CostModel, CostParams};
pub use executor::{dense_eval, exec_plan, ExecError, OpCounter, TensorRelation};
pub use ir::{parse_program, AxisSet, EinsumNode, EinsumProgram, IrError, LabelList, TensorDecl, VertexId};
pub use optimizer::{
    optimize_greedy, optimize_program, optimize_top_k, perturb_costs, validate_plan, Perturbation, Plan,
    PlanError, SearchOptions,
};
pub use stats::{propagate_stats, ProgramStats, SparseTensor, StatsError, TensorStats};

/// Any error raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
    #[error(transparent)]
    Script(#[from] ScriptError),
}
