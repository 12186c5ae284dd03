mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use tenrel_core::cost::calibrate;
use tenrel_core::executor::dense_eval;
use tenrel_core::fixtures;
use tenrel_core::optimizer::evaluate_plan;
use tenrel_core::{
    emit_program, exec_plan, optimize_greedy, optimize_program, optimize_top_k, parse_program, perturb_costs,
    propagate_stats, validate_plan, CodegenError, CostError, CostModel, CostParams, EinsumProgram, ExecError,
    OpCounter, Plan, PlanError, ProgramStats, SearchOptions, SparseTensor, StatsError, TensorStats, VertexId,
};

use config::{Cli, Command, Mode, RunConfig};

const EXIT_IO: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_PARSE: u8 = 3;
const EXIT_STATS: u8 = 4;
const EXIT_INFEASIBLE: u8 = 5;
const EXIT_MISMATCH: u8 = 6;
const EXIT_INVALID_PLAN: u8 = 7;

const VERIFY_TOLERANCE: f64 = 1e-9;
const DIFF_LINES: usize = 20;

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(EXIT_IO, format!("{}: {e}", path.display()))
    }
}

impl From<StatsError> for Failure {
    fn from(e: StatsError) -> Self {
        let code = match e {
            StatsError::Coo { .. } => EXIT_PARSE,
            _ => EXIT_STATS,
        };
        Self::new(code, e.to_string())
    }
}

impl From<CostError> for Failure {
    fn from(e: CostError) -> Self {
        let code = match e {
            CostError::Memory { .. } => EXIT_INFEASIBLE,
            CostError::InvalidGamma { .. } => EXIT_USAGE,
            CostError::InvalidParam { .. } => EXIT_PARSE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<PlanError> for Failure {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::Infeasible(_) => Self::new(EXIT_INFEASIBLE, e.to_string()),
            PlanError::Invalid(_) => Self::new(EXIT_INVALID_PLAN, e.to_string()),
            PlanError::TopK { .. } => Self::new(EXIT_USAGE, e.to_string()),
            PlanError::Cost(c) => c.into(),
        }
    }
}

impl From<ExecError> for Failure {
    fn from(e: ExecError) -> Self {
        match e {
            ExecError::Plan(p) => p.into(),
            ExecError::Inconsistent { .. } => Self::new(EXIT_INVALID_PLAN, e.to_string()),
            _ => Self::new(EXIT_STATS, e.to_string()),
        }
    }
}

impl From<CodegenError> for Failure {
    fn from(e: CodegenError) -> Self {
        match e {
            CodegenError::Plan(p) => p.into(),
            _ => Self::new(EXIT_INVALID_PLAN, e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    let usage = |e: String| Failure::new(EXIT_USAGE, e);
    match command {
        Command::Stats { input, out } => cmd_stats(&RunConfig::new(input, None).map_err(usage)?, out.as_deref()),
        Command::Optimize { input, search, out } => {
            cmd_optimize(&RunConfig::new(input, Some(search)).map_err(usage)?, out.as_deref())
        }
        Command::Compile { input, search, out } => {
            cmd_compile(&RunConfig::new(input, Some(search)).map_err(usage)?, &out)
        }
        Command::Run { input, search, out } => {
            cmd_run(&RunConfig::new(input, Some(search)).map_err(usage)?, out.as_deref())
        }
        Command::Verify { input, search } => cmd_verify(&RunConfig::new(input, Some(search)).map_err(usage)?),
        Command::Calibrate { out } => cmd_calibrate(out.as_deref()),
        Command::Gen { fixture, seed, out } => cmd_gen(&fixture, seed, &out),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}

struct Loaded {
    program: EinsumProgram,
    inputs: BTreeMap<String, SparseTensor>,
    stats: ProgramStats,
}

fn load(cfg: &RunConfig) -> Result<Loaded> {
    let text = read(&cfg.program)?;
    let program = parse_program(&text)
        .map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", cfg.program.display())))?;
    for (name, _) in &cfg.tensors {
        if !program.sources().iter().any(|d| &d.name == name) {
            return Err(Failure::new(EXIT_USAGE, format!("`{name}` is not a source tensor")));
        }
    }
    let mut inputs = BTreeMap::new();
    for decl in program.sources() {
        let path = cfg
            .tensors
            .iter()
            .find(|(n, _)| n == &decl.name)
            .map(|(_, p)| p.clone())
            .unwrap_or_else(|| cfg.data_dir.join(format!("{}.coo", decl.name)));
        let t = SparseTensor::parse_coo(&read(&path)?).map_err(|e| {
            let f = Failure::from(e);
            Failure::new(f.code, format!("{}: {}", path.display(), f.message))
        })?;
        if t.decl != *decl {
            return Err(Failure::new(
                EXIT_STATS,
                format!(
                    "{}: holds {}{:?}, program declares {}{:?}",
                    path.display(),
                    t.decl.name,
                    t.decl.bound.as_slice(),
                    decl.name,
                    decl.bound.as_slice()
                ),
            ));
        }
        inputs.insert(decl.name.clone(), t);
    }
    let exact = inputs
        .iter()
        .map(|(n, t)| (n.clone(), TensorStats::exact(t)))
        .collect();
    let stats = propagate_stats(&program, &exact)?;
    Ok(Loaded {
        program,
        inputs,
        stats,
    })
}

fn cost_params(cfg: &RunConfig) -> Result<CostParams> {
    let mut params = match &cfg.cost_config {
        Some(path) => CostParams::parse_config(&read(path)?).map_err(|e| {
            let f = Failure::from(e);
            Failure::new(f.code, format!("{}: {}", path.display(), f.message))
        })?,
        None => CostParams::default(),
    };
    if let Some(m) = cfg.mem_limit {
        params.set("memory_limit_bytes", m)?;
    }
    Ok(params)
}

/// A plan with an optional note on how it was chosen.
struct Planned {
    plan: Plan,
    note: Option<String>,
}

fn plans(cfg: &RunConfig, l: &Loaded) -> Result<Vec<Planned>> {
    let params = cost_params(cfg)?;
    let model = CostModel::new(params);
    let opts = SearchOptions {
        respect_annotations: cfg.respect_annotations,
    };
    let (p, stats) = (&l.program, &l.stats);
    if let Some(path) = &cfg.plan {
        let plan = Plan::from_json(&read(path)?)?;
        validate_plan(p, &plan)?;
        let plan = evaluate_plan(p, stats, &model, &plan)?;
        return Ok(vec![Planned { plan, note: None }]);
    }
    if let Some(mode) = &cfg.perturb {
        let seed = cfg.seed.expect("validated config");
        let r = perturb_costs(p, stats, params, mode, seed, opts)?;
        let note = format!(
            "perturbation {mode} seed {seed}: unperturbed optimum {:.3}, regret {:.3}",
            r.baseline.total, r.regret
        );
        return Ok(vec![Planned {
            plan: r.plan,
            note: Some(note),
        }]);
    }
    let found = match cfg.mode {
        Mode::Greedy => vec![optimize_greedy(p, stats, &model, opts)?],
        Mode::Dp if cfg.top_k == 1 => vec![optimize_program(p, stats, &model, opts)?],
        Mode::Dp => optimize_top_k(p, stats, &model, opts, cfg.top_k)?,
    };
    Ok(found.into_iter().map(|plan| Planned { plan, note: None }).collect())
}

fn first_plan(cfg: &RunConfig, l: &Loaded) -> Result<Plan> {
    Ok(plans(cfg, l)?.swap_remove(0).plan)
}

/// Label names for each axis: a node's output labels, or a source's labels
/// at its first reader.
fn axis_names(p: &EinsumProgram, v: VertexId) -> Vec<String> {
    let labels = match p.node(v) {
        Some(node) => Some(&node.output_labels),
        None => p
            .consumers(v)
            .first()
            .map(|&(c, s)| &p.node(c).expect("consumer is a node").inputs[s.index()].labels),
    };
    match labels {
        Some(ls) => ls.iter().map(|l| l.as_str().to_string()).collect(),
        None => (0..p.decl(v).rank()).map(|a| format!("#{a}")).collect(),
    }
}

fn num(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn stats_report(p: &EinsumProgram, stats: &ProgramStats) -> String {
    let mut s = String::new();
    for &v in p.topo_order() {
        let decl = p.decl(v);
        let st = stats.get(v);
        let kind = if p.is_source(v) { "source" } else { "estimate" };
        let _ = write!(s, "{}{:?} {kind} nnz({})={}", decl.name, decl.bound.as_slice(), decl.name, num(st.nnz));
        for (label, d) in axis_names(p, v).iter().zip(&st.distinct) {
            let _ = write!(s, " V({label},{})={}", decl.name, num(*d));
        }
        s.push('\n');
    }
    s
}

fn cmd_stats(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let l = load(cfg)?;
    print!("{}", stats_report(&l.program, &l.stats));
    if let Some(dir) = out {
        create_dir(dir)?;
        let by_name: BTreeMap<&str, &TensorStats> = l
            .program
            .topo_order()
            .iter()
            .map(|&v| (l.program.name(v), l.stats.get(v)))
            .collect();
        let path = dir.join("stats.json");
        write(&path, &serde_json::to_string_pretty(&by_name).expect("stats serialize"))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_optimize(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let l = load(cfg)?;
    let found = plans(cfg, &l)?;
    if let Some(dir) = out {
        create_dir(dir)?;
    }
    let many = found.len() > 1;
    for (i, pl) in found.iter().enumerate() {
        println!("plan {} cost {:.3}", i + 1, pl.plan.total);
        if let Some(note) = &pl.note {
            println!("{note}");
        }
        print!("{}", pl.plan.report(&l.program));
        if let Some(dir) = out {
            let file = if many {
                format!("plan_{}.json", i + 1)
            } else {
                "plan.json".to_string()
            };
            let path = dir.join(file);
            write(&path, &pl.plan.to_json())?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn cmd_compile(cfg: &RunConfig, out: &Path) -> Result<()> {
    let l = load(cfg)?;
    let plan = first_plan(cfg, &l)?;
    let compiled = emit_program(&l.program, &plan)?;
    create_dir(out)?;
    let files = [
        ("script.sql", compiled.script.clone()),
        ("manifest.json", compiled.manifest.to_json()),
        ("plan.json", plan.to_json()),
    ];
    for (name, text) in files {
        let path = out.join(name);
        write(&path, &text)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn counter_report(c: &OpCounter) -> String {
    let mut s = format!("scalar multiplies {}\nscalar adds {}\n", c.scalar_multiplies, c.scalar_adds);
    for (op, n) in &c.tuples {
        let _ = writeln!(s, "tuples {op} {n}");
    }
    s
}

fn cmd_run(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let l = load(cfg)?;
    let plan = first_plan(cfg, &l)?;
    let mut counter = OpCounter::default();
    let rels = exec_plan(&l.program, &plan, &l.inputs, &mut counter)?;
    for node in l.program.nodes() {
        let r = &rels[&node.output.name];
        println!("{} tuples {} nonzeros {}", r.name, r.len(), r.to_sparse().nnz());
    }
    print!("{}", counter_report(&counter));
    if let Some(dir) = out {
        create_dir(dir)?;
        let mut written: Vec<PathBuf> = Vec::new();
        for (name, r) in &rels {
            let path = dir.join(format!("{name}.rel"));
            write(&path, &r.to_block_text())?;
            written.push(path);
        }
        for node in l.program.nodes() {
            let path = dir.join(format!("{}.coo", node.output.name));
            write(&path, &rels[&node.output.name].to_sparse().to_coo())?;
            written.push(path);
        }
        let path = dir.join("counters.json");
        write(&path, &serde_json::to_string_pretty(&counter).expect("counters serialize"))?;
        written.push(path);
        for p in written {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn unflatten(mut flat: usize, bound: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; bound.len()];
    for (slot, b) in idx.iter_mut().zip(bound).rev() {
        *slot = flat % b;
        flat /= b;
    }
    idx
}

fn deviation(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / got.abs().max(want.abs()).max(f64::MIN_POSITIVE)
    }
}

fn cmd_verify(cfg: &RunConfig) -> Result<()> {
    let l = load(cfg)?;
    let plan = first_plan(cfg, &l)?;
    let rels = exec_plan(&l.program, &plan, &l.inputs, &mut OpCounter::default())?;
    let oracle = dense_eval(&l.program, &l.inputs, &mut OpCounter::default())?;
    let mut worst = 0.0f64;
    let mut diffs = Vec::new();
    for node in l.program.nodes() {
        let name = &node.output.name;
        let want = &oracle[name];
        let got = rels[name].densify();
        for (flat, (&g, &w)) in got.iter().zip(&want.values).enumerate() {
            let d = deviation(g, w);
            worst = worst.max(d);
            if d > VERIFY_TOLERANCE {
                diffs.push(format!(
                    "{name}{:?}: plan {g:e}, dense {w:e}, relative deviation {d:e}",
                    unflatten(flat, want.decl.bound.as_slice())
                ));
            }
        }
    }
    println!("max relative deviation {worst:e}");
    if diffs.is_empty() {
        println!("verify: pass");
        return Ok(());
    }
    for d in diffs.iter().take(DIFF_LINES) {
        println!("{d}");
    }
    if diffs.len() > DIFF_LINES {
        println!("... {} more", diffs.len() - DIFF_LINES);
    }
    println!("verify: FAIL");
    Err(Failure::new(
        EXIT_MISMATCH,
        format!("{} entries differ beyond relative tolerance {VERIFY_TOLERANCE:e}", diffs.len()),
    ))
}

fn cmd_calibrate(out: Option<&Path>) -> Result<()> {
    let text = calibrate().to_config();
    match out {
        Some(path) => {
            write(path, &text)?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_gen(name: &str, seed: u64, out: &Path) -> Result<()> {
    let f = fixtures::load(name, seed).ok_or_else(|| {
        Failure::new(
            EXIT_USAGE,
            format!("unknown fixture `{name}`; expected one of {}", fixtures::NAMES.join(", ")),
        )
    })?;
    create_dir(out)?;
    let path = out.join(format!("{name}.ein"));
    write(&path, fixtures::source(name).expect("known fixture"))?;
    println!("{}", path.display());
    for (tensor, t) in &f.inputs {
        let path = out.join(format!("{tensor}.coo"));
        write(&path, &t.to_coo())?;
        println!("{}", path.display());
    }
    Ok(())
}
