//! Command-line arguments and the resolved run configuration.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tenrel_core::Perturbation;

#[derive(Debug, Parser)]
#[command(name = "tenrel", version, about = "Tensor-relational planning, SQL generation and execution for EinSum programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print exact source statistics and propagated estimates.
    Stats {
        #[command(flatten)]
        input: InputArgs,
        /// Also write the statistics as JSON to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search for the cheapest decompositions and print them.
    Optimize {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        search: SearchArgs,
        /// Write each plan as JSON to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the SQL script and kernel manifest for a plan.
    Compile {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        search: SearchArgs,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Execute a plan on the in-memory engine.
    Run {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        search: SearchArgs,
        /// Write relation dumps, result tensors and counters to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute a plan and compare every result with the dense evaluator.
    Verify {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Measure cost constants on this machine.
    Calibrate {
        /// Write the constants to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a bundled example program and random inputs.
    Gen {
        /// One of matmul, chain, mlp, gcn, attention, quantum.
        fixture: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Program file.
    pub program: PathBuf,
    /// Directory with one NAME.coo file per source tensor. Defaults to the
    /// program's directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Data file for one source tensor; overrides --data for that tensor.
    #[arg(long = "tensor", value_name = "NAME=PATH", value_parser = parse_tensor_arg)]
    pub tensors: Vec<(String, PathBuf)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Dp,
    Greedy,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long, value_enum, default_value_t = Mode::Dp)]
    pub mode: Mode,
    /// Number of plans to report (dp mode only).
    #[arg(long, default_value_t = 1)]
    pub top_k: usize,
    /// Seed for the perturbation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `gamma:A,T` noise on estimates or `const:NAME,FACTOR` on one constant.
    #[arg(long, value_name = "SPEC")]
    pub perturb: Option<Perturbation>,
    /// Kernel memory limit in bytes.
    #[arg(long, value_name = "BYTES")]
    pub mem_limit: Option<f64>,
    /// Treat upper-case labels in the program as fixed decompositions.
    #[arg(long)]
    pub respect_annotations: bool,
    /// File of `name = value` cost constants.
    #[arg(long, value_name = "PATH")]
    pub cost_config: Option<PathBuf>,
    /// Use this plan (JSON) instead of searching.
    #[arg(long, value_name = "PATH")]
    pub plan: Option<PathBuf>,
}

fn parse_tensor_arg(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=PATH, got `{s}`"))?;
    if name.is_empty() || path.is_empty() {
        return Err(format!("expected NAME=PATH, got `{s}`"));
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

/// Everything a command needs to load, plan and run a program.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub program: PathBuf,
    pub data_dir: PathBuf,
    pub tensors: Vec<(String, PathBuf)>,
    pub cost_config: Option<PathBuf>,
    pub plan: Option<PathBuf>,
    pub mode: Mode,
    pub top_k: usize,
    pub seed: Option<u64>,
    pub perturb: Option<Perturbation>,
    pub mem_limit: Option<f64>,
    pub respect_annotations: bool,
}

impl RunConfig {
    pub fn new(input: InputArgs, search: Option<SearchArgs>) -> Result<Self, String> {
        let data_dir = input.data.unwrap_or_else(|| {
            input
                .program
                .parent()
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("."))
        });
        let mut cfg = Self {
            program: input.program,
            data_dir,
            tensors: input.tensors,
            cost_config: None,
            plan: None,
            mode: Mode::Dp,
            top_k: 1,
            seed: None,
            perturb: None,
            mem_limit: None,
            respect_annotations: false,
        };
        if let Some(s) = search {
            cfg.cost_config = s.cost_config;
            cfg.plan = s.plan;
            cfg.mode = s.mode;
            cfg.top_k = s.top_k;
            cfg.seed = s.seed;
            cfg.perturb = s.perturb;
            cfg.mem_limit = s.mem_limit;
            cfg.respect_annotations = s.respect_annotations;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), String> {
        if self.top_k == 0 {
            return Err("--top-k must be at least 1".into());
        }
        if self.perturb.is_some() && self.seed.is_none() {
            return Err("--perturb needs --seed".into());
        }
        if self.top_k > 1 && (self.mode == Mode::Greedy || self.perturb.is_some() || self.plan.is_some()) {
            return Err("--top-k above 1 needs dp mode without --perturb or --plan".into());
        }
        if self.perturb.is_some() && self.mode == Mode::Greedy {
            return Err("--perturb applies to dp mode only".into());
        }
        if let Some(m) = self.mem_limit {
            if !(m > 0.0) {
                return Err(format!("--mem-limit must be positive, got {m}"));
            }
        }
        Ok(())
    }
}
