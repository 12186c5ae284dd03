use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use tenrel_core::{CostParams, Plan};

fn tenrel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tenrel"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = tenrel(args);
    assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    stdout(&o)
}

fn code(args: &[&str]) -> i32 {
    tenrel(args).status.code().expect("exit code")
}

fn gen(dir: &TempDir, fixture: &str) -> PathBuf {
    let out = dir.path().join(fixture);
    ok(&["gen", fixture, "--out", s(&out)]);
    out.join(format!("{fixture}.ein"))
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn plan_costs(report: &str) -> Vec<f64> {
    report
        .lines()
        .filter_map(|l| l.strip_prefix("plan "))
        .map(|l| l.split_whitespace().nth(2).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn stats_counts_matmul_nonzeros() {
    let dir = TempDir::new().unwrap();
    let prog = gen(&dir, "matmul");
    let out = ok(&["stats", s(&prog)]);
    assert!(out.contains("nnz(U)=5"), "{out}");
    assert!(out.contains("nnz(V)=6"), "{out}");
}

#[test]
fn stats_of_empty_tensor_are_zero() {
    let dir = TempDir::new().unwrap();
    let prog = gen(&dir, "matmul");
    let empty = dir.path().join("empty.coo");
    fs::write(&empty, "U 2 4 4\n").unwrap();
    let out = ok(&["stats", s(&prog), "--tensor", &format!("U={}", s(&empty))]);
    assert!(out.contains("nnz(U)=0 V(i,U)=0 V(j,U)=0"), "{out}");
    assert!(out.contains("nnz(W)=0"), "{out}");
}

#[test]
fn stats_cover_every_gcn_intermediate() {
    let dir = TempDir::new().unwrap();
    let prog = gen(&dir, "gcn");
    let out = ok(&["stats", s(&prog), "--out", s(dir.path())]);
    assert_eq!(out.lines().filter(|l| l.contains(" estimate ")).count(), 5, "{out}");
    let json = fs::read_to_string(dir.path().join("stats.json")).unwrap();
    assert!(json.contains("\"H1\""));
}

#[test]
fn top_k_plans_are_distinct_and_sorted() {
    let dir = TempDir::new().unwrap();
    let prog = gen(&dir, "gcn");
    let plans = dir.path().join("plans");
    let out = ok(&["optimize", s(&prog), "--top-k", "3", "--out", s(&plans)]);
    let costs = plan_costs(&out);
    assert_eq!(costs.len(), 3);
    assert!(costs.windows(2).all(|w| w[0] <= w[1]), "{costs:?}");
    let read = |i: usize| Plan::from_json(&fs::read_to_string(plans.join(format!("plan_{i}.json"))).unwrap()).unwrap();
    let all: Vec<Plan> = (1..=3).map(read).collect();
    for i in 0..3 {
        for j in i + 1..3 {
            assert_ne!(all[i].assignment(), all[j].assignment());
        }
    }

    let single = ok(&["optimize", s(&prog)]);
    assert_eq!(plan_costs(&single), vec![costs[0]]);
    let greedy = ok(&["optimize", s(&prog), "--mode", "greedy"]);
    let g = plan_costs(&greedy);
    assert_eq!(g.len(), 1);
    assert!(g[0] >= costs[0]);
}

#[test]
fn compile_writes_script_and_manifest() {
    let dir = TempDir::new().unwrap();
    for (fixture, inserts, extra) in [("matmul", 1, &[][..]), ("attention", 5, &[][..]), ("chain", 2, &["--respect-annotations"][..])] {
        let prog = gen(&dir, fixture);
        let out = dir.path().join(format!("{fixture}_sql"));
        let mut args = vec!["compile", s(&prog), "--out", s(&out)];
        args.extend_from_slice(extra);
        let printed = ok(&args);
        assert!(printed.contains("script.sql") && printed.contains("manifest.json"));
        let script = fs::read_to_string(out.join("script.sql")).unwrap();
        assert_eq!(script.matches("INSERT INTO").count(), inserts, "{fixture}\n{script}");
        if fixture == "chain" {
            assert!(script.contains("STACK ("), "{script}");
        }
        let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
        assert!(manifest.contains("\"kernels\""));
    }
}

#[test]
fn verify_passes_on_fixtures() {
    let dir = TempDir::new().unwrap();
    let prog = gen(&dir, "matmul");
    let out = ok(&["verify", s(&prog)]);
    assert!(out.contains("max relative deviation 0e0"), "{out}");
    assert!(out.contains("verify: pass"));
    for fixture in ["gcn", "attention", "quantum"] {
        let prog = gen(&dir, fixture);
        assert!(ok(&["verify", s(&prog)]).contains("verify: pass"), "{fixture}");
        assert!(ok(&["verify", s(&prog), "--mode", "greedy"]).contains("verify: pass"), "{fixture}");
    }
}

#[test]
fn run_writes_dumps_and_counters() {
    let dir = TempDir::new().unwrap();
    let prog = gen(&dir, "matmul");
    let out = dir.path().join("run");
    let printed = ok(&["run", s(&prog), "--out", s(&out)]);
    assert!(printed.contains("scalar multiplies"));
    let counters: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("counters.json")).unwrap()).unwrap();
    assert!(counters["scalar_multiplies"].as_u64().unwrap() > 0);
    let w = fs::read_to_string(out.join("W.coo")).unwrap();
    assert!(w.starts_with("W 2 4 4"));
    assert_eq!(w.lines().count(), 5);
    assert!(out.join("U.rel").exists());
}

#[test]
fn inconsistent_plan_is_rejected_before_execution() {
    let dir = TempDir::new().unwrap();
    let prog = gen(&dir, "matmul");
    let plans = dir.path().join("plans");
    ok(&["optimize", s(&prog), "--out", s(&plans)]);
    let path = plans.join("plan.json");
    let mut plan = Plan::from_json(&fs::read_to_string(&path).unwrap()).unwrap();
    // Promote j on the left input only.
    plan.nodes[0].inputs[0].promoted = tenrel_core::AxisSet::from_axes([1]);
    plan.nodes[0].inputs[0].source_layout = plan.nodes[0].inputs[0].promoted;
    plan.layouts[0] = plan.nodes[0].inputs[0].promoted;
    fs::write(&path, plan.to_json()).unwrap();
    let out = dir.path().join("out");
    for args in [
        vec!["run", s(&prog), "--plan", s(&path), "--out", s(&out)],
        vec!["compile", s(&prog), "--plan", s(&path), "--out", s(&out)],
        vec!["verify", s(&prog), "--plan", s(&path)],
    ] {
        let cmd = args[0];
        let o = tenrel(&args);
        assert_eq!(o.status.code(), Some(7), "{cmd}: {}", stderr(&o));
        assert!(stdout(&o).is_empty(), "{cmd} printed results");
    }
    assert!(!out.exists());
}

#[test]
fn saved_plan_round_trips() {
    let dir = TempDir::new().unwrap();
    let prog = gen(&dir, "attention");
    let plans = dir.path().join("plans");
    let first = ok(&["optimize", s(&prog), "--out", s(&plans)]);
    let path = plans.join("plan.json");
    let again = ok(&["optimize", s(&prog), "--plan", s(&path)]);
    assert_eq!(plan_costs(&first), plan_costs(&again));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let prog = gen(&dir, "gcn");
    let p = s(&prog);

    assert_eq!(code(&["stats", s(&dir.path().join("missing.ein"))]), 1);

    let bad = dir.path().join("bad.ein");
    fs::write(&bad, "tensor A[2;\n").unwrap();
    assert_eq!(code(&["stats", s(&bad)]), 3);

    let coo = dir.path().join("bad.coo");
    fs::write(&coo, "H 2 x 4\n").unwrap();
    assert_eq!(code(&["stats", p, "--tensor", &format!("H={}", s(&coo))]), 3);

    let wrong = dir.path().join("wrong.coo");
    fs::write(&wrong, "H 2 3 3\n").unwrap();
    assert_eq!(code(&["stats", p, "--tensor", &format!("H={}", s(&wrong))]), 4);

    assert_eq!(code(&["optimize", p, "--mem-limit", "10"]), 5);
    assert_eq!(code(&["optimize", p, "--perturb", "gamma:1,1"]), 2);
    assert_eq!(code(&["optimize", p, "--top-k", "0"]), 2);
    assert_eq!(code(&["optimize", p, "--top-k", "11"]), 2);
    assert_eq!(code(&["optimize", p, "--mode", "greedy", "--top-k", "2"]), 2);
    assert_eq!(code(&["gen", "nosuch"]), 2);

    let cfg = dir.path().join("cost.cfg");
    fs::write(&cfg, "c_fixed = many\n").unwrap();
    assert_eq!(code(&["optimize", p, "--cost-config", s(&cfg)]), 3);
}

#[test]
fn perturbed_runs_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let prog = gen(&dir, "gcn");
    let args = ["optimize", s(&prog), "--perturb", "gamma:1,1", "--seed", "4"];
    let a = ok(&args);
    assert_eq!(a, ok(&args));
    assert!(a.contains("regret"));
    let c = ok(&["optimize", s(&prog), "--perturb", "const:c_fixed,0.01", "--seed", "0"]);
    assert!(c.contains("regret"));
}

#[test]
fn cost_config_changes_costs_not_choices() {
    let dir = TempDir::new().unwrap();
    let prog = gen(&dir, "gcn");
    let cfg = dir.path().join("cost.cfg");
    fs::write(&cfg, CostParams::default().scaled(7.3).to_config()).unwrap();
    let base = ok(&["optimize", s(&prog)]);
    let scaled = ok(&["optimize", s(&prog), "--cost-config", s(&cfg)]);
    let (b, k) = (plan_costs(&base)[0], plan_costs(&scaled)[0]);
    assert!((k / b - 7.3).abs() < 1e-6, "{b} {k}");
    let shapes = |r: &str| r.lines().filter(|l| l.contains('=') && l.contains('[')).map(String::from).collect::<Vec<_>>();
    assert_eq!(shapes(&base), shapes(&scaled));
}

#[test]
fn calibrate_emits_a_loadable_config() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("cost.cfg");
    ok(&["calibrate", "--out", s(&path)]);
    let params = CostParams::parse_config(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(params.c_xfer, 1.0);
    assert!(params.c_fixed > 0.0);
}
