use std::fmt;
use std::str::FromStr;

use super::{evaluate_plan, optimize_program, Plan, PlanError, SearchOptions};
use crate::cost::{CostError, CostModel, CostParams};
use crate::ir::EinsumProgram;
use crate::stats::ProgramStats;

#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    /// Every cardinality estimate times a Gamma(shape, scale) draw.
    Gamma { shape: f64, scale: f64 },
    /// One cost constant times a factor.
    Scale { name: String, factor: f64 },
}

impl FromStr for Perturbation {
    type Err = String;

    /// `gamma:A,T` or `const:NAME,FACTOR`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| format!("expected gamma:A,T or const:NAME,F, got `{s}`"))?;
        let (a, b) = rest
            .split_once(',')
            .ok_or_else(|| format!("expected two comma-separated values in `{rest}`"))?;
        let num = |x: &str| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| format!("malformed number `{x}`"))
        };
        match kind {
            "gamma" => Ok(Perturbation::Gamma {
                shape: num(a)?,
                scale: num(b)?,
            }),
            "const" => {
                let name = a.trim().to_string();
                if CostParams::default().get(&name).is_none() {
                    return Err(format!("unknown cost constant `{name}`"));
                }
                Ok(Perturbation::Scale {
                    name,
                    factor: num(b)?,
                })
            }
            _ => Err(format!("unknown perturbation kind `{kind}`")),
        }
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Perturbation::Gamma { shape, scale } => write!(f, "gamma:{shape},{scale}"),
            Perturbation::Scale { name, factor } => write!(f, "const:{name},{factor}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedPlan {
    /// Chosen under the perturbed model, costs re-evaluated without noise.
    pub plan: Plan,
    /// The unperturbed optimum.
    pub baseline: Plan,
    /// `plan.total - baseline.total`, both under the unperturbed model.
    pub regret: f64,
}

/// Re-plans under a perturbed model and prices the result with `params`.
pub fn perturb_costs(
    p: &EinsumProgram,
    stats: &ProgramStats,
    params: CostParams,
    mode: &Perturbation,
    seed: u64,
    opts: SearchOptions,
) -> Result<PerturbedPlan, PlanError> {
    let base_model = CostModel::new(params);
    let noisy = match mode {
        Perturbation::Gamma { shape, scale } => CostModel::with_gamma(params, *shape, *scale, seed)?,
        Perturbation::Scale { name, factor } => {
            if !(*factor > 0.0) {
                return Err(CostError::InvalidParam {
                    name: name.clone(),
                    message: format!("scale factor must be positive, got {factor}"),
                }
                .into());
            }
            let mut q = params;
            let v = q.get(name).ok_or_else(|| CostError::InvalidParam {
                name: name.clone(),
                message: "unknown parameter".into(),
            })?;
            q.set(name, v * factor)?;
            CostModel::new(q)
        }
    };
    let baseline = optimize_program(p, stats, &base_model, opts)?;
    let chosen = optimize_program(p, stats, &noisy, opts)?;
    let plan = evaluate_plan(p, stats, &base_model, &chosen)?;
    let regret = plan.total - baseline.total;
    Ok(PerturbedPlan {
        plan,
        baseline,
        regret,
    })
}
