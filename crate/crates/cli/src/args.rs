use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use optrule::cate::{FMode, LearnerSpec};
use optrule::data::Dgp;
use optrule::rules::{CostMode, Delta, RuleContext};
use optrule::tmle::TmleContext;
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "optrule", version, about = "Estimate and audit threshold treatment rules")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a trial and write the observed data and the potential-outcome truth.
    Simulate(SimulateArgs),
    /// Fit the CATE ensemble and a rule on trial data; CV-TMLE for the constrained and unconstrained contexts.
    Fit(FitArgs),
    /// Exact rules for all four contexts on a potential-outcome file.
    Oracle(OracleArgs),
    /// Score a saved rule against a potential-outcome file.
    Evaluate(EvaluateArgs),
    /// Simulate, fit and solve the oracle on the same units; report regret.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DgpArgs {
    /// constant_effect | linear_cate | crossover_cate | null_effect
    #[arg(long)]
    pub dgp: Dgp,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.5)]
    pub treat_prob: f64,
    /// Attach the cost `0.5 + c1` to every unit.
    #[arg(long)]
    pub costs: bool,
}

impl DgpArgs {
    pub fn spec(&self) -> optrule::data::DgpSpec {
        optrule::data::DgpSpec::new(self.dgp, self.n, self.seed)
            .with_dim(self.dim)
            .with_noise(self.noise)
            .with_treat_prob(self.treat_prob)
            .with_costs(self.costs)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub dgp: DgpArgs,
    /// Observed-data CSV to write.
    #[arg(long)]
    pub data: PathBuf,
    /// Potential-outcome CSV to write.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextName {
    Constrained,
    Unconstrained,
    Cost,
    Heterogeneity,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ContextArgs {
    #[arg(long, value_enum, default_value = "unconstrained")]
    pub context: ContextName,
    /// Largest treated fraction (constrained context).
    #[arg(long)]
    pub q: Option<f64>,
    /// Per-capita budget on the summed cost of the treated (cost context).
    #[arg(long)]
    pub budget: Option<f64>,
    /// Constant margin δ the CATE must exceed (cost context).
    #[arg(long)]
    pub delta_const: Option<f64>,
}

impl ContextArgs {
    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: &str| Err(CliError::Usage(m.to_string()));
        match self.context {
            ContextName::Constrained => match self.q {
                Some(q) if q > 0.0 && q < 1.0 => {}
                Some(q) => return usage(&format!("--q must lie in (0, 1), got {q}")),
                None => return usage("--context constrained needs --q"),
            },
            _ if self.q.is_some() => return usage("--q only applies to --context constrained"),
            _ => {}
        }
        match self.context {
            ContextName::Cost => match (self.budget, self.delta_const) {
                (Some(b), None) if b > 0.0 && b.is_finite() => {}
                (Some(b), None) => return usage(&format!("--budget must be positive, got {b}")),
                (None, Some(d)) if d.is_finite() => {}
                (None, Some(_)) => return usage("--delta-const must be finite"),
                _ => return usage("--context cost needs exactly one of --budget or --delta-const"),
            },
            _ if self.budget.is_some() || self.delta_const.is_some() => {
                return usage("--budget and --delta-const only apply to --context cost")
            }
            _ => {}
        }
        Ok(())
    }

    pub fn rule_context(&self) -> RuleContext {
        match self.context {
            ContextName::Constrained => RuleContext::Constrained { q: self.q.unwrap() },
            ContextName::Unconstrained => RuleContext::Unconstrained,
            ContextName::Cost => match self.cost_mode() {
                CostMode::Budget(budget) => RuleContext::CostBudget { budget },
                CostMode::Delta(delta) => RuleContext::CostDelta { delta },
            },
            ContextName::Heterogeneity => RuleContext::Heterogeneity,
        }
    }

    pub fn cost_mode(&self) -> CostMode {
        match (self.budget, self.delta_const) {
            (Some(b), _) => CostMode::Budget(b),
            (_, d) => CostMode::Delta(Delta::Constant { value: d.unwrap_or(0.0) }),
        }
    }

    /// Contexts with CV-TMLE inference.
    pub fn tmle_context(&self) -> Option<TmleContext> {
        match self.context {
            ContextName::Constrained => Some(TmleContext::Constrained { q: self.q.unwrap() }),
            ContextName::Unconstrained => Some(TmleContext::Unconstrained),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LearnerArgs {
    /// Comma-separated candidates: constant, linear[:ridge], knn[:k], stump[:depth].
    #[arg(long, default_value = "constant,linear,knn,stump")]
    pub learners: String,
    #[arg(long, default_value = "outcome")]
    pub f_mode: FMode,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl LearnerArgs {
    pub fn library(&self) -> Result<Vec<LearnerSpec>, CliError> {
        Ok(LearnerSpec::parse_list(&self.learners)?)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.library()?;
        if self.folds < 2 {
            return Err(CliError::Usage(format!("--folds must be at least 2, got {}", self.folds)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TmleArgs {
    /// Probabilities are clamped to [clamp, 1 - clamp] before logit.
    #[arg(long, default_value_t = optrule::tmle::DEFAULT_CLAMP)]
    pub clamp: f64,
    /// Also report the plain influence-function variance.
    #[arg(long)]
    pub alt_variance: bool,
    /// Outcome bounds `lo,hi` for the [0, 1] rescaling; observed range by default.
    #[arg(long, value_parser = parse_bounds)]
    pub bounds: Option<(f64, f64)>,
}

fn parse_bounds(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower bound `{lo}`"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper bound `{hi}`"))?;
    if !(hi > lo) {
        return Err(format!("need lo < hi, got {lo},{hi}"));
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// Trial CSV with columns y, a, optional p and cost, and covariates.
    #[arg(long)]
    pub data: PathBuf,
    /// Randomization probability for files without a `p` column.
    #[arg(long)]
    pub randomized: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub context: ContextArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub learners: LearnerArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub tmle: TmleArgs,
    #[arg(long)]
    pub report: PathBuf,
    /// Save the fitted rule for `evaluate`.
    #[arg(long)]
    pub rule_out: Option<PathBuf>,
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OracleArgs {
    /// Potential-outcome CSV with columns y0, y1, optional mass and cost, and covariates.
    #[arg(long)]
    pub truth: PathBuf,
    /// Exact treated proportion for the constrained context.
    #[arg(long, default_value_t = 0.2)]
    pub q: f64,
    /// Per-capita budget for the cost context (needs a cost column).
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    /// Rule file written by `fit --rule-out`.
    #[arg(long)]
    pub rule: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub dgp: DgpArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub context: ContextArgs,
    /// Learner seed; the simulation uses `--seed`.
    #[arg(long, default_value = "constant,linear,knn,stump")]
    pub learners: String,
    #[arg(long, default_value = "outcome")]
    pub f_mode: FMode,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Also run CV-TMLE (constrained and unconstrained contexts).
    #[arg(long)]
    pub tmle: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub tmle_args: TmleArgs,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub timing: bool,
}

impl CompareArgs {
    pub fn learner_args(&self) -> LearnerArgs {
        LearnerArgs {
            learners: self.learners.clone(),
            f_mode: self.f_mode,
            folds: self.folds,
            seed: self.dgp.seed,
        }
    }
}
