use std::path::Path;
use std::time::Instant;

use optrule::cate::{assign_folds, fit_super_learner, CvMse, OutcomeRegression, SuperLearnerConfig};
use optrule::data::{
    load_csv, load_population_csv, simulate, write_csv, write_truth_csv, PotentialPopulation, TrialDataset,
};
use optrule::oracle::{solve_constrained, solve_cost_constrained, solve_heterogeneity, solve_unconstrained, OracleSolution};
use optrule::rng::derive_seed;
use optrule::rules::{
    adjusted_baselines, constrained_threshold, evaluate_mask_on_truth, evaluate_on_sample, evaluate_on_truth,
    rule_constrained, rule_cost, rule_heterogeneity, rule_unconstrained, treated_mask, AdjustedBaselines,
    RuleContext, RuleEvaluation, TreatmentRule,
};
use optrule::tmle::{cv_tmle, TmleConfig, TmleReport, MIN_RECORDS};
use serde::Serialize;

use crate::args::{
    Cli, Command, CompareArgs, ContextArgs, EvaluateArgs, FitArgs, LearnerArgs, OracleArgs, SimulateArgs, TmleArgs,
};
use crate::report::{to_text, write_atomic, ExtF64, Report, Timing, SCHEMA_VERSION};
use crate::CliError;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Oracle(a) => oracle_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Compare(a) => compare_cmd(a),
    }
}

fn write_report(
    path: &Path,
    command: &str,
    config: &impl Serialize,
    results: &impl Serialize,
    warnings: Vec<String>,
    started: Option<Instant>,
) -> Result<(), CliError> {
    let report = Report {
        schema_version: SCHEMA_VERSION,
        command: command.into(),
        config: serde_json::to_value(config)?,
        results: serde_json::to_value(results)?,
        timing: started.map(|t| Timing {
            seconds: t.elapsed().as_secs_f64(),
        }),
        warnings,
    };
    write_atomic(path, to_text(&report)?.as_bytes())
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> optrule::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

// ---------------------------------------------------------------- simulate

#[derive(Serialize)]
struct SimulateResults {
    n: usize,
    treated: usize,
    covariate_dim: usize,
    /// `E[max(cate(C), 0)]` of the design.
    true_unconstrained_gain: f64,
    sample_mean_effect: f64,
    sample_unconstrained_gain: f64,
}

fn simulate_cmd(a: &SimulateArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let sim = simulate(&a.dgp.spec())?;
    let data = csv_bytes(|b| write_csv(&sim.data, b))?;
    let truth = csv_bytes(|b| write_truth_csv(&sim.population, &sim.true_cate, b))?;
    write_atomic(&a.data, &data)?;
    write_atomic(&a.truth, &truth)?;
    if let Some(path) = &a.report {
        let n = sim.data.len();
        let effects = sim.population.effects();
        let results = SimulateResults {
            n,
            treated: sim.data.records().iter().filter(|r| r.treated).count(),
            covariate_dim: sim.data.covariate_dim(),
            true_unconstrained_gain: sim.dgp.unconstrained_gain(),
            sample_mean_effect: effects.iter().sum::<f64>() / n as f64,
            sample_unconstrained_gain: effects.iter().map(|e| e.max(0.0)).sum::<f64>() / n as f64,
        };
        write_report(path, "simulate", a, &results, Vec::new(), a.timing.then_some(started))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- fit

#[derive(Debug, Clone, Serialize)]
struct RuleSummary {
    context: &'static str,
    threshold: ExtF64,
    degenerate: bool,
    treated_count: usize,
    treated_fraction: f64,
}

impl RuleSummary {
    fn new(rule: &TreatmentRule, mask: &[bool]) -> Self {
        let treated_count = mask.iter().filter(|&&t| t).count();
        Self {
            context: rule.context.name(),
            threshold: ExtF64(rule.threshold),
            degenerate: rule.degenerate,
            treated_count,
            treated_fraction: treated_count as f64 / mask.len().max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct CateSummary {
    learners: Vec<String>,
    weights: Vec<f64>,
    cv_mse: Option<CvMse>,
}

#[derive(Debug, Clone, Serialize)]
struct FitResults {
    rule: RuleSummary,
    cate: CateSummary,
    /// CV-TMLE for the constrained and unconstrained contexts.
    tmle: Option<TmleReport>,
    /// Outcome-regression plug-in on the sample; biased.
    evaluation: Option<RuleEvaluation>,
    adjusted_baselines: Option<AdjustedBaselines>,
    oracle_comparison: Option<RegretSummary>,
}

struct FitOutcome {
    rule: TreatmentRule,
    results: FitResults,
    warnings: Vec<String>,
}

impl TmleArgs {
    fn validate(&self) -> Result<(), CliError> {
        if !(self.clamp > 0.0 && self.clamp < 0.5) {
            return Err(CliError::Usage(format!("--clamp must lie in (0, 0.5), got {}", self.clamp)));
        }
        Ok(())
    }
}

fn fit_pipeline(
    data: &TrialDataset,
    ctx: &ContextArgs,
    la: &LearnerArgs,
    ta: &TmleArgs,
    run_tmle: bool,
) -> Result<FitOutcome, CliError> {
    let library = la.library()?;
    let mut warnings = Vec::new();
    let folds = assign_folds(data.len(), la.folds, la.seed)?;
    let model = fit_super_learner(data, &SuperLearnerConfig::new(library.clone(), la.f_mode), &folds)?;
    warnings.extend(model.warnings().iter().cloned());
    let cate = CateSummary {
        learners: model.labels().to_vec(),
        weights: model.weights().to_vec(),
        cv_mse: model.cv_mse().cloned(),
    };

    let rule = match ctx.rule_context() {
        RuleContext::Constrained { q } => rule_constrained(model, data, q)?,
        RuleContext::Unconstrained => rule_unconstrained(model),
        RuleContext::Heterogeneity => rule_heterogeneity(model, data)?,
        RuleContext::CostDelta { .. } | RuleContext::CostBudget { .. } => rule_cost(model, data, ctx.cost_mode())?,
    };
    if rule.degenerate {
        warnings.push("all CATE predictions are equal; the heterogeneity split is degenerate and treats nobody".into());
    }
    let mask = rule.mask_dataset(data)?;

    let all: Vec<usize> = (0..data.len()).collect();
    let (evaluation, adjusted) =
        match OutcomeRegression::fit_stacked(data, &all, &library, la.folds.min(5), derive_seed(la.seed, 1)) {
            Ok(outcome) => {
                warnings.extend(outcome.warnings.iter().cloned());
                (
                    Some(evaluate_on_sample(&rule, &outcome, data)?),
                    Some(adjusted_baselines(data, &outcome)),
                )
            }
            Err(e) => {
                warnings.push(format!("plug-in evaluation skipped: {e}"));
                (None, None)
            }
        };

    let tmle = match ctx.tmle_context() {
        Some(_) if run_tmle && data.len() < MIN_RECORDS => {
            warnings.push(format!(
                "CV-TMLE skipped: needs at least {MIN_RECORDS} records, found {}",
                data.len()
            ));
            None
        }
        Some(context) if run_tmle => {
            let config = TmleConfig {
                learners: library.clone(),
                outcome_learners: library,
                f_mode: la.f_mode,
                folds: la.folds,
                inner_folds: la.folds,
                clamp: ta.clamp,
                bounds: ta.bounds,
                alt_variance: ta.alt_variance,
                seed: la.seed,
            };
            let report = cv_tmle(data, context, &config)?;
            warnings.extend(report.warnings.iter().cloned());
            Some(report)
        }
        _ => None,
    };

    Ok(FitOutcome {
        results: FitResults {
            rule: RuleSummary::new(&rule, &mask),
            cate,
            tmle,
            evaluation,
            adjusted_baselines: adjusted,
            oracle_comparison: None,
        },
        rule,
        warnings,
    })
}

fn fit_cmd(a: &FitArgs) -> Result<(), CliError> {
    let started = Instant::now();
    a.context.validate()?;
    a.learners.validate()?;
    a.tmle.validate()?;
    let data = load_csv(&a.data, a.randomized)?;
    let out = fit_pipeline(&data, &a.context, &a.learners, &a.tmle, true)?;
    if let Some(path) = &a.rule_out {
        write_atomic(path, to_text(&out.rule)?.as_bytes())?;
    }
    write_report(&a.report, "fit", a, &out.results, out.warnings, a.timing.then_some(started))
}

// ---------------------------------------------------------------- regret

/// Oracle versus achieved objective of a rule on a potential-outcome population.
#[derive(Debug, Clone, Serialize)]
pub struct RegretSummary {
    /// `value`, `net_value` (value minus mean `δ` spent) or `heterogeneity`.
    pub metric: &'static str,
    pub oracle: f64,
    pub achieved: f64,
    /// `oracle - achieved`.
    pub regret: f64,
    pub oracle_evaluation: RuleEvaluation,
    pub evaluation: RuleEvaluation,
}

fn effect_mask(pop: &PotentialPopulation, margin: impl Fn(usize) -> f64) -> Vec<bool> {
    (0..pop.len()).map(|i| pop.units()[i].effect() - margin(i) > 0.0).collect()
}

fn net_value(pop: &PotentialPopulation, mask: &[bool], eval: &RuleEvaluation, delta: impl Fn(&[f64]) -> f64) -> f64 {
    let spent: f64 = pop
        .units()
        .iter()
        .zip(mask)
        .filter(|(_, &t)| t)
        .map(|(u, _)| u.mass * delta(&u.covariates))
        .sum();
    eval.value - spent / pop.total_mass()
}

/// The constrained oracle is the best rule treating *at most* the rule's quota
/// (top positive effects), matching what a fitted constrained rule may do.
pub fn regret_on_truth(rule: &TreatmentRule, pop: &PotentialPopulation) -> Result<RegretSummary, CliError> {
    let mask = rule.mask_population(pop)?;
    let evaluation = evaluate_mask_on_truth(&mask, pop)?;
    let effects = pop.effects();
    let (metric, oracle_mask) = match &rule.context {
        RuleContext::Constrained { q } => {
            let t = constrained_threshold(&effects, *q)?;
            ("value", treated_mask(&effects, t))
        }
        RuleContext::Unconstrained => ("value", effect_mask(pop, |_| 0.0)),
        RuleContext::CostDelta { delta } => ("net_value", effect_mask(pop, |i| delta.at(&pop.units()[i].covariates))),
        RuleContext::CostBudget { budget } => {
            let costs: Vec<f64> = pop
                .units()
                .iter()
                .map(|u| u.cost)
                .collect::<Option<_>>()
                .ok_or_else(|| optrule::Error::Validation("budget rule needs a cost column in the truth file".into()))?;
            let sol = solve_cost_constrained(pop, &costs, budget * pop.total_mass())?;
            ("value", sol.partition.mask().to_vec())
        }
        RuleContext::Heterogeneity => ("heterogeneity", solve_heterogeneity(pop)?.partition.mask().to_vec()),
    };
    let oracle_evaluation = evaluate_mask_on_truth(&oracle_mask, pop)?;
    let (oracle, achieved) = match (&rule.context, metric) {
        (RuleContext::CostDelta { delta }, _) => (
            net_value(pop, &oracle_mask, &oracle_evaluation, |c| delta.at(c)),
            net_value(pop, &mask, &evaluation, |c| delta.at(c)),
        ),
        (_, "heterogeneity") => (
            oracle_evaluation.heterogeneity.unwrap_or(0.0),
            evaluation.heterogeneity.unwrap_or(0.0),
        ),
        _ => (oracle_evaluation.value, evaluation.value),
    };
    Ok(RegretSummary {
        metric,
        oracle,
        achieved,
        regret: oracle - achieved,
        oracle_evaluation,
        evaluation,
    })
}

// ---------------------------------------------------------------- oracle

#[derive(Serialize)]
struct OracleSection {
    /// Effect cutoff (effect per unit cost in the cost context).
    threshold: ExtF64,
    objective_value: f64,
    degenerate: bool,
    treated_count: usize,
    evaluation: RuleEvaluation,
}

impl OracleSection {
    fn new(sol: &OracleSolution, pop: &PotentialPopulation) -> Result<Self, CliError> {
        Ok(Self {
            threshold: ExtF64(sol.threshold),
            objective_value: sol.objective_value,
            degenerate: sol.degenerate,
            treated_count: sol.partition.treated_count(),
            evaluation: evaluate_mask_on_truth(sol.partition.mask(), pop)?,
        })
    }
}

#[derive(Serialize)]
struct OracleResults {
    n: usize,
    constrained: OracleSection,
    unconstrained: OracleSection,
    cost: Option<OracleSection>,
    heterogeneity: OracleSection,
}

fn oracle_cmd(a: &OracleArgs) -> Result<(), CliError> {
    let started = Instant::now();
    if !(0.0..=1.0).contains(&a.q) {
        return Err(CliError::Usage(format!("--q must lie in [0, 1], got {}", a.q)));
    }
    if let Some(b) = a.budget {
        if !(b > 0.0 && b.is_finite()) {
            return Err(CliError::Usage(format!("--budget must be positive, got {b}")));
        }
    }
    let pop = load_population_csv(&a.truth)?;
    let mut warnings = Vec::new();
    let cost = match a.budget {
        Some(budget) => {
            let costs: Vec<f64> = pop
                .units()
                .iter()
                .map(|u| u.cost)
                .collect::<Option<_>>()
                .ok_or_else(|| optrule::Error::Validation("--budget needs a cost column in the truth file".into()))?;
            let sol = solve_cost_constrained(&pop, &costs, budget * pop.total_mass())?;
            Some(OracleSection::new(&sol, &pop)?)
        }
        None => {
            warnings.push("cost context skipped: no --budget given".into());
            None
        }
    };
    let results = OracleResults {
        n: pop.len(),
        constrained: OracleSection::new(&solve_constrained(&pop, a.q)?, &pop)?,
        unconstrained: OracleSection::new(&solve_unconstrained(&pop)?, &pop)?,
        cost,
        heterogeneity: OracleSection::new(&solve_heterogeneity(&pop)?, &pop)?,
    };
    write_report(&a.report, "oracle", a, &results, warnings, a.timing.then_some(started))
}

// ---------------------------------------------------------------- evaluate

#[derive(Serialize)]
struct EvaluateResults {
    rule: RuleSummary,
    evaluation: RuleEvaluation,
    oracle_comparison: RegretSummary,
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let rule: TreatmentRule = serde_json::from_str(&std::fs::read_to_string(&a.rule)?)?;
    let pop = load_population_csv(&a.truth)?;
    let mask = rule.mask_population(&pop)?;
    let results = EvaluateResults {
        rule: RuleSummary::new(&rule, &mask),
        evaluation: evaluate_on_truth(&rule, &pop)?,
        oracle_comparison: regret_on_truth(&rule, &pop)?,
    };
    write_report(&a.report, "evaluate", a, &results, Vec::new(), a.timing.then_some(started))
}

// ---------------------------------------------------------------- compare

fn compare_cmd(a: &CompareArgs) -> Result<(), CliError> {
    let started = Instant::now();
    a.context.validate()?;
    let la = a.learner_args();
    la.validate()?;
    a.tmle_args.validate()?;
    if a.context.budget.is_some() && !a.dgp.costs {
        return Err(CliError::Usage("--budget needs --costs".into()));
    }
    let sim = simulate(&a.dgp.spec())?;
    let mut out = fit_pipeline(&sim.data, &a.context, &la, &a.tmle_args, a.tmle)?;
    out.results.oracle_comparison = Some(regret_on_truth(&out.rule, &sim.population)?);
    write_report(&a.report, "compare", a, &out.results, out.warnings, a.timing.then_some(started))
}
