//! Threshold treatment rules and their evaluation.
//!
//! Every rule treats a unit when its score strictly exceeds a threshold;
//! units tied at the threshold are left untreated.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cate::{CateModel, OutcomeModel};
use crate::data::{Dgp, PotentialPopulation, TrialDataset};
use crate::{Error, Result};

/// Relative slack applied to `q n` and to budgets before flooring, so that
/// products like `0.29 * 100 = 28.999999999999996` still allow 29 units.
pub const QUOTA_SLACK: f64 = 1e-12;

/// Largest count allowed by a proportion `q` of `n` units.
pub fn quota(q: f64, n: usize) -> usize {
    ((q * n as f64 * (1.0 + QUOTA_SLACK)).floor() as usize).min(n)
}

fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite score".into()));
    }
    Ok(())
}

/// `δ = max(0, b_(m+1))` with `b_(1) >= ... >= b_(n)` and `m = floor(q n)`: the
/// positive part of the smallest `δ` with `(1/n) #{b > δ} <= q`.
pub fn constrained_threshold(scores: &[f64], q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Precondition(format!("q must lie in (0, 1), got {q}")));
    }
    check_scores(scores)?;
    let m = quota(q, scores.len());
    if m >= scores.len() {
        return Ok(0.0);
    }
    let order = descending_order(scores);
    Ok(scores[order[m]].max(0.0))
}

/// Greedy prefix by `score / cost`, restricted to positive scores, whose summed
/// cost stays within `budget_total`. Units tied on the ratio enter or leave
/// together. Returns the cutoff `k >= 0`; the rule treats `ratio > k`.
pub fn budget_cutoff(scores: &[f64], costs: &[f64], budget_total: f64) -> Result<f64> {
    if scores.len() != costs.len() {
        return Err(Error::Precondition("one cost per score required".into()));
    }
    if !(budget_total > 0.0) {
        return Err(Error::Precondition(format!("budget must be positive, got {budget_total}")));
    }
    check_scores(scores)?;
    if costs.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
        return Err(Error::Precondition("costs must be positive and finite".into()));
    }
    let ratios: Vec<f64> = scores.iter().zip(costs).map(|(s, c)| s / c).collect();
    let order = descending_order(&ratios);
    let cap = budget_total * (1.0 + QUOTA_SLACK);
    let mut spent = 0.0;
    let mut j = 0;
    while j < order.len() {
        let r = ratios[order[j]];
        if r <= 0.0 {
            break;
        }
        let mut end = j;
        let mut block_cost = 0.0;
        while end < order.len() && ratios[order[end]] == r {
            block_cost += costs[order[end]];
            end += 1;
        }
        if spent + block_cost > cap {
            break;
        }
        spent += block_cost;
        j = end;
    }
    Ok(if j < order.len() { ratios[order[j]].max(0.0) } else { 0.0 })
}

/// Split of the sorted scores maximizing `mean(T) - mean(S)`, considering only
/// splits between distinct values. Returns the threshold (the largest untreated
/// score) and whether the scores were all equal, in which case nobody is treated
/// and the threshold is the common score.
pub fn heterogeneity_split(scores: &[f64]) -> Result<(f64, bool)> {
    check_scores(scores)?;
    let n = scores.len();
    if n == 0 {
        return Err(Error::Precondition("no scores".into()));
    }
    let order = descending_order(scores);
    let total: f64 = scores.iter().sum();
    let mut top = 0.0;
    let mut best: Option<(f64, usize)> = None;
    for m in 1..n {
        top += scores[order[m - 1]];
        if scores[order[m - 1]] == scores[order[m]] {
            continue;
        }
        let gap = top / m as f64 - (total - top) / (n - m) as f64;
        if best.is_none_or(|(g, _)| gap > g) {
            best = Some((gap, m));
        }
    }
    Ok(match best {
        Some((_, m)) => (scores[order[m]], false),
        None => (scores[order[0]], true),
    })
}

/// `score > threshold` elementwise.
pub fn treated_mask(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s > threshold).collect()
}

/// Margin `δ(c)` a CATE must exceed in the cost-penalized context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Delta {
    Constant { value: f64 },
    Affine { intercept: f64, coefficients: Vec<f64> },
}

impl Delta {
    pub fn at(&self, c: &[f64]) -> f64 {
        match self {
            Delta::Constant { value } => *value,
            Delta::Affine {
                intercept,
                coefficients,
            } => intercept + coefficients.iter().zip(c).map(|(b, x)| b * x).sum::<f64>(),
        }
    }
}

/// Where a rule's CATE score comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreSource {
    Model { model: Box<CateModel> },
    /// The closed-form CATE of a simulation design.
    TrueCate { dgp: Dgp },
    /// A precomputed score stored as covariate `index`.
    Covariate { index: usize },
}

impl From<CateModel> for ScoreSource {
    fn from(model: CateModel) -> Self {
        ScoreSource::Model { model: Box::new(model) }
    }
}

impl ScoreSource {
    fn check_dim(&self, dim: usize) -> Result<()> {
        let ok = match self {
            ScoreSource::Model { model } => model.covariate_dim() == dim,
            ScoreSource::TrueCate { .. } => dim >= 1,
            ScoreSource::Covariate { index } => *index < dim,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!("score source does not apply to {dim} covariates")))
        }
    }

    fn eval(&self, c: &[f64]) -> f64 {
        match self {
            ScoreSource::Model { model } => model.predict_unchecked(c),
            ScoreSource::TrueCate { dgp } => dgp.cate(c),
            ScoreSource::Covariate { index } => c[*index],
        }
    }

    pub fn score(&self, c: &[f64]) -> Result<f64> {
        self.check_dim(c.len())?;
        Ok(self.eval(c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleContext {
    Constrained { q: f64 },
    Unconstrained,
    CostDelta { delta: Delta },
    /// Per-capita budget: summed cost of the treated at most `budget · n`.
    CostBudget { budget: f64 },
    Heterogeneity,
}

impl RuleContext {
    pub fn name(&self) -> &'static str {
        match self {
            RuleContext::Constrained { .. } => "constrained",
            RuleContext::Unconstrained => "unconstrained",
            RuleContext::CostDelta { .. } | RuleContext::CostBudget { .. } => "cost",
            RuleContext::Heterogeneity => "heterogeneity",
        }
    }
}

impl fmt::Display for RuleContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentRule {
    pub source: ScoreSource,
    pub context: RuleContext,
    /// Cutoff on the rule's margin: `b̂(c)`, `b̂(c) - δ(c)` or `b̂(c) / cost(c)`.
    pub threshold: f64,
    pub degenerate: bool,
}

impl TreatmentRule {
    /// Threshold the scores of `rows` (with their `costs`, when the context needs them).
    pub fn fit(source: ScoreSource, context: RuleContext, covariates: &[&[f64]], costs: Option<&[f64]>) -> Result<Self> {
        if let Some(c) = covariates.first() {
            source.check_dim(c.len())?;
        }
        let scores: Vec<f64> = covariates.iter().map(|c| source.eval(c)).collect();
        let mut degenerate = false;
        let threshold = match &context {
            RuleContext::Constrained { q } => constrained_threshold(&scores, *q)?,
            RuleContext::Unconstrained | RuleContext::CostDelta { .. } => 0.0,
            RuleContext::CostBudget { budget } => {
                let costs = costs.ok_or_else(|| {
                    Error::Validation("budget mode needs a cost for every record".into())
                })?;
                budget_cutoff(&scores, costs, budget * scores.len() as f64)?
            }
            RuleContext::Heterogeneity => {
                let (t, d) = heterogeneity_split(&scores)?;
                degenerate = d;
                t
            }
        };
        if let RuleContext::CostDelta { delta } = &context {
            if covariates.iter().any(|c| !delta.at(c).is_finite()) {
                return Err(Error::Validation("δ(c) is not finite on every record".into()));
            }
        }
        Ok(Self {
            source,
            context,
            threshold,
            degenerate,
        })
    }

    pub fn cost_scaled(&self) -> bool {
        matches!(self.context, RuleContext::CostBudget { .. })
    }

    /// The quantity compared against the threshold.
    pub fn margin(&self, c: &[f64], cost: Option<f64>) -> Result<f64> {
        let score = self.source.score(c)?;
        Ok(match &self.context {
            RuleContext::CostDelta { delta } => score - delta.at(c),
            RuleContext::CostBudget { .. } => {
                let cost = cost
                    .filter(|c| *c > 0.0)
                    .ok_or_else(|| Error::Validation("cost-scaled rule needs a positive cost".into()))?;
                score / cost
            }
            _ => score,
        })
    }

    pub fn treats(&self, c: &[f64], cost: Option<f64>) -> Result<bool> {
        Ok(self.margin(c, cost)? > self.threshold)
    }

    pub fn mask_dataset(&self, data: &TrialDataset) -> Result<Vec<bool>> {
        data.records().iter().map(|r| self.treats(&r.covariates, r.cost)).collect()
    }

    pub fn mask_population(&self, pop: &PotentialPopulation) -> Result<Vec<bool>> {
        pop.units().iter().map(|u| self.treats(&u.covariates, u.cost)).collect()
    }
}

fn rows(data: &TrialDataset) -> Vec<&[f64]> {
    data.records().iter().map(|r| r.covariates.as_slice()).collect()
}

fn dataset_costs(data: &TrialDataset) -> Option<Vec<f64>> {
    data.records().iter().map(|r| r.cost).collect()
}

/// Treat at most a fraction `q`, largest positive scores first.
pub fn rule_constrained(source: impl Into<ScoreSource>, data: &TrialDataset, q: f64) -> Result<TreatmentRule> {
    TreatmentRule::fit(source.into(), RuleContext::Constrained { q }, &rows(data), None)
}

/// Treat whenever the score is positive.
pub fn rule_unconstrained(source: impl Into<ScoreSource>) -> TreatmentRule {
    TreatmentRule {
        source: source.into(),
        context: RuleContext::Unconstrained,
        threshold: 0.0,
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    Delta(Delta),
    /// Per-capita budget.
    Budget(f64),
}

pub fn rule_cost(source: impl Into<ScoreSource>, data: &TrialDataset, mode: CostMode) -> Result<TreatmentRule> {
    match mode {
        CostMode::Delta(delta) => TreatmentRule::fit(source.into(), RuleContext::CostDelta { delta }, &rows(data), None),
        CostMode::Budget(budget) => {
            let costs = dataset_costs(data)
                .ok_or_else(|| Error::Validation("budget mode requires a cost column".into()))?;
            TreatmentRule::fit(source.into(), RuleContext::CostBudget { budget }, &rows(data), Some(&costs))
        }
    }
}

pub fn rule_heterogeneity(source: impl Into<ScoreSource>, data: &TrialDataset) -> Result<TreatmentRule> {
    TreatmentRule::fit(source.into(), RuleContext::Heterogeneity, &rows(data), None)
}

/// Rule thresholded on the units of a population, e.g. with the true CATE as score.
pub fn rule_on_population(source: ScoreSource, context: RuleContext, pop: &PotentialPopulation) -> Result<TreatmentRule> {
    let rows: Vec<&[f64]> = pop.units().iter().map(|u| u.covariates.as_slice()).collect();
    let costs: Option<Vec<f64>> = pop.units().iter().map(|u| u.cost).collect();
    TreatmentRule::fit(source, context, &rows, costs.as_deref())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub treat_all: f64,
    pub treat_none: f64,
    /// Treating a random fraction equal to the rule's treated fraction.
    pub random_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleEvaluation {
    /// Mean outcome when the rule is followed.
    pub value: f64,
    pub treated_fraction: f64,
    /// `None` when nobody is treated.
    pub effect_in_t: Option<f64>,
    /// `None` when everybody is treated.
    pub effect_in_s: Option<f64>,
    pub heterogeneity: Option<f64>,
    /// Mean cost per unit of the population spent on the treated, when costs are known.
    pub cost_per_capita: Option<f64>,
    pub baselines: Baselines,
    /// Set for sample plug-in evaluations, which are biased; use the CV-TMLE for inference.
    pub plug_in: bool,
}

struct Accumulator {
    mass: f64,
    treated_mass: f64,
    value: f64,
    effect_t: f64,
    effect_s: f64,
    y1: f64,
    y0: f64,
    cost: Option<f64>,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            mass: 0.0,
            treated_mass: 0.0,
            value: 0.0,
            effect_t: 0.0,
            effect_s: 0.0,
            y1: 0.0,
            y0: 0.0,
            cost: Some(0.0),
        }
    }

    fn add(&mut self, treated: bool, mass: f64, y1: f64, y0: f64, cost: Option<f64>) {
        self.mass += mass;
        self.y1 += mass * y1;
        self.y0 += mass * y0;
        if treated {
            self.treated_mass += mass;
            self.value += mass * y1;
            self.effect_t += mass * (y1 - y0);
            self.cost = match (self.cost, cost) {
                (Some(acc), Some(c)) => Some(acc + mass * c),
                _ => None,
            };
        } else {
            self.value += mass * y0;
            self.effect_s += mass * (y1 - y0);
        }
    }

    fn finish(self, plug_in: bool, costs_known: bool) -> RuleEvaluation {
        let untreated = self.mass - self.treated_mass;
        let effect_in_t = (self.treated_mass > 0.0).then(|| self.effect_t / self.treated_mass);
        let effect_in_s = (untreated > 0.0).then(|| self.effect_s / untreated);
        let q = self.treated_mass / self.mass;
        let (treat_all, treat_none) = (self.y1 / self.mass, self.y0 / self.mass);
        RuleEvaluation {
            value: self.value / self.mass,
            treated_fraction: q,
            effect_in_t,
            effect_in_s,
            heterogeneity: effect_in_t.zip(effect_in_s).map(|(t, s)| t - s),
            cost_per_capita: self.cost.filter(|_| costs_known).map(|c| c / self.mass),
            baselines: Baselines {
                treat_all,
                treat_none,
                random_q: q * treat_all + (1.0 - q) * treat_none,
            },
            plug_in,
        }
    }
}

/// Evaluate a fixed treated set on a population with both potential outcomes.
pub fn evaluate_mask_on_truth(mask: &[bool], pop: &PotentialPopulation) -> Result<RuleEvaluation> {
    if mask.len() != pop.len() {
        return Err(Error::Precondition(format!(
            "mask covers {} units, population has {}",
            mask.len(),
            pop.len()
        )));
    }
    let mut acc = Accumulator::new();
    for (u, &t) in pop.units().iter().zip(mask) {
        acc.add(t, u.mass, u.y1, u.y0, u.cost);
    }
    Ok(acc.finish(false, pop.has_costs()))
}

pub fn evaluate_on_truth(rule: &TreatmentRule, pop: &PotentialPopulation) -> Result<RuleEvaluation> {
    evaluate_mask_on_truth(&rule.mask_population(pop)?, pop)
}

/// Sample plug-in: population integrals replaced by averages of outcome
/// regression predictions over the records. Biased; flagged as such.
pub fn evaluate_on_sample(
    rule: &TreatmentRule,
    outcome: &(impl OutcomeModel + ?Sized),
    data: &TrialDataset,
) -> Result<RuleEvaluation> {
    let mask = rule.mask_dataset(data)?;
    let mut acc = Accumulator::new();
    for (r, t) in data.records().iter().zip(mask) {
        let y1 = outcome.predict_arm(true, &r.covariates);
        let y0 = outcome.predict_arm(false, &r.covariates);
        acc.add(t, 1.0, y1, y0, r.cost);
    }
    Ok(acc.finish(true, data.has_costs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustedBaselines {
    pub treat_all: f64,
    pub treat_none: f64,
    pub ate: f64,
}

/// G-formula arm means: averages of `Ê[Y | a, C_i]` over all records.
pub fn adjusted_baselines(data: &TrialDataset, outcome: &(impl OutcomeModel + ?Sized)) -> AdjustedBaselines {
    let n = data.len() as f64;
    let (mut a1, mut a0) = (0.0, 0.0);
    for r in data.records() {
        a1 += outcome.predict_arm(true, &r.covariates);
        a0 += outcome.predict_arm(false, &r.covariates);
    }
    let (treat_all, treat_none) = (a1 / n, a0 / n);
    AdjustedBaselines {
        treat_all,
        treat_none,
        ate: treat_all - treat_none,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cate::{ConstantOutcome, LearnerKind, LearnerSpec, OutcomeRegression};
    use crate::data::{Design, PotentialUnit, TrialRecord};

    fn count(scores: &[f64], t: f64) -> usize {
        treated_mask(scores, t).iter().filter(|&&b| b).count()
    }

    #[test]
    fn constrained_examples() {
        let s = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(constrained_threshold(&s, 0.4).unwrap(), 3.0);
        assert_eq!(count(&s, 3.0), 2);
        let s = [-1.0, -2.0, -3.0];
        assert_eq!(constrained_threshold(&s, 0.33).unwrap(), 0.0);
        let s = [1.0; 4];
        let t = constrained_threshold(&s, 0.5).unwrap();
        assert_eq!((t, count(&s, t)), (1.0, 0));
        assert!(constrained_threshold(&s, 1.0).is_err());
    }

    #[test]
    fn quota_tolerates_rounding() {
        assert_eq!(quota(0.29, 100), 29);
        assert_eq!(quota(0.4, 5), 2);
        assert_eq!(quota(0.999, 3), 2);
    }

    #[test]
    fn heterogeneity_examples() {
        let s = [-1.0, 0.0, 2.0, 5.0];
        assert_eq!(heterogeneity_split(&s).unwrap(), (2.0, false));
        assert_eq!(count(&s, 2.0), 1);
        assert_eq!(heterogeneity_split(&[-1.0, 1.0]).unwrap(), (-1.0, false));
        assert_eq!(heterogeneity_split(&[3.0, 3.0]).unwrap(), (3.0, true));
    }

    #[test]
    fn budget_with_unit_costs_matches_quota() {
        let s = [0.5, 3.0, -1.0, 2.0, 2.0, 0.1];
        let k = budget_cutoff(&s, &[1.0; 6], 3.0).unwrap();
        let delta = constrained_threshold(&s, 0.5).unwrap();
        assert_eq!(treated_mask(&s, k), treated_mask(&s, delta));
        // the tie block {2, 2} does not fit in a budget of 2
        let k = budget_cutoff(&s, &[1.0; 6], 2.0).unwrap();
        assert_eq!(count(&s, k), 1);
        // never treats non-positive scores
        let k = budget_cutoff(&s, &[1.0; 6], 100.0).unwrap();
        assert_eq!(k, 0.0);
        assert_eq!(count(&s, k), 5);
    }

    fn dataset(rows: &[(f64, bool, f64, Option<f64>)]) -> TrialDataset {
        let records = rows
            .iter()
            .map(|&(c, a, y, cost)| TrialRecord::new(vec![c], a, y, 0.5, cost).unwrap())
            .collect();
        TrialDataset::new(records, vec!["c1".into()], Design::Randomized { p: 0.5 }).unwrap()
    }

    #[test]
    fn delta_zero_reduces_to_unconstrained() {
        let data = dataset(&[(-0.3, true, 1.0, None), (0.2, false, 0.0, None), (0.0, true, 2.0, None)]);
        let src = ScoreSource::Covariate { index: 0 };
        let cost = rule_cost(src.clone(), &data, CostMode::Delta(Delta::Constant { value: 0.0 })).unwrap();
        let free = rule_unconstrained(src);
        assert_eq!(cost.mask_dataset(&data).unwrap(), free.mask_dataset(&data).unwrap());
        assert_eq!(cost.mask_dataset(&data).unwrap(), vec![false, true, false]);
    }

    #[test]
    fn budget_mode_needs_costs() {
        let data = dataset(&[(0.3, true, 1.0, None), (0.2, false, 0.0, None)]);
        let err = rule_cost(ScoreSource::Covariate { index: 0 }, &data, CostMode::Budget(0.5));
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn sign_flip_complements() {
        let pos = rule_unconstrained(ScoreSource::Covariate { index: 0 });
        let neg = TreatmentRule {
            source: ScoreSource::Covariate { index: 1 },
            ..pos.clone()
        };
        for c in [-0.7, -0.1, 0.4, 0.9] {
            assert_ne!(pos.treats(&[c, -c], None).unwrap(), neg.treats(&[c, -c], None).unwrap());
        }
    }

    #[test]
    fn treat_nobody_scores_control_mean() {
        let pop = PotentialPopulation::from_outcomes(&[(1.0, 3.0), (2.0, 1.0), (0.0, 0.5)]).unwrap();
        let ev = evaluate_mask_on_truth(&[false; 3], &pop).unwrap();
        assert_eq!(ev.value, 1.0);
        assert_eq!(ev.effect_in_t, None);
        assert_eq!(ev.heterogeneity, None);
        let ev = evaluate_mask_on_truth(&[true, false, true], &pop).unwrap();
        assert_eq!(ev.heterogeneity, Some(ev.effect_in_t.unwrap() - ev.effect_in_s.unwrap()));
        assert_eq!(ev.baselines.treat_all, 4.5 / 3.0);
    }

    #[test]
    fn plug_in_with_constant_regression() {
        let data = dataset(&[(0.3, true, 1.0, None), (-0.2, false, 0.0, None), (0.5, true, 4.0, None)]);
        let rule = rule_unconstrained(ScoreSource::Covariate { index: 0 });
        let ev = evaluate_on_sample(&rule, &ConstantOutcome(2.5), &data).unwrap();
        assert_eq!(ev.value, 2.5);
        assert!(ev.plug_in);
        let all = TreatmentRule {
            threshold: f64::NEG_INFINITY,
            ..rule
        };
        let f = |a: bool, c: &[f64]| if a { 10.0 * c[0] } else { 0.0 };
        let ev = evaluate_on_sample(&all, &f, &data).unwrap();
        assert!((ev.value - 2.0).abs() < 1e-12);
        let b = adjusted_baselines(&data, &ConstantOutcome(2.5));
        assert_eq!((b.treat_all, b.treat_none, b.ate), (2.5, 2.5, 0.0));
    }

    #[test]
    fn g_formula_on_confounded_strata() {
        // strata (x1, x2) with unequal treatment shares; outcome depends on stratum and arm
        let mut records = Vec::new();
        let strata = [(0.0, 0.0, 4, 1), (0.0, 1.0, 2, 3), (1.0, 0.0, 1, 4), (1.0, 1.0, 3, 3)];
        let mut hand = (0.0, 0.0, 0usize);
        for &(x1, x2, controls, treated) in &strata {
            let base = 1.0 + 2.0 * x1 - x2 + 3.0 * x1 * x2;
            let lift = 0.5 + x1 - 2.0 * x2;
            let mut arm_means = (0.0, 0.0);
            for j in 0..controls {
                let y = base + 0.1 * j as f64;
                arm_means.0 += y / controls as f64;
                records.push((x1, x2, false, y, controls + treated));
            }
            for j in 0..treated {
                let y = base + lift - 0.2 * j as f64;
                arm_means.1 += y / treated as f64;
                records.push((x1, x2, true, y, controls + treated));
            }
            let size = controls + treated;
            hand.0 += size as f64 * arm_means.1;
            hand.1 += size as f64 * arm_means.0;
            hand.2 += size;
        }
        let total = hand.2 as f64;
        let (g1, g0) = (hand.0 / total, hand.1 / total);
        let recs = records
            .iter()
            .map(|&(x1, x2, a, y, _)| TrialRecord::new(vec![x1, x2, x1 * x2], a, y, 0.5, None).unwrap())
            .collect();
        let data = TrialDataset::new(recs, vec!["x1".into(), "x2".into(), "x1x2".into()], Design::Observational).unwrap();
        let all: Vec<usize> = (0..data.len()).collect();
        let saturated = LearnerSpec::new(LearnerKind::LinearLeastSquares { ridge: 0.0 }).unwrap();
        let reg = OutcomeRegression::fit_single(&data, &all, &saturated).unwrap();
        let b = adjusted_baselines(&data, &reg);
        assert!((b.treat_all - g1).abs() < 1e-9, "{} vs {g1}", b.treat_all);
        assert!((b.treat_none - g0).abs() < 1e-9);
        assert!((b.ate - (g1 - g0)).abs() < 1e-9);
    }

    #[test]
    fn population_rule_uses_unit_costs() {
        let units = vec![
            PotentialUnit::new(vec![4.0], 0.0, 4.0).with_cost(4.0),
            PotentialUnit::new(vec![1.0], 0.0, 1.0).with_cost(0.5),
            PotentialUnit::new(vec![0.5], 0.0, 0.5).with_cost(1.0),
        ];
        let pop = PotentialPopulation::new(units).unwrap();
        let rule = rule_on_population(ScoreSource::Covariate { index: 0 }, RuleContext::CostBudget { budget: 0.5 }, &pop).unwrap();
        // ratios 1, 2, 0.5; budget 1.5 in total affords only the ratio-2 unit
        assert_eq!(rule.mask_population(&pop).unwrap(), vec![false, true, false]);
        let ev = evaluate_on_truth(&rule, &pop).unwrap();
        assert!(ev.cost_per_capita.unwrap() <= 0.5);
    }
}
