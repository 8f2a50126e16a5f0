//! CATE estimation: pseudo-outcome regression with a cross-validated convex
//! ensemble.
//!
//! For any centering function `f`, the pseudo-outcome
//! `ỹ = (2a - 1) / P(A = a | c) · [y - f(a, c)] + f(1, c) - f(0, c)`
//! has conditional mean equal to the CATE, so any least-squares regression of
//! `ỹ` on `c` estimates the CATE. Candidate regressions are combined by the
//! simplex weights minimizing held-out squared error.

pub mod learners;
pub mod outcome;
pub mod simplex;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use learners::{FittedLearner, LearnerKind, LearnerSpec};
pub use outcome::{ConstantOutcome, OutcomeModel, OutcomeRegression, ZeroOutcome};
pub use simplex::{simplex_least_squares, SimplexProblem};

use crate::data::{TrialDataset, TrialRecord};
use crate::rng::{rng_for, streams};
use crate::{par_map, Error, Result};

pub const DEFAULT_FOLDS: usize = 10;

/// `(2a - 1) / P(A = a | c) · [y - f(a, c)] + f(1, c) - f(0, c)`.
pub fn pseudo_outcome(record: &TrialRecord, f: &(impl OutcomeModel + ?Sized)) -> Result<f64> {
    let c = &record.covariates;
    let (f_obs, f1, f0) = (
        f.predict_arm(record.treated, c),
        f.predict_arm(true, c),
        f.predict_arm(false, c),
    );
    if !(f_obs.is_finite() && f1.is_finite() && f0.is_finite()) {
        return Err(Error::Numerical("centering function returned a non-finite value".into()));
    }
    Ok(record.clever_covariate() * (record.outcome - f_obs) + f1 - f0)
}

/// Balanced random fold labels `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    k: usize,
}

/// Shuffle `0..n` and deal the shuffled positions round-robin into `k` folds,
/// so fold sizes are `floor(n/k)` or `ceil(n/k)`.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Precondition(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::Precondition(format!("{n} records cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, streams::FOLDS));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    Ok(FoldAssignment { fold_of, k })
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    /// Fold (0-based) in which record `i` is held out.
    pub fn fold_of(&self, i: usize) -> usize {
        self.fold_of[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &v in &self.fold_of {
            sizes[v] += 1;
        }
        sizes
    }

    /// `(training, held-out)` indices for fold `v`, both ascending.
    pub fn split(&self, v: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.len()).partition(|&i| self.fold_of[i] != v)
    }
}

/// Centering function used in the pseudo-outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FMode {
    Zero,
    /// Per-arm outcome regression fit on the training split of each fold.
    #[default]
    Outcome,
}

impl fmt::Display for FMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FMode::Zero => "zero",
            FMode::Outcome => "outcome",
        })
    }
}

impl FromStr for FMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(FMode::Zero),
            "outcome" | "outcome_regression" => Ok(FMode::Outcome),
            _ => Err(Error::Validation(format!("unknown f-mode `{s}` (expected zero or outcome)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperLearnerConfig {
    pub learners: Vec<LearnerSpec>,
    pub f_mode: FMode,
    /// Regression used for `f` in each arm when `f_mode` is `Outcome`.
    pub f_learner: LearnerSpec,
}

impl Default for SuperLearnerConfig {
    fn default() -> Self {
        Self {
            learners: LearnerSpec::default_library(),
            f_mode: FMode::Outcome,
            f_learner: LearnerSpec::linear(),
        }
    }
}

impl SuperLearnerConfig {
    pub fn new(learners: Vec<LearnerSpec>, f_mode: FMode) -> Self {
        Self {
            learners,
            f_mode,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvMse {
    pub per_learner: Vec<f64>,
    pub ensemble: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateModel {
    labels: Vec<String>,
    fitted: Vec<FittedLearner>,
    weights: Vec<f64>,
    cv_mse: Option<CvMse>,
    folds: Option<FoldAssignment>,
    f_mode: Option<FMode>,
    covariate_dim: usize,
    warnings: Vec<String>,
}

const WEIGHT_SUM_TOL: f64 = 1e-12;

impl CateModel {
    /// A model assembled from already-fitted learners, with no cross-validation record.
    pub fn from_parts(fitted: Vec<FittedLearner>, weights: Vec<f64>, covariate_dim: usize) -> Result<Self> {
        if fitted.is_empty() || fitted.len() != weights.len() {
            return Err(Error::Precondition("need one weight per fitted learner".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Precondition(format!("weights {weights:?} are not on the simplex")));
        }
        Ok(Self {
            labels: (0..fitted.len()).map(|j| format!("learner{j}")).collect(),
            fitted,
            weights,
            cv_mse: None,
            folds: None,
            f_mode: None,
            covariate_dim,
            warnings: Vec::new(),
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn fitted(&self) -> &[FittedLearner] {
        &self.fitted
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cv_mse(&self) -> Option<&CvMse> {
        self.cv_mse.as_ref()
    }

    pub fn folds(&self) -> Option<&FoldAssignment> {
        self.folds.as_ref()
    }

    pub fn f_mode(&self) -> Option<FMode> {
        self.f_mode
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Per-learner predictions at `c`.
    pub fn learner_predictions(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(c)?;
        Ok(self.fitted.iter().map(|l| l.predict(c)).collect())
    }

    pub fn predict(&self, c: &[f64]) -> Result<f64> {
        self.check_dim(c)?;
        Ok(self.predict_unchecked(c))
    }

    pub(crate) fn predict_unchecked(&self, c: &[f64]) -> f64 {
        self.fitted.iter().zip(&self.weights).map(|(l, w)| w * l.predict(c)).sum()
    }

    /// Predictions for every record of `data`.
    pub fn predict_dataset(&self, data: &TrialDataset) -> Result<Vec<f64>> {
        if data.covariate_dim() != self.covariate_dim {
            return Err(self.dim_error(data.covariate_dim()));
        }
        Ok(data.records().iter().map(|r| self.predict_unchecked(&r.covariates)).collect())
    }

    fn check_dim(&self, c: &[f64]) -> Result<()> {
        if c.len() != self.covariate_dim {
            return Err(self.dim_error(c.len()));
        }
        Ok(())
    }

    fn dim_error(&self, got: usize) -> Error {
        Error::Precondition(format!(
            "covariate dimension {got} does not match the model's {}",
            self.covariate_dim
        ))
    }
}

/// `b̂(c) = α · X(c)`.
pub fn predict_cate(model: &CateModel, c: &[f64]) -> Result<f64> {
    model.predict(c)
}

fn centering(data: &TrialDataset, rows: &[usize], config: &SuperLearnerConfig) -> Result<Option<OutcomeRegression>> {
    match config.f_mode {
        FMode::Zero => Ok(None),
        FMode::Outcome => OutcomeRegression::fit_single(data, rows, &config.f_learner).map(Some),
    }
}

fn pseudo_outcomes_at(data: &TrialDataset, rows: &[usize], f: Option<&OutcomeRegression>) -> Result<Vec<f64>> {
    rows.iter()
        .map(|&i| match f {
            Some(f) => pseudo_outcome(&data.records()[i], f),
            None => pseudo_outcome(&data.records()[i], &ZeroOutcome),
        })
        .collect()
}

/// Cross-fitted pseudo-outcomes: record `i` is transformed with `f` fit on the
/// training split of its fold.
pub fn cross_fitted_pseudo_outcomes(
    data: &TrialDataset,
    config: &SuperLearnerConfig,
    folds: &FoldAssignment,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; data.len()];
    for v in 0..folds.k() {
        let (train, held) = folds.split(v);
        let f = centering(data, &train, config)?;
        for (i, y) in held.iter().zip(pseudo_outcomes_at(data, &held, f.as_ref())?) {
            out[*i] = y;
        }
    }
    Ok(out)
}

struct FoldOutput {
    held: Vec<usize>,
    targets: Vec<f64>,
    /// `columns[j][t]` is learner `j`'s prediction for `held[t]`.
    columns: Vec<Vec<f64>>,
    warnings: Vec<String>,
}

/// Cross-validated convex stacking of `config.learners` on the pseudo-outcome.
pub fn fit_super_learner(
    data: &TrialDataset,
    config: &SuperLearnerConfig,
    folds: &FoldAssignment,
) -> Result<CateModel> {
    let n = data.len();
    if config.learners.is_empty() {
        return Err(Error::Precondition("super-learner needs at least one candidate".into()));
    }
    if folds.len() != n {
        return Err(Error::Precondition(format!(
            "fold assignment covers {} records, dataset has {n}",
            folds.len()
        )));
    }
    let rows_of = |idx: &[usize]| -> Vec<&[f64]> {
        idx.iter().map(|&i| data.records()[i].covariates.as_slice()).collect()
    };

    let fold_ids: Vec<usize> = (0..folds.k()).collect();
    let outputs = par_map(&fold_ids, |&v| -> Result<FoldOutput> {
        let (train, held) = folds.split(v);
        let f = centering(data, &train, config)?;
        let train_targets = pseudo_outcomes_at(data, &train, f.as_ref())?;
        let targets = pseudo_outcomes_at(data, &held, f.as_ref())?;
        let x_train = rows_of(&train);
        let mut warnings = f.map(|f| f.warnings).unwrap_or_default();
        let mut columns = Vec::with_capacity(config.learners.len());
        for spec in &config.learners {
            let (fit, warning) = spec.fit(&x_train, &train_targets)?;
            warnings.extend(warning.map(|w| format!("fold {}: {w}", v + 1)));
            columns.push(held.iter().map(|&i| fit.predict(&data.records()[i].covariates)).collect());
        }
        Ok(FoldOutput {
            held,
            targets,
            columns,
            warnings,
        })
    });

    let m = config.learners.len();
    let mut targets = vec![0.0; n];
    let mut columns = vec![vec![0.0; n]; m];
    let mut warnings = Vec::new();
    for out in outputs {
        let out = out?;
        for (t, &i) in out.held.iter().enumerate() {
            targets[i] = out.targets[t];
            for j in 0..m {
                columns[j][i] = out.columns[j][t];
            }
        }
        warnings.extend(out.warnings);
    }

    let problem = SimplexProblem::new(&targets, &columns)?;
    let weights = problem.solve(simplex::DEFAULT_TOL, simplex::DEFAULT_MAX_ITER);
    let per_learner = (0..m)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            problem.objective(&e)
        })
        .collect();
    let cv_mse = CvMse {
        per_learner,
        ensemble: problem.objective(&weights),
    };

    let all: Vec<usize> = (0..n).collect();
    let f = centering(data, &all, config)?;
    let full_targets = pseudo_outcomes_at(data, &all, f.as_ref())?;
    if let Some(f) = f {
        warnings.extend(f.warnings);
    }
    let x = rows_of(&all);
    let mut fitted = Vec::with_capacity(m);
    for spec in &config.learners {
        let (fit, warning) = spec.fit(&x, &full_targets)?;
        warnings.extend(warning.map(|w| format!("full data: {w}")));
        fitted.push(fit);
    }

    Ok(CateModel {
        labels: config.learners.iter().map(|s| s.label.clone()).collect(),
        fitted,
        weights,
        cv_mse: Some(cv_mse),
        folds: Some(folds.clone()),
        f_mode: Some(config.f_mode),
        covariate_dim: data.covariate_dim(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate, Dgp, DgpSpec};

    fn record(treated: bool, y: f64, p: f64) -> TrialRecord {
        TrialRecord::new(vec![0.0], treated, y, p, None).unwrap()
    }

    #[test]
    fn pseudo_outcome_examples() {
        let zero = |_: bool, _: &[f64]| 0.0;
        assert_eq!(pseudo_outcome(&record(true, 3.0, 0.5), &zero).unwrap(), 6.0);
        assert_eq!(pseudo_outcome(&record(false, 3.0, 0.5), &zero).unwrap(), -6.0);
        let f = |a: bool, _: &[f64]| if a { 2.0 } else { 1.0 };
        assert_eq!(pseudo_outcome(&record(true, 2.0, 0.25), &f).unwrap(), 1.0);
        let bad = |_: bool, _: &[f64]| f64::NAN;
        assert!(pseudo_outcome(&record(true, 2.0, 0.25), &bad).is_err());
    }

    #[test]
    fn fold_sizes_balanced_and_deterministic() {
        assert_eq!(assign_folds(20, 10, 1).unwrap().sizes(), vec![2; 10]);
        let mut sizes = assign_folds(23, 10, 1).unwrap().sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, [vec![2; 7], vec![3; 3]].concat());
        assert_eq!(assign_folds(23, 10, 9).unwrap(), assign_folds(23, 10, 9).unwrap());
        assert_ne!(assign_folds(50, 10, 1).unwrap(), assign_folds(50, 10, 2).unwrap());
        assert!(assign_folds(9, 10, 1).is_err());
    }

    #[test]
    fn split_partitions_records() {
        let folds = assign_folds(31, 4, 3).unwrap();
        for v in 0..4 {
            let (train, held) = folds.split(v);
            assert_eq!(train.len() + held.len(), 31);
            assert!(held.iter().all(|&i| folds.fold_of(i) == v));
            assert!(train.iter().all(|&i| folds.fold_of(i) != v));
        }
    }

    #[test]
    fn predict_examples() {
        let c = |v: f64| FittedLearner::Constant { mean: v };
        let m = CateModel::from_parts(vec![c(0.0), c(0.0)], vec![0.3, 0.7], 1).unwrap();
        assert_eq!(predict_cate(&m, &[1.0]).unwrap(), 0.0);
        let m = CateModel::from_parts(vec![c(7.0), c(-3.0)], vec![1.0, 0.0], 1).unwrap();
        assert_eq!(predict_cate(&m, &[1.0]).unwrap(), 7.0);
        let m = CateModel::from_parts(vec![c(2.0), c(4.0)], vec![0.5, 0.5], 1).unwrap();
        assert_eq!(predict_cate(&m, &[1.0]).unwrap(), 3.0);
        assert!(predict_cate(&m, &[1.0, 2.0]).is_err());
        assert!(CateModel::from_parts(vec![c(2.0), c(4.0)], vec![0.5, 0.6], 1).is_err());
    }

    #[test]
    fn single_candidate_gets_full_weight() {
        let sim = simulate(&DgpSpec::new(Dgp::LinearCate, 200, 4)).unwrap();
        let folds = assign_folds(200, 10, 4).unwrap();
        let config = SuperLearnerConfig::new(vec![LearnerSpec::linear()], FMode::Zero);
        let model = fit_super_learner(&sim.data, &config, &folds).unwrap();
        assert_eq!(model.weights(), &[1.0]);
        let (full, _) = LearnerSpec::linear()
            .fit(
                &sim.data.records().iter().map(|r| r.covariates.as_slice()).collect::<Vec<_>>(),
                &sim.data.records().iter().map(|r| pseudo_outcome(r, &ZeroOutcome).unwrap()).collect::<Vec<_>>(),
            )
            .unwrap();
        assert_eq!(model.predict(&[0.3]).unwrap(), full.predict(&[0.3]));
    }

    #[test]
    fn exact_candidate_dominates() {
        // with f = 0 and p = 1/2 the pseudo-outcome is ±2y; y = ±c/2 makes it c exactly
        let records: Vec<TrialRecord> = (0..60)
            .map(|i| {
                let c = i as f64 / 60.0;
                let treated = i % 3 != 0;
                let y = if treated { c / 2.0 } else { -c / 2.0 };
                TrialRecord::new(vec![c], treated, y, 0.5, None).unwrap()
            })
            .collect();
        let data = TrialDataset::new(records, vec!["c1".into()], crate::data::Design::Randomized { p: 0.5 }).unwrap();
        let folds = assign_folds(60, 10, 2).unwrap();
        let config = SuperLearnerConfig::new(vec![LearnerSpec::linear(), LearnerSpec::constant()], FMode::Zero);
        let model = fit_super_learner(&data, &config, &folds).unwrap();
        assert!(model.cv_mse().unwrap().per_learner[0] < 1e-12);
        assert!((model.weights()[0] - 1.0).abs() < 1e-8, "{:?}", model.weights());
    }
}
