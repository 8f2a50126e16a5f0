//! Per-arm outcome regressions `E[Y | A = a, C = c]`.

use serde::{Deserialize, Serialize};

use super::learners::{FittedLearner, LearnerSpec};
use super::{assign_folds, simplex};
use crate::data::TrialDataset;
use crate::{Error, Result};

/// Anything that predicts the outcome under arm `treated` at covariates `c`.
pub trait OutcomeModel {
    fn predict_arm(&self, treated: bool, c: &[f64]) -> f64;
}

impl<F: Fn(bool, &[f64]) -> f64> OutcomeModel for F {
    fn predict_arm(&self, treated: bool, c: &[f64]) -> f64 {
        self(treated, c)
    }
}

/// The zero centering function.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroOutcome;

impl OutcomeModel for ZeroOutcome {
    fn predict_arm(&self, _: bool, _: &[f64]) -> f64 {
        0.0
    }
}

/// Constant prediction in both arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantOutcome(pub f64);

impl OutcomeModel for ConstantOutcome {
    fn predict_arm(&self, _: bool, _: &[f64]) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmFit {
    pub learners: Vec<FittedLearner>,
    pub weights: Vec<f64>,
}

impl ArmFit {
    fn predict(&self, c: &[f64]) -> f64 {
        self.learners.iter().zip(&self.weights).map(|(l, w)| w * l.predict(c)).sum()
    }
}

/// Separate regressions of `Y` on `C` in the control (`arms[0]`) and treated
/// (`arms[1]`) records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRegression {
    pub arms: [ArmFit; 2],
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl OutcomeModel for OutcomeRegression {
    fn predict_arm(&self, treated: bool, c: &[f64]) -> f64 {
        self.arms[treated as usize].predict(c)
    }
}

fn arm_indices(data: &TrialDataset, rows: &[usize], treated: bool) -> Result<Vec<usize>> {
    let idx: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|&i| data.records()[i].treated == treated)
        .collect();
    if idx.len() < 2 {
        return Err(Error::Precondition(format!(
            "outcome regression needs at least two {} records, found {}",
            if treated { "treated" } else { "control" },
            idx.len()
        )));
    }
    Ok(idx)
}

impl OutcomeRegression {
    /// One learner per arm, fit on the records `rows`.
    pub fn fit_single(data: &TrialDataset, rows: &[usize], spec: &LearnerSpec) -> Result<Self> {
        let mut warnings = Vec::new();
        let mut fit_arm = |treated: bool| -> Result<ArmFit> {
            let idx = arm_indices(data, rows, treated)?;
            let x: Vec<&[f64]> = idx.iter().map(|&i| data.records()[i].covariates.as_slice()).collect();
            let y: Vec<f64> = idx.iter().map(|&i| data.records()[i].outcome).collect();
            let (fit, warning) = spec.fit(&x, &y)?;
            warnings.extend(warning);
            Ok(ArmFit {
                learners: vec![fit],
                weights: vec![1.0],
            })
        };
        let arms = [fit_arm(false)?, fit_arm(true)?];
        Ok(Self { arms, warnings })
    }

    /// Per arm, a convex combination of `specs` weighted by `k`-fold
    /// cross-validated squared error.
    pub fn fit_stacked(
        data: &TrialDataset,
        rows: &[usize],
        specs: &[LearnerSpec],
        k: usize,
        seed: u64,
    ) -> Result<Self> {
        if specs.len() == 1 {
            return Self::fit_single(data, rows, &specs[0]);
        }
        let mut warnings = Vec::new();
        let mut arms = Vec::with_capacity(2);
        for treated in [false, true] {
            let idx = arm_indices(data, rows, treated)?;
            let x: Vec<&[f64]> = idx.iter().map(|&i| data.records()[i].covariates.as_slice()).collect();
            let y: Vec<f64> = idx.iter().map(|&i| data.records()[i].outcome).collect();
            let folds = assign_folds(idx.len(), k.min(idx.len()), seed ^ treated as u64)?;
            let mut columns = vec![vec![0.0; idx.len()]; specs.len()];
            for v in 0..folds.k() {
                let (train, held) = folds.split(v);
                let xt: Vec<&[f64]> = train.iter().map(|&i| x[i]).collect();
                let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
                for (j, spec) in specs.iter().enumerate() {
                    let (fit, warning) = spec.fit(&xt, &yt)?;
                    warnings.extend(warning);
                    for &i in &held {
                        columns[j][i] = fit.predict(x[i]);
                    }
                }
            }
            let weights =
                simplex::simplex_least_squares(&y, &columns, simplex::DEFAULT_TOL, simplex::DEFAULT_MAX_ITER)?;
            let mut learners = Vec::with_capacity(specs.len());
            for spec in specs {
                let (fit, warning) = spec.fit(&x, &y)?;
                warnings.extend(warning);
                learners.push(fit);
            }
            arms.push(ArmFit { learners, weights });
        }
        let arms: [ArmFit; 2] = arms.try_into().expect("two arms");
        Ok(Self { arms, warnings })
    }
}
