//! Cross-validated targeted minimum loss estimation of a rule's gain
//! `ψ = E[1(rule treats C) · CATE(C)]`, the mean improvement over treating nobody.
//!
//! For each of `K` folds, an outcome regression `Ê_v[Y | a, c]` and a CATE fit
//! `b̂_v` are trained without that fold and used to score it. The rule is
//! `b̂_{v(i)}(C_i) > δ_n`; the outcome regressions are fluctuated along the
//! clever covariate `(2A - 1) / P(A | C)` on the records the rule treats, and
//! the gain is the mean fluctuated effect among them.

mod logistic;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use logistic::{expit, logit, weighted_offset_logistic};

use crate::cate::{
    assign_folds, fit_super_learner, FMode, LearnerSpec, OutcomeModel, OutcomeRegression, SuperLearnerConfig,
};
use crate::data::TrialDataset;
use crate::rng::derive_seed;
use crate::rules::constrained_threshold;
use crate::{par_map, Error, Result};

pub const MIN_RECORDS: usize = 50;
pub const DEFAULT_CLAMP: f64 = 1e-6;
const Z_975: f64 = 1.96;

/// Affine map `y -> (y - lo) / (hi - lo)` into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeScale {
    pub lo: f64,
    pub hi: f64,
    /// Every observed outcome was equal.
    pub degenerate: bool,
}

impl OutcomeScale {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn scale(&self, y: f64) -> f64 {
        (y - self.lo) / self.width()
    }

    pub fn unscale(&self, s: f64) -> f64 {
        self.lo + s * self.width()
    }
}

/// Rescale outcomes into `[0, 1]`, using `bounds` when given and the observed
/// range otherwise.
pub fn scale_outcomes(data: &TrialDataset, bounds: Option<(f64, f64)>) -> Result<(TrialDataset, OutcomeScale)> {
    if data.is_empty() {
        return Err(Error::Precondition("no records to scale".into()));
    }
    let (min, max) = data
        .records()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.outcome), b.max(r.outcome)));
    let degenerate = min == max;
    let scale = match bounds {
        Some((lo, hi)) => {
            if !(hi > lo && lo.is_finite() && hi.is_finite()) {
                return Err(Error::Validation(format!("outcome bounds need lo < hi, got [{lo}, {hi}]")));
            }
            if min < lo || max > hi {
                return Err(Error::Validation(format!(
                    "observed outcomes span [{min}, {max}], outside the bounds [{lo}, {hi}]"
                )));
            }
            OutcomeScale { lo, hi, degenerate }
        }
        None if degenerate => OutcomeScale {
            lo: min,
            hi: min + 1e-9 * min.abs().max(1.0),
            degenerate,
        },
        None => OutcomeScale {
            lo: min,
            hi: max,
            degenerate,
        },
    };
    let scaled = data.map_outcomes(|y| scale.scale(y).clamp(0.0, 1.0));
    Ok((scaled, scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TmleContext {
    /// Treat at most a fraction `q`.
    Constrained { q: f64 },
    Unconstrained,
}

impl TmleContext {
    /// The `q` of the variance formula; 1 without a constraint.
    fn q(&self) -> f64 {
        match self {
            TmleContext::Constrained { q } => *q,
            TmleContext::Unconstrained => 1.0,
        }
    }
}

impl fmt::Display for TmleContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TmleContext::Constrained { q } => write!(f, "constrained(q = {q})"),
            TmleContext::Unconstrained => f.write_str("unconstrained"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmleConfig {
    /// CATE candidate library.
    pub learners: Vec<LearnerSpec>,
    /// Library for the per-arm outcome regressions.
    pub outcome_learners: Vec<LearnerSpec>,
    pub f_mode: FMode,
    pub folds: usize,
    pub inner_folds: usize,
    /// Predicted probabilities are clamped to `[clamp, 1 - clamp]` before `logit`.
    pub clamp: f64,
    pub bounds: Option<(f64, f64)>,
    /// Also report the plain influence-function variance `(1/n) Σ [1(b̂ > δ) D_i]^2`.
    pub alt_variance: bool,
    pub seed: u64,
}

impl Default for TmleConfig {
    fn default() -> Self {
        Self {
            learners: LearnerSpec::default_library(),
            outcome_learners: LearnerSpec::default_library(),
            f_mode: FMode::Outcome,
            folds: 10,
            inner_folds: 10,
            clamp: DEFAULT_CLAMP,
            bounds: None,
            alt_variance: false,
            seed: 0,
        }
    }
}

impl TmleConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_learners(mut self, learners: Vec<LearnerSpec>) -> Self {
        self.learners = learners;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldDiagnostics {
    pub training_size: usize,
    pub held_out: usize,
    /// Held-out records the rule treats.
    pub treated_by_rule: usize,
    pub cate_weights: Vec<f64>,
    pub cate_cv_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmleDiagnostics {
    /// `(1/n) Σ 1(b̂ > δ) h_i (Y_i - Q̄*(A_i, C_i))` on the [0, 1] scale.
    pub score_residual: f64,
    pub alt_sigma_hat: Option<f64>,
    pub clamp: f64,
    pub clamped_predictions: usize,
    pub psi_hat_scaled: f64,
    pub sigma_hat_scaled: f64,
    pub delta_n_scaled: f64,
    pub folds: Vec<FoldDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmleReport {
    pub context: TmleContext,
    pub n: usize,
    /// Estimated gain `E[1(rule) · CATE]` on the original outcome scale.
    pub psi_hat: f64,
    pub epsilon_n: f64,
    /// Cutoff on the CATE scale of the original outcome.
    pub delta_n: f64,
    pub sigma_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Fraction of records with `b̂_{v(i)}(C_i) > δ_n`.
    pub treated_fraction: f64,
    /// Inverse-propensity weighted mean outcome among controls.
    pub treat_none_mean: f64,
    /// `psi_hat + treat_none_mean`.
    pub mean_outcome_under_rule: f64,
    pub scale: OutcomeScale,
    pub diagnostics: Option<TmleDiagnostics>,
    pub warnings: Vec<String>,
}

/// Inputs of the influence values, all on the [0, 1] scale.
#[derive(Debug, Clone, Copy)]
pub struct InfluenceInputs<'a> {
    pub outcome: &'a [f64],
    pub treated: &'a [bool],
    /// Propensity of the observed arm.
    pub propensity: &'a [f64],
    pub qstar0: &'a [f64],
    pub qstar1: &'a [f64],
}

/// `D_i = (2A_i - 1) / P(A_i | C_i) [Y_i - Q̄*(A_i, C_i)] + Q̄*(1, C_i) - Q̄*(0, C_i) - ψ̂`.
pub fn influence_values(inputs: &InfluenceInputs<'_>, psi_hat: f64) -> Vec<f64> {
    (0..inputs.outcome.len())
        .map(|i| {
            let a = inputs.treated[i];
            let h = if a { 1.0 } else { -1.0 } / inputs.propensity[i];
            let q_obs = if a { inputs.qstar1[i] } else { inputs.qstar0[i] };
            h * (inputs.outcome[i] - q_obs) + inputs.qstar1[i] - inputs.qstar0[i] - psi_hat
        })
        .collect()
}

/// Per-record quantities behind a report, on the [0, 1] scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TmleTrace {
    /// Fold whose training fits scored each record.
    pub scored_by: Vec<usize>,
    /// Records used to train each fold's fits.
    pub training: Vec<Vec<usize>>,
    pub cate: Vec<f64>,
    pub in_rule: Vec<bool>,
    pub q0: Vec<f64>,
    pub q1: Vec<f64>,
    pub qstar0: Vec<f64>,
    pub qstar1: Vec<f64>,
    pub influence: Vec<f64>,
}

struct FoldFit {
    held: Vec<usize>,
    training: Vec<usize>,
    q0: Vec<f64>,
    q1: Vec<f64>,
    cate: Vec<f64>,
    clamped: usize,
    weights: Vec<f64>,
    cv_mse: f64,
    warnings: Vec<String>,
}

fn fit_fold(data: &TrialDataset, config: &TmleConfig, train: Vec<usize>, held: Vec<usize>, v: usize) -> Result<FoldFit> {
    let outcome = OutcomeRegression::fit_stacked(
        data,
        &train,
        &config.outcome_learners,
        config.inner_folds.min(5),
        derive_seed(config.seed, 2 * v as u64 + 1),
    )?;
    let train_data = data.subset(&train);
    let inner = assign_folds(train.len(), config.inner_folds, derive_seed(config.seed, 2 * v as u64 + 2))?;
    let sl = SuperLearnerConfig::new(config.learners.clone(), config.f_mode);
    let cate_model = fit_super_learner(&train_data, &sl, &inner)?;

    let clamp = |p: f64, count: &mut usize| {
        let c = p.clamp(config.clamp, 1.0 - config.clamp);
        if c != p {
            *count += 1;
        }
        c
    };
    let mut clamped = 0;
    let (mut q0, mut q1, mut cate) = (Vec::new(), Vec::new(), Vec::new());
    for &i in &held {
        let c = &data.records()[i].covariates;
        q0.push(clamp(outcome.predict_arm(false, c), &mut clamped));
        q1.push(clamp(outcome.predict_arm(true, c), &mut clamped));
        cate.push(cate_model.predict(c)?);
    }
    let mut warnings: Vec<String> = outcome.warnings.clone();
    warnings.extend(cate_model.warnings().iter().cloned());
    let warnings = warnings.into_iter().map(|w| format!("outer fold {}: {w}", v + 1)).collect();
    Ok(FoldFit {
        held,
        training: train,
        q0,
        q1,
        cate,
        clamped,
        weights: cate_model.weights().to_vec(),
        cv_mse: cate_model.cv_mse().map_or(f64::NAN, |m| m.ensemble),
        warnings,
    })
}

fn treat_none_mean(data: &TrialDataset) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for r in data.records().iter().filter(|r| !r.treated) {
        num += r.outcome / r.propensity;
        den += 1.0 / r.propensity;
    }
    if den > 0.0 {
        num / den
    } else {
        f64::NAN
    }
}

/// CV-TMLE of the gain of the estimated rule in `context`.
pub fn cv_tmle(data: &TrialDataset, context: TmleContext, config: &TmleConfig) -> Result<TmleReport> {
    cv_tmle_traced(data, context, config).map(|(report, _)| report)
}

/// [`cv_tmle`] plus the per-record quantities behind it.
pub fn cv_tmle_traced(
    data: &TrialDataset,
    context: TmleContext,
    config: &TmleConfig,
) -> Result<(TmleReport, Option<TmleTrace>)> {
    let n = data.len();
    if n < MIN_RECORDS {
        return Err(Error::Precondition(format!("CV-TMLE needs at least {MIN_RECORDS} records, got {n}")));
    }
    if let TmleContext::Constrained { q } = context {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Validation(format!("q must lie in (0, 1), got {q}")));
        }
    }
    if !(config.clamp > 0.0 && config.clamp < 0.5) {
        return Err(Error::Validation(format!("clamp must lie in (0, 0.5), got {}", config.clamp)));
    }
    if config.learners.is_empty() || config.outcome_learners.is_empty() {
        return Err(Error::Validation("learner libraries must be nonempty".into()));
    }
    let (scaled, scale) = scale_outcomes(data, config.bounds)?;
    let baseline = treat_none_mean(data);
    let mut warnings = Vec::new();

    if scale.degenerate {
        warnings.push("constant outcome: every effect is zero, returning psi_hat = 0".to_string());
        let report = TmleReport {
            context,
            n,
            psi_hat: 0.0,
            epsilon_n: 0.0,
            delta_n: 0.0,
            sigma_hat: 0.0,
            ci_lo: 0.0,
            ci_hi: 0.0,
            treated_fraction: 0.0,
            treat_none_mean: baseline,
            mean_outcome_under_rule: baseline,
            scale,
            diagnostics: None,
            warnings,
        };
        return Ok((report, None));
    }

    // step 1: per-fold fits on the training splits
    let folds = assign_folds(n, config.folds, config.seed)?;
    let fold_ids: Vec<usize> = (0..folds.k()).collect();
    let fits = par_map(&fold_ids, |&v| {
        let (train, held) = folds.split(v);
        fit_fold(&scaled, config, train, held, v)
    });
    let mut scored_by = vec![0; n];
    let (mut q0, mut q1, mut cate) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut training = Vec::with_capacity(folds.k());
    let mut fold_diag = Vec::with_capacity(folds.k());
    let mut clamped = 0;
    let mut fits_ok = Vec::with_capacity(folds.k());
    for (v, fit) in fits.into_iter().enumerate() {
        let fit = fit?;
        for (t, &i) in fit.held.iter().enumerate() {
            scored_by[i] = v;
            q0[i] = fit.q0[t];
            q1[i] = fit.q1[t];
            cate[i] = fit.cate[t];
        }
        clamped += fit.clamped;
        warnings.extend(fit.warnings.iter().cloned());
        fits_ok.push(fit);
    }

    // step 2: cutoff
    let delta = match context {
        TmleContext::Unconstrained => 0.0,
        TmleContext::Constrained { q } => constrained_threshold(&cate, q)?,
    };
    let in_rule: Vec<bool> = cate.iter().map(|&b| b > delta).collect();
    for fit in fits_ok {
        fold_diag.push(FoldDiagnostics {
            training_size: fit.training.len(),
            held_out: fit.held.len(),
            treated_by_rule: fit.held.iter().filter(|&&i| in_rule[i]).count(),
            cate_weights: fit.weights,
            cate_cv_mse: fit.cv_mse,
        });
        training.push(fit.training);
    }
    let treated_count = in_rule.iter().filter(|&&t| t).count();

    // step 3: fluctuation
    let records = scaled.records();
    let y: Vec<f64> = records.iter().map(|r| r.outcome).collect();
    let h: Vec<f64> = records.iter().map(|r| r.clever_covariate()).collect();
    let offset: Vec<f64> = (0..n)
        .map(|i| logit(if records[i].treated { q1[i] } else { q0[i] }))
        .collect();
    let w: Vec<f64> = in_rule.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
    let epsilon = if treated_count == 0 {
        warnings.push("the rule treats no record in any fold: psi_hat = 0 and epsilon_n = 0".to_string());
        0.0
    } else {
        weighted_offset_logistic(&y, &h, &offset, &w)?
    };

    // step 4: fluctuated regressions Q̄*(a, c) = expit(logit Ê + ε (2a - 1) / P(a | c))
    let mut qstar0 = vec![0.0; n];
    let mut qstar1 = vec![0.0; n];
    for (i, r) in records.iter().enumerate() {
        let p1 = r.propensity_of(true);
        let p0 = r.propensity_of(false);
        qstar1[i] = expit(logit(q1[i]) + epsilon / p1);
        qstar0[i] = expit(logit(q0[i]) - epsilon / p0);
    }

    // step 5: gain
    let nf = n as f64;
    let psi = if treated_count == 0 {
        0.0
    } else {
        (0..n).filter(|&i| in_rule[i]).map(|i| qstar1[i] - qstar0[i]).sum::<f64>() / nf
    };

    // step 6: influence values
    let treated: Vec<bool> = records.iter().map(|r| r.treated).collect();
    let propensity: Vec<f64> = records.iter().map(|r| r.propensity).collect();
    let inputs = InfluenceInputs {
        outcome: &y,
        treated: &treated,
        propensity: &propensity,
        qstar0: &qstar0,
        qstar1: &qstar1,
    };
    let d = influence_values(&inputs, psi);

    // step 7: variance
    let q = context.q();
    let sigma2 = (0..n)
        .map(|i| {
            let t = if in_rule[i] { d[i] - delta } else { 0.0 };
            (t + delta * q).powi(2)
        })
        .sum::<f64>()
        / nf;
    let sigma = sigma2.sqrt();
    let alt_sigma = config.alt_variance.then(|| {
        ((0..n).filter(|&i| in_rule[i]).map(|i| d[i] * d[i]).sum::<f64>() / nf).sqrt()
    });

    let score_residual = (0..n)
        .filter(|&i| in_rule[i])
        .map(|i| h[i] * (y[i] - if treated[i] { qstar1[i] } else { qstar0[i] }))
        .sum::<f64>()
        / nf;

    // step 8: Wald interval, back on the original scale
    let width = scale.width();
    let half = Z_975 * sigma / nf.sqrt();
    let report = TmleReport {
        context,
        n,
        psi_hat: psi * width,
        epsilon_n: epsilon,
        delta_n: delta * width,
        sigma_hat: sigma * width,
        ci_lo: (psi - half) * width,
        ci_hi: (psi + half) * width,
        treated_fraction: treated_count as f64 / nf,
        treat_none_mean: baseline,
        mean_outcome_under_rule: psi * width + baseline,
        scale,
        diagnostics: Some(TmleDiagnostics {
            score_residual,
            alt_sigma_hat: alt_sigma.map(|s| s * width),
            clamp: config.clamp,
            clamped_predictions: clamped,
            psi_hat_scaled: psi,
            sigma_hat_scaled: sigma,
            delta_n_scaled: delta,
            folds: fold_diag,
        }),
        warnings,
    };
    let trace = TmleTrace {
        scored_by,
        training,
        cate,
        in_rule,
        q0,
        q1,
        qstar0,
        qstar1,
        influence: d,
    };
    Ok((report, Some(trace)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate, Design, Dgp, DgpSpec, TrialRecord};

    fn binary(n: usize) -> TrialDataset {
        let records = (0..n)
            .map(|i| TrialRecord::new(vec![i as f64], i % 2 == 0, (i % 3 == 0) as u8 as f64, 0.5, None).unwrap())
            .collect();
        TrialDataset::new(records, vec!["c1".into()], Design::Randomized { p: 0.5 }).unwrap()
    }

    #[test]
    fn binary_outcomes_keep_identity_scale() {
        let (scaled, scale) = scale_outcomes(&binary(12), None).unwrap();
        assert_eq!((scale.lo, scale.hi, scale.degenerate), (0.0, 1.0, false));
        assert_eq!(scaled, binary(12));
    }

    #[test]
    fn supplied_bounds_are_affine_and_checked() {
        let data = binary(6).map_outcomes(|y| 2.0 + 8.0 * y);
        let (scaled, scale) = scale_outcomes(&data, Some((2.0, 10.0))).unwrap();
        assert_eq!(scale.width(), 8.0);
        assert_eq!(scaled.records()[0].outcome, 1.0);
        assert!(scale_outcomes(&data, Some((3.0, 10.0))).is_err());
        assert!(scale_outcomes(&data, Some((10.0, 2.0))).is_err());
    }

    #[test]
    fn constant_outcome_fast_path() {
        let data = binary(60).map_outcomes(|_| 4.0);
        let report = cv_tmle(&data, TmleContext::Unconstrained, &TmleConfig::default()).unwrap();
        assert!(report.diagnostics.is_none());
        assert_eq!((report.psi_hat, report.ci_lo, report.ci_hi), (0.0, 0.0, 0.0));
        assert!(report.warnings[0].contains("constant outcome"));
    }

    #[test]
    fn rejects_small_samples() {
        assert!(cv_tmle(&binary(49), TmleContext::Unconstrained, &TmleConfig::default()).is_err());
    }

    #[test]
    fn influence_hand_computation() {
        // p = 0.5 everywhere, so h = ±2
        let inputs = InfluenceInputs {
            outcome: &[0.9, 0.2, 0.5],
            treated: &[true, false, true],
            propensity: &[0.5, 0.5, 0.5],
            qstar0: &[0.4, 0.3, 0.5],
            qstar1: &[0.7, 0.6, 0.5],
        };
        let d = influence_values(&inputs, 0.1);
        let expected = [
            2.0 * (0.9 - 0.7) + 0.7 - 0.4 - 0.1,
            -2.0 * (0.2 - 0.3) + 0.6 - 0.3 - 0.1,
            2.0 * (0.5 - 0.5) + 0.0 - 0.1,
        ];
        for (a, b) in d.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((d[0] - 0.6).abs() < 1e-12 && (d[1] - 0.4).abs() < 1e-12 && (d[2] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_reduces_to_effect() {
        let inputs = InfluenceInputs {
            outcome: &[0.7, 0.3],
            treated: &[true, false],
            propensity: &[0.25, 0.75],
            qstar0: &[0.1, 0.3],
            qstar1: &[0.7, 0.9],
        };
        let d = influence_values(&inputs, 0.2);
        assert!((d[0] - (0.6 - 0.2)).abs() < 1e-15);
        assert!((d[1] - (0.6 - 0.2)).abs() < 1e-15);
    }

    #[test]
    fn small_run_satisfies_invariants() {
        let sim = simulate(&DgpSpec::new(Dgp::LinearCate, 400, 3)).unwrap();
        for ctx in [TmleContext::Unconstrained, TmleContext::Constrained { q: 0.3 }] {
            let config = TmleConfig {
                alt_variance: true,
                ..TmleConfig::default().with_seed(5)
            };
            let (report, trace) = cv_tmle_traced(&sim.data, ctx, &config).unwrap();
            let trace = trace.unwrap();
            let diag = report.diagnostics.as_ref().unwrap();
            assert!(diag.score_residual.abs() <= 1e-8, "{}", diag.score_residual);
            assert!(diag.alt_sigma_hat.is_some());
            assert!(report.ci_lo <= report.psi_hat && report.psi_hat <= report.ci_hi);
            assert!(report.delta_n >= 0.0);
            if let TmleContext::Constrained { q } = ctx {
                assert!(report.treated_fraction <= q);
            }
            for (i, &v) in trace.scored_by.iter().enumerate() {
                assert!(trace.training[v].binary_search(&i).is_err());
            }
            let half = 1.96 * report.sigma_hat / (report.n as f64).sqrt();
            assert!((report.ci_hi - report.psi_hat - half).abs() < 1e-12);
            // the plug-in sum over the rule reproduces psi
            let psi: f64 = (0..report.n)
                .filter(|&i| trace.in_rule[i])
                .map(|i| trace.qstar1[i] - trace.qstar0[i])
                .sum::<f64>()
                / report.n as f64;
            assert!((psi * report.scale.width() - report.psi_hat).abs() < 1e-12);
        }
    }

    #[test]
    fn reruns_are_bit_identical() {
        let sim = simulate(&DgpSpec::new(Dgp::CrossoverCate, 300, 8)).unwrap();
        let config = TmleConfig::default().with_seed(2);
        let a = cv_tmle(&sim.data, TmleContext::Constrained { q: 0.25 }, &config).unwrap();
        let b = cv_tmle(&sim.data, TmleContext::Constrained { q: 0.25 }, &config).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}
