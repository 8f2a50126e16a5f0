//! Browser demo: three operations on simulated one-covariate trials, each a
//! plain Rust function returning a serializable summary, exported to
//! JavaScript as a JSON string.

use optrule::cate::{assign_folds, fit_super_learner, CvMse, FMode, LearnerSpec, SuperLearnerConfig};
use optrule::data::{simulate, Dgp, DgpSpec};
use optrule::oracle::{StationaryPoint, TabulatedDensity};
use optrule::rules::{constrained_threshold, evaluate_on_truth, rule_constrained, rule_unconstrained, treated_mask};
use optrule::tmle::{cv_tmle, TmleConfig, TmleContext};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Upper bound on simulated trial size, to keep the page responsive.
pub const MAX_N: usize = 20_000;
const CURVE_POINTS: usize = 101;

fn check_inputs(n: usize, q: f64) -> Result<(), String> {
    if !(50..=MAX_N).contains(&n) {
        return Err(format!("n must lie in [50, {MAX_N}], got {n}"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(format!("q must lie in (0, 1), got {q}"));
    }
    Ok(())
}

fn library(learners: &str) -> Result<Vec<LearnerSpec>, String> {
    LearnerSpec::parse_list(learners).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct RuleSummary {
    pub threshold: f64,
    pub treated_fraction: f64,
    /// Mean outcome under the rule, on the simulated potential outcomes.
    pub value: f64,
    /// Best value any rule of this kind attains on the same units.
    pub oracle_value: f64,
    pub regret: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CateCurve {
    pub grid: Vec<f64>,
    pub estimated: Vec<f64>,
    pub truth: Vec<f64>,
    pub learners: Vec<String>,
    pub weights: Vec<f64>,
    pub cv_mse: Option<CvMse>,
    pub unconstrained: RuleSummary,
    pub constrained: RuleSummary,
}

/// Fit the stacked CATE model on a simulated trial and threshold it both ways.
pub fn cate_curve(dgp: &str, n: usize, seed: u64, q: f64, learners: &str) -> Result<CateCurve, String> {
    check_inputs(n, q)?;
    let dgp: Dgp = dgp.parse().map_err(|e: optrule::Error| e.to_string())?;
    let sim = simulate(&DgpSpec::new(dgp, n, seed)).map_err(|e| e.to_string())?;
    let folds = assign_folds(n, 5, seed).map_err(|e| e.to_string())?;
    let config = SuperLearnerConfig::new(library(learners)?, FMode::Outcome);
    let model = fit_super_learner(&sim.data, &config, &folds).map_err(|e| e.to_string())?;

    let grid: Vec<f64> = (0..CURVE_POINTS).map(|j| j as f64 / (CURVE_POINTS - 1) as f64).collect();
    let estimated = grid.iter().map(|&c| model.predict(&[c])).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let truth = grid.iter().map(|&c| dgp.cate(&[c])).collect();

    let pop = &sim.population;
    let effects = pop.effects();
    let summarize = |rule: &optrule::rules::TreatmentRule, oracle_mask: Vec<bool>| -> Result<RuleSummary, String> {
        let eval = evaluate_on_truth(rule, pop).map_err(|e| e.to_string())?;
        let oracle = optrule::rules::evaluate_mask_on_truth(&oracle_mask, pop).map_err(|e| e.to_string())?;
        Ok(RuleSummary {
            threshold: rule.threshold,
            treated_fraction: eval.treated_fraction,
            value: eval.value,
            oracle_value: oracle.value,
            regret: oracle.value - eval.value,
        })
    };
    let free = rule_unconstrained(model.clone());
    let unconstrained = summarize(&free, effects.iter().map(|&e| e > 0.0).collect())?;
    let capped = rule_constrained(model.clone(), &sim.data, q).map_err(|e| e.to_string())?;
    let cut = constrained_threshold(&effects, q).map_err(|e| e.to_string())?;
    let constrained = summarize(&capped, treated_mask(&effects, cut))?;

    Ok(CateCurve {
        grid,
        estimated,
        truth,
        learners: model.labels().to_vec(),
        weights: model.weights().to_vec(),
        cv_mse: model.cv_mse().cloned(),
        unconstrained,
        constrained,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct KappaCurve {
    pub kappa: Vec<f64>,
    pub density: Vec<f64>,
    pub residual: Vec<f64>,
    /// `null` where one side of the split has no mass.
    pub heterogeneity: Vec<Option<f64>>,
    pub stationary: Vec<StationaryPoint>,
    pub solution: Option<StationaryPoint>,
    pub message: Option<String>,
}

fn biweight(u: f64) -> f64 {
    if u.abs() < 1.0 {
        15.0 / 16.0 * (1.0 - u * u).powi(2)
    } else {
        0.0
    }
}

/// Stationarity residual and heterogeneity gap of a two-bump effect density:
/// biweight bumps of half-width `width` at `-sep/2` and `+sep/2` (the lower one
/// with weight `w`) over a uniform floor of mass `floor`.
pub fn kappa_curve(sep: f64, width: f64, w: f64, floor: f64, points: usize) -> Result<KappaCurve, String> {
    if !(sep >= 0.0 && width > 0.0 && (0.0..=1.0).contains(&w) && (0.0..=1.0).contains(&floor)) {
        return Err("need sep >= 0, width > 0 and w, floor in [0, 1]".into());
    }
    if !(16..=5001).contains(&points) {
        return Err(format!("points must lie in [16, 5001], got {points}"));
    }
    let (m1, m2) = (-sep / 2.0, sep / 2.0);
    let (lo, hi) = (m1 - width, m2 + width);
    let grid: Vec<f64> = (0..points).map(|j| lo + (hi - lo) * j as f64 / (points - 1) as f64).collect();
    let raw: Vec<f64> = grid
        .iter()
        .map(|&v| {
            let bumps = (w * biweight((v - m1) / width) + (1.0 - w) * biweight((v - m2) / width)) / width;
            (1.0 - floor) * bumps + floor / (hi - lo)
        })
        .collect();
    let total: f64 = grid.windows(2).zip(raw.windows(2)).map(|(x, p)| 0.5 * (x[1] - x[0]) * (p[0] + p[1])).sum();
    let values: Vec<f64> = raw.iter().map(|p| p / total).collect();
    let density = TabulatedDensity::new(grid.clone(), values.clone()).map_err(|e| e.to_string())?;
    let (solution, message) = match density.solve_kappa() {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(KappaCurve {
        residual: grid.iter().map(|&k| density.residual(k)).collect(),
        heterogeneity: grid.iter().map(|&k| density.heterogeneity(k)).collect(),
        stationary: density.stationary_points(),
        kappa: grid,
        density: values,
        solution,
        message,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TmleSummary {
    pub psi_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub sigma_hat: f64,
    pub delta_n: f64,
    pub treated_fraction: f64,
    /// Gain of the best rule of this kind on the simulated units.
    pub sample_oracle_gain: f64,
    pub warnings: Vec<String>,
}

/// CV-TMLE estimate of the gain of the estimated rule; `q = None` for the unconstrained context.
pub fn tmle_estimate(dgp: &str, n: usize, seed: u64, q: Option<f64>, learners: &str) -> Result<TmleSummary, String> {
    check_inputs(n, q.unwrap_or(0.5))?;
    let dgp: Dgp = dgp.parse().map_err(|e: optrule::Error| e.to_string())?;
    let sim = simulate(&DgpSpec::new(dgp, n, seed)).map_err(|e| e.to_string())?;
    let lib = library(learners)?;
    let config = TmleConfig {
        learners: lib.clone(),
        outcome_learners: lib,
        folds: 5,
        inner_folds: 5,
        ..TmleConfig::default()
    }
    .with_seed(seed);
    let context = match q {
        Some(q) => TmleContext::Constrained { q },
        None => TmleContext::Unconstrained,
    };
    let report = cv_tmle(&sim.data, context, &config).map_err(|e| e.to_string())?;
    let effects = sim.population.effects();
    let cut = match q {
        Some(q) => constrained_threshold(&effects, q).map_err(|e| e.to_string())?,
        None => 0.0,
    };
    let sample_oracle_gain = effects.iter().filter(|&&e| e > cut).sum::<f64>() / n as f64;
    Ok(TmleSummary {
        psi_hat: report.psi_hat,
        ci_lo: report.ci_lo,
        ci_hi: report.ci_hi,
        sigma_hat: report.sigma_hat,
        delta_n: report.delta_n,
        treated_fraction: report.treated_fraction,
        sample_oracle_gain,
        warnings: report.warnings,
    })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = cateCurve)]
pub fn cate_curve_js(dgp: &str, n: usize, seed: u32, q: f64, learners: &str) -> Result<String, JsError> {
    to_json(cate_curve(dgp, n, seed as u64, q, learners))
}

#[wasm_bindgen(js_name = kappaCurve)]
pub fn kappa_curve_js(sep: f64, width: f64, w: f64, floor: f64, points: usize) -> Result<String, JsError> {
    to_json(kappa_curve(sep, width, w, floor, points))
}

/// `q <= 0` selects the unconstrained context.
#[wasm_bindgen(js_name = tmleEstimate)]
pub fn tmle_estimate_js(dgp: &str, n: usize, seed: u32, q: f64, learners: &str) -> Result<String, JsError> {
    to_json(tmle_estimate(dgp, n, seed as u64, (q > 0.0).then_some(q), learners))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cate_curve_tracks_a_linear_truth() {
        let curve = cate_curve("linear_cate", 4000, 1, 0.2, "constant,linear").unwrap();
        assert_eq!(curve.grid.len(), CURVE_POINTS);
        let worst = curve.estimated.iter().zip(&curve.truth).map(|(e, t)| (e - t).abs()).fold(0.0, f64::max);
        assert!(worst < 0.15, "{worst}");
        assert!(curve.unconstrained.regret >= 0.0 && curve.constrained.regret >= 0.0);
        assert!(curve.constrained.treated_fraction <= 0.2);
        assert!((curve.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_curve_finds_the_symmetric_split() {
        let k = kappa_curve(2.0, 0.5, 0.5, 0.1, 401).unwrap();
        let s = k.solution.unwrap();
        assert!(s.kappa.abs() < 1e-6, "{}", s.kappa);
        assert_eq!(k.kappa.len(), 401);
        assert!(k.heterogeneity[0].is_none());
        // a single bump has no interior maximum
        let single = kappa_curve(0.0, 1.0, 0.5, 0.0, 401).unwrap();
        assert!(single.solution.is_none() && single.message.is_some());
    }

    #[test]
    fn tmle_estimate_brackets_the_gain() {
        let s = tmle_estimate("constant_effect", 2000, 3, None, "constant,linear").unwrap();
        assert!(s.ci_lo <= 0.25 && 0.25 <= s.ci_hi, "{s:?}");
        assert!((s.sample_oracle_gain - 0.25).abs() < 1e-12);
        let c = tmle_estimate("linear_cate", 2000, 3, Some(0.2), "constant,linear").unwrap();
        assert!(c.treated_fraction <= 0.2 && c.delta_n >= 0.0);
    }

    #[test]
    fn inputs_are_validated() {
        assert!(cate_curve("linear_cate", 10, 1, 0.2, "linear").is_err());
        assert!(cate_curve("nope", 100, 1, 0.2, "linear").is_err());
        assert!(tmle_estimate("linear_cate", 100, 1, Some(1.5), "linear").is_err());
        assert!(kappa_curve(1.0, 0.5, 0.5, 0.1, 8).is_err());
    }
}
