use std::collections::BTreeSet;

use optrule::cate::{
    assign_folds, cross_fitted_pseudo_outcomes, fit_super_learner, FMode, LearnerSpec, SuperLearnerConfig,
};
use optrule::data::{
    read_csv, read_population_csv, reveal, simulate, write_csv, write_truth_csv, Dgp, DgpSpec, PotentialPopulation,
    PotentialUnit, TrialDataset, TrialRecord,
};
use optrule::oracle::exhaustive::all_partitions;
use optrule::oracle::{
    heterogeneity_objective, partition_value, random_allocation_value, solve_constrained, solve_cost_constrained,
    solve_heterogeneity, solve_unconstrained, Partition,
};
use optrule::rules::{
    budget_cutoff, constrained_threshold, evaluate_mask_on_truth, evaluate_on_truth, quota, rule_on_population,
    treated_mask, RuleContext, ScoreSource,
};
use optrule::tmle::{cv_tmle, TmleConfig, TmleContext};
use proptest::prelude::*;

/// Population whose single covariate is the unit's effect, so `Covariate { index: 0 }` is the true CATE.
fn effect_population(pairs: &[(f64, f64)]) -> PotentialPopulation {
    PotentialPopulation::new(pairs.iter().map(|&(y0, y1)| PotentialUnit::new(vec![y1 - y0], y0, y1)).collect())
        .unwrap()
}

fn integer_pairs(max_n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-3i32..=3, -3i32..=3).prop_map(|(a, b)| (a as f64, b as f64)), 2..=max_n)
}

fn real_pairs(max_n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 2..=max_n)
}

fn mixed_pairs(max_n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop_oneof![integer_pairs(max_n), real_pairs(max_n)]
}

fn trial_dataset(n: usize, seed: u64, with_cost: bool) -> TrialDataset {
    let spec = DgpSpec::new(Dgp::CrossoverCate, n, seed).with_dim(2).with_costs(with_cost);
    simulate(&spec).unwrap().data
}

// ------------------------------------------------------------------ data

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn observed_csv_round_trips(rows in prop::collection::vec(
        (prop::collection::vec(-1e6f64..1e6, 3), any::<bool>(), -1e3f64..1e3, 0.01f64..0.99, prop::option::of(0.01f64..50.0)),
        1..40,
    ), cost_everywhere in any::<bool>()) {
        let records: Vec<TrialRecord> = rows
            .iter()
            .map(|(c, t, y, p, cost)| {
                let cost = if cost_everywhere { Some(cost.unwrap_or(1.5)) } else { None };
                TrialRecord::new(c.clone(), *t, *y, *p, cost).unwrap()
            })
            .collect();
        let names = vec!["x".to_string(), "z".to_string(), "w".to_string()];
        let data = TrialDataset::new(records, names, optrule::data::Design::Observational).unwrap();
        let mut buf = Vec::new();
        write_csv(&data, &mut buf).unwrap();
        prop_assert_eq!(read_csv(buf.as_slice(), None).unwrap(), data);
    }

    #[test]
    fn truth_csv_round_trips(n in 1usize..30, seed in 0u64..1000) {
        let sim = simulate(&DgpSpec::new(Dgp::LinearCate, n, seed).with_costs(seed % 2 == 0)).unwrap();
        let mut buf = Vec::new();
        write_truth_csv(&sim.population, &sim.true_cate, &mut buf).unwrap();
        prop_assert_eq!(read_population_csv(buf.as_slice()).unwrap(), sim.population);
    }
}

#[test]
fn reveal_treated_fraction_concentrates() {
    let n = 10_000;
    let pop = PotentialPopulation::from_outcomes(&vec![(0.0, 1.0); n]).unwrap();
    let bound = 4.0 * (0.25 / n as f64).sqrt();
    for seed in 0..300 {
        let data = reveal(&pop, 0.5, seed).unwrap();
        let frac = data.records().iter().filter(|r| r.treated).count() as f64 / n as f64;
        assert!((frac - 0.5).abs() <= bound, "seed {seed}: {frac}");
    }
}

// ------------------------------------------------------------------ oracle

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn unconstrained_dominates_every_partition(pairs in mixed_pairs(12), q in 0.0f64..=1.0) {
        let pop = PotentialPopulation::from_outcomes(&pairs).unwrap();
        let best = solve_unconstrained(&pop).unwrap().objective_value;
        for part in all_partitions(pop.len()).unwrap() {
            prop_assert!(partition_value(&pop, &part).unwrap() <= best + 1e-12);
        }
        prop_assert!(random_allocation_value(&pop, q).unwrap() <= best + 1e-12);
    }

    #[test]
    fn heterogeneity_scan_beats_every_partition(pairs in mixed_pairs(12)) {
        let pop = PotentialPopulation::from_outcomes(&pairs).unwrap();
        let sol = solve_heterogeneity(&pop).unwrap();
        let n = pop.len();
        for part in all_partitions(n).unwrap().filter(|p| p.treated_count() > 0 && p.treated_count() < n) {
            prop_assert!(heterogeneity_objective(&pop, &part).unwrap() <= sol.objective_value + 1e-12);
        }
        // value ordering between the two contexts
        let free = solve_unconstrained(&pop).unwrap();
        prop_assert!(free.objective_value >= partition_value(&pop, &sol.partition).unwrap());
    }

    #[test]
    fn unit_cost_budget_matches_quota(effects in prop::collection::btree_set(-40i32..40, 2..25), m_frac in 0.0f64..1.0) {
        // distinct effects, budget within the positive ones
        let pairs: Vec<(f64, f64)> = effects.iter().map(|&e| (0.0, e as f64 + 0.5)).collect();
        let pop = PotentialPopulation::from_outcomes(&pairs).unwrap();
        let n = pop.len();
        let positives = pairs.iter().filter(|p| p.1 > 0.0).count();
        prop_assume!(positives > 0);
        let m = 1 + (m_frac * positives as f64) as usize % positives;
        let by_cost = solve_cost_constrained(&pop, &vec![1.0; n], m as f64).unwrap();
        let by_quota = solve_constrained(&pop, m as f64 / n as f64).unwrap();
        prop_assert_eq!(&by_cost.partition, &by_quota.partition);
        prop_assert!((by_cost.objective_value - by_quota.objective_value).abs() <= 1e-12);
    }
}

// ------------------------------------------------------------------ rules

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn constrained_threshold_respects_quota_and_nests(
        scores in prop::collection::vec(-5.0f64..5.0, 1..200),
        q1 in 0.001f64..0.999,
        q2 in 0.001f64..0.999,
    ) {
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let small = treated_mask(&scores, constrained_threshold(&scores, lo).unwrap());
        let large = treated_mask(&scores, constrained_threshold(&scores, hi).unwrap());
        let count = |m: &[bool]| m.iter().filter(|&&t| t).count();
        prop_assert!(count(&small) <= quota(lo, scores.len()));
        prop_assert!(count(&large) <= quota(hi, scores.len()));
        prop_assert!(small.iter().zip(&large).all(|(&s, &l)| !s || l));
    }

    #[test]
    fn budget_cutoff_never_overspends(
        rows in prop::collection::vec((-3.0f64..3.0, 0.05f64..4.0), 1..150),
        budget in 0.01f64..2.0,
    ) {
        let (scores, costs): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
        let total = budget * scores.len() as f64;
        let k = budget_cutoff(&scores, &costs, total).unwrap();
        let spent: f64 = scores.iter().zip(&costs).filter(|(s, c)| *s / *c > k).map(|(_, c)| c).sum();
        prop_assert!(k >= 0.0);
        prop_assert!(spent <= total * (1.0 + 1e-12));
    }

    #[test]
    fn true_score_rules_reproduce_oracle_partitions(pairs in mixed_pairs(40)) {
        let pop = effect_population(&pairs);
        let score = ScoreSource::Covariate { index: 0 };

        let rule = rule_on_population(score.clone(), RuleContext::Unconstrained, &pop).unwrap();
        prop_assert_eq!(rule.mask_population(&pop).unwrap(), solve_unconstrained(&pop).unwrap().partition.mask().to_vec());

        let rule = rule_on_population(score, RuleContext::Heterogeneity, &pop).unwrap();
        let oracle = solve_heterogeneity(&pop).unwrap();
        if oracle.degenerate {
            // the oracle names one unit; the rule, with nothing to split, treats nobody
            prop_assert!(rule.degenerate);
            prop_assert!(rule.mask_population(&pop).unwrap().iter().all(|&t| !t));
        } else {
            prop_assert_eq!(rule.mask_population(&pop).unwrap(), oracle.partition.mask().to_vec());
        }
    }

    #[test]
    fn true_score_constrained_rule_matches_oracle(effects in prop::collection::btree_set(-40i32..40, 2..40), m_frac in 0.0f64..1.0) {
        let pairs: Vec<(f64, f64)> = effects.iter().rev().map(|&e| (1.0, 1.0 + e as f64 + 0.5)).collect();
        let positives = pairs.iter().filter(|p| p.1 > p.0).count();
        prop_assume!(positives > 0);
        let pop = effect_population(&pairs);
        let n = pop.len();
        let m = 1 + (m_frac * positives as f64) as usize % positives;
        let q = m as f64 / n as f64;
        prop_assume!(q < 1.0);
        let rule = rule_on_population(ScoreSource::Covariate { index: 0 }, RuleContext::Constrained { q }, &pop).unwrap();
        prop_assert_eq!(rule.mask_population(&pop).unwrap(), solve_constrained(&pop, q).unwrap().partition.mask().to_vec());
    }

    #[test]
    fn true_unconstrained_rule_has_the_best_value(pairs in mixed_pairs(12)) {
        let pop = effect_population(&pairs);
        let score = ScoreSource::Covariate { index: 0 };
        let best = evaluate_on_truth(&rule_on_population(score.clone(), RuleContext::Unconstrained, &pop).unwrap(), &pop)
            .unwrap()
            .value;
        for part in all_partitions(pop.len()).unwrap() {
            prop_assert!(evaluate_mask_on_truth(part.mask(), &pop).unwrap().value <= best + 1e-12);
        }
        let het = rule_on_population(score, RuleContext::Heterogeneity, &pop).unwrap();
        prop_assert!(evaluate_on_truth(&het, &pop).unwrap().value <= best + 1e-12);
    }

    #[test]
    fn heterogeneity_is_the_effect_gap(pairs in mixed_pairs(30), bits in any::<u64>()) {
        let pop = PotentialPopulation::from_outcomes(&pairs).unwrap();
        let mask: Vec<bool> = (0..pop.len()).map(|i| bits >> (i % 64) & 1 == 1).collect();
        let eval = evaluate_mask_on_truth(&mask, &pop).unwrap();
        match (eval.effect_in_t, eval.effect_in_s) {
            (Some(t), Some(s)) => prop_assert_eq!(eval.heterogeneity, Some(t - s)),
            _ => prop_assert_eq!(eval.heterogeneity, None),
        }
        if eval.heterogeneity.is_some() {
            let part = Partition::from_mask(mask);
            prop_assert_eq!(eval.heterogeneity.unwrap(), heterogeneity_objective(&pop, &part).unwrap());
        }
    }
}

// ------------------------------------------------------------------ cate

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn ensemble_weights_feasible_and_dominant(seed in 0u64..10_000, n in 60usize..300, k in 2usize..8, zero in any::<bool>()) {
        let data = trial_dataset(n, seed, false);
        let folds = assign_folds(n, k, seed).unwrap();
        let mode = if zero { FMode::Zero } else { FMode::Outcome };
        let lib = LearnerSpec::parse_list("constant,linear,knn:5,stump:2").unwrap();
        let model = fit_super_learner(&data, &SuperLearnerConfig::new(lib, mode), &folds).unwrap();
        let w = model.weights();
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let mse = model.cv_mse().unwrap();
        for &m in &mse.per_learner {
            prop_assert!(mse.ensemble <= m + 1e-6);
        }
    }

    #[test]
    fn folds_partition_the_records(n in 2usize..500, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let folds = assign_folds(n, k, seed).unwrap();
        let sizes = folds.sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut seen = BTreeSet::new();
        for v in 0..k {
            let (train, held) = folds.split(v);
            prop_assert_eq!(train.len() + held.len(), n);
            prop_assert!(held.iter().all(|&i| folds.fold_of(i) == v));
            prop_assert!(train.iter().all(|&i| folds.fold_of(i) != v));
            seen.extend(held);
        }
        prop_assert_eq!(seen.len(), n);
    }
}

/// With an exactly linear CATE the binned pseudo-outcome curves for `f = 0` and
/// a fitted `f` estimate the same function.
#[test]
fn pseudo_outcome_curve_does_not_depend_on_f() {
    let sim = simulate(&DgpSpec::new(Dgp::LinearCate, 100_000, 77)).unwrap();
    let folds = assign_folds(sim.data.len(), 10, 77).unwrap();
    let curve = |mode| {
        let y = cross_fitted_pseudo_outcomes(&sim.data, &SuperLearnerConfig::new(vec![LearnerSpec::linear()], mode), &folds)
            .unwrap();
        let mut bins = vec![Vec::new(); 10];
        for (r, v) in sim.data.records().iter().zip(y) {
            bins[((r.covariates[0] * 10.0) as usize).min(9)].push(v);
        }
        bins.into_iter()
            .map(|b| {
                let k = b.len() as f64;
                let mean = b.iter().sum::<f64>() / k;
                let var = b.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
                (mean, var / k)
            })
            .collect::<Vec<_>>()
    };
    for ((m0, v0), (m1, v1)) in curve(FMode::Zero).into_iter().zip(curve(FMode::Outcome)) {
        assert!((m0 - m1).abs() <= 3.0 * (v0 + v1).sqrt(), "{m0} vs {m1}");
    }
}

// ------------------------------------------------------------------ tmle

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn cutoff_is_feasible_and_score_equation_holds(seed in 0u64..1000, q in 0.05f64..0.6) {
        let data = trial_dataset(200, seed, false);
        let config = TmleConfig {
            learners: LearnerSpec::parse_list("constant,linear").unwrap(),
            outcome_learners: LearnerSpec::parse_list("constant,linear").unwrap(),
            folds: 5,
            inner_folds: 5,
            ..TmleConfig::default()
        }
        .with_seed(seed);
        let report = cv_tmle(&data, TmleContext::Constrained { q }, &config).unwrap();
        prop_assert!(report.delta_n >= 0.0);
        prop_assert!(report.treated_fraction <= q);
        let d = report.diagnostics.unwrap();
        prop_assert!(d.score_residual.abs() <= 1e-8);
    }
}
