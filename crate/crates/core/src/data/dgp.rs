use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Design, PotentialPopulation, PotentialUnit, TrialDataset, TrialRecord};
use crate::rng::{rng_for, streams};
use crate::{Error, Result};

/// Named data-generating processes with closed-form truth.
///
/// Covariates are i.i.d. `Uniform(0, 1)`. The untreated outcome is
/// `y0 = 1 + 0.5 * sum(c) + noise_sd * e` with `e ~ N(0, 1)`, and the treated
/// outcome is `y1 = y0 + cate(c)`: both arms share the same noise draw, so the
/// individual effect of every unit is exactly `cate(c)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dgp {
    /// `cate(c) = 0.25`.
    ConstantEffect,
    /// `cate(c) = c1 - 0.5`.
    LinearCate,
    /// `cate(c) = 0.5 * sin(2 pi c1)`: benefit for `c1 < 1/2`, harm above.
    CrossoverCate,
    /// `cate(c) = 0`.
    NullEffect,
}

impl Dgp {
    pub const ALL: [Dgp; 4] = [
        Dgp::ConstantEffect,
        Dgp::LinearCate,
        Dgp::CrossoverCate,
        Dgp::NullEffect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dgp::ConstantEffect => "constant_effect",
            Dgp::LinearCate => "linear_cate",
            Dgp::CrossoverCate => "crossover_cate",
            Dgp::NullEffect => "null_effect",
        }
    }

    /// The true conditional average treatment effect at `c`.
    pub fn cate(self, c: &[f64]) -> f64 {
        let c1 = c.first().copied().unwrap_or(0.0);
        match self {
            Dgp::ConstantEffect => 0.25,
            Dgp::LinearCate => c1 - 0.5,
            Dgp::CrossoverCate => 0.5 * (2.0 * PI * c1).sin(),
            Dgp::NullEffect => 0.0,
        }
    }

    /// Mean untreated outcome at `c`.
    pub fn baseline(self, c: &[f64]) -> f64 {
        1.0 + 0.5 * c.iter().sum::<f64>()
    }

    /// Gain of the unconstrained optimal rule over treating nobody,
    /// `E[max(cate(C), 0)]`.
    pub fn unconstrained_gain(self) -> f64 {
        match self {
            Dgp::ConstantEffect => 0.25,
            // integral of (c - 1/2) over (1/2, 1)
            Dgp::LinearCate => 0.125,
            // 0.5 * integral of sin(2 pi c) over (0, 1/2) = 0.5 / pi
            Dgp::CrossoverCate => 0.5 / PI,
            Dgp::NullEffect => 0.0,
        }
    }
}

impl fmt::Display for Dgp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dgp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Dgp::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown dgp `{s}`; expected one of constant_effect, linear_cate, crossover_cate, null_effect"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub dgp: Dgp,
    pub n: usize,
    pub covariate_dim: usize,
    pub noise_sd: f64,
    pub seed: u64,
    /// Randomization probability of the trial.
    pub treat_prob: f64,
    /// Attach the per-unit cost `0.5 + c1` to every unit and record.
    #[serde(default)]
    pub costs: bool,
}

impl DgpSpec {
    pub fn new(dgp: Dgp, n: usize, seed: u64) -> Self {
        Self {
            dgp,
            n,
            covariate_dim: 1,
            noise_sd: 0.5,
            seed,
            treat_prob: 0.5,
            costs: false,
        }
    }

    pub fn with_costs(mut self, costs: bool) -> Self {
        self.costs = costs;
        self
    }

    /// Cost of treating a unit with covariates `c` when costs are enabled.
    pub fn unit_cost(c: &[f64]) -> f64 {
        0.5 + c[0]
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.covariate_dim = dim;
        self
    }

    pub fn with_noise(mut self, noise_sd: f64) -> Self {
        self.noise_sd = noise_sd;
        self
    }

    pub fn with_treat_prob(mut self, p: f64) -> Self {
        self.treat_prob = p;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Validation("n must be positive".into()));
        }
        if self.covariate_dim == 0 {
            return Err(Error::Validation("covariate_dim must be positive".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Validation("noise_sd must be a finite nonnegative number".into()));
        }
        if !(self.treat_prob > 0.0 && self.treat_prob < 1.0) {
            return Err(Error::Precondition(format!(
                "randomization probability must lie strictly inside (0, 1), got {}",
                self.treat_prob
            )));
        }
        Ok(())
    }
}

/// A simulated trial together with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub data: TrialDataset,
    pub population: PotentialPopulation,
    /// `cate(c_i)` for every unit, in unit order.
    pub true_cate: Vec<f64>,
    pub dgp: Dgp,
}

pub fn simulate(spec: &DgpSpec) -> Result<Simulation> {
    spec.validate()?;
    let mut cov_rng = rng_for(spec.seed, streams::COVARIATES);
    let mut noise_rng = rng_for(spec.seed, streams::NOISE);
    let names: Vec<String> = (1..=spec.covariate_dim).map(|j| format!("c{j}")).collect();

    let mut units = Vec::with_capacity(spec.n);
    let mut true_cate = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let c: Vec<f64> = (0..spec.covariate_dim).map(|_| cov_rng.random::<f64>()).collect();
        let e: f64 = noise_rng.sample(StandardNormal);
        let tau = spec.dgp.cate(&c);
        let y0 = spec.dgp.baseline(&c) + spec.noise_sd * e;
        let y1 = y0 + tau;
        true_cate.push(tau);
        let unit = PotentialUnit::new(c, y0, y1);
        units.push(if spec.costs {
            let cost = DgpSpec::unit_cost(&unit.covariates);
            unit.with_cost(cost)
        } else {
            unit
        });
    }
    let population = PotentialPopulation::with_names(units, names)?;
    let data = reveal(&population, spec.treat_prob, spec.seed)?;
    Ok(Simulation {
        data,
        population,
        true_cate,
        dgp: spec.dgp,
    })
}

/// Randomize every unit to treatment with probability `p` and reveal the
/// corresponding potential outcome.
pub fn reveal(pop: &PotentialPopulation, p: f64, seed: u64) -> Result<TrialDataset> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Precondition(format!(
            "randomization probability must lie strictly inside (0, 1), got {p}"
        )));
    }
    let mut rng = rng_for(seed, streams::ASSIGNMENT);
    let records = pop
        .units()
        .iter()
        .map(|u| {
            let treated = rng.random::<f64>() < p;
            TrialRecord {
                covariates: u.covariates.clone(),
                treated,
                outcome: if treated { u.y1 } else { u.y0 },
                propensity: if treated { p } else { 1.0 - p },
                cost: u.cost,
            }
        })
        .collect();
    TrialDataset::new(
        records,
        pop.covariate_names().to_vec(),
        Design::Randomized { p },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_effect_has_identical_potential_outcomes() {
        let sim = simulate(&DgpSpec::new(Dgp::NullEffect, 100, 3)).unwrap();
        assert!(sim.population.units().iter().all(|u| u.y1 == u.y0));
        assert!(sim.true_cate.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn zero_noise_reveals_deterministic_outcome() {
        let spec = DgpSpec::new(Dgp::LinearCate, 200, 11).with_noise(0.0);
        let sim = simulate(&spec).unwrap();
        for (r, u) in sim.data.records().iter().zip(sim.population.units()) {
            let c = &u.covariates;
            let expected = Dgp::LinearCate.baseline(c)
                + if r.treated { c[0] - 0.5 } else { 0.0 };
            assert_eq!(r.outcome, if r.treated { u.y1 } else { u.y0 });
            assert!((r.outcome - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn metadata_cate_matches_unit_effects_exactly() {
        for dgp in Dgp::ALL {
            let sim = simulate(&DgpSpec::new(dgp, 50, 5).with_dim(3).with_noise(0.0)).unwrap();
            for (u, &tau) in sim.population.units().iter().zip(&sim.true_cate) {
                assert!((u.effect() - tau).abs() < 1e-12, "{dgp}");
            }
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let spec = DgpSpec::new(Dgp::CrossoverCate, 64, 99).with_dim(2);
        assert_eq!(simulate(&spec).unwrap(), simulate(&spec).unwrap());
        let other = DgpSpec { seed: 100, ..spec };
        assert_ne!(simulate(&spec).unwrap().data, simulate(&other).unwrap().data);
    }

    #[test]
    fn reveal_rejects_boundary_probability() {
        let pop = PotentialPopulation::from_outcomes(&[(1.0, 3.0)]).unwrap();
        assert!(matches!(reveal(&pop, 1.0, 0), Err(Error::Precondition(_))));
        assert!(matches!(reveal(&pop, 0.0, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn reveal_records_observed_arm() {
        let pop = PotentialPopulation::from_outcomes(&[(1.0, 3.0); 40]).unwrap();
        let data = reveal(&pop, 0.25, 8).unwrap();
        for r in data.records() {
            if r.treated {
                assert_eq!((r.outcome, r.propensity), (3.0, 0.25));
            } else {
                assert_eq!((r.outcome, r.propensity), (1.0, 0.75));
            }
        }
        assert_eq!(data, reveal(&pop, 0.25, 8).unwrap());
    }

    #[test]
    fn dgp_names_round_trip() {
        for d in Dgp::ALL {
            assert_eq!(d.name().parse::<Dgp>().unwrap(), d);
        }
        assert!("bogus".parse::<Dgp>().is_err());
    }
}
