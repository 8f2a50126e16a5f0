//! Trial data, potential-outcome populations and synthetic data-generating processes.
//!
//! A [`TrialDataset`] is what an analyst observes: covariates, a binary
//! treatment, an outcome and the known probability of the arm received. A
//! [`PotentialPopulation`] carries both potential outcomes for every unit and
//! is the ground truth the oracle and the simulation studies work against.

mod dgp;
mod io;

pub use dgp::{reveal, simulate, Dgp, DgpSpec, Simulation};
pub use io::{
    load_csv, load_population_csv, read_csv, read_population_csv, write_csv, write_truth_csv,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One observed trial participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub covariates: Vec<f64>,
    pub treated: bool,
    pub outcome: f64,
    /// Probability of the arm actually received, `P(A = a | C = c)`.
    pub propensity: f64,
    pub cost: Option<f64>,
}

impl TrialRecord {
    pub fn new(
        covariates: Vec<f64>,
        treated: bool,
        outcome: f64,
        propensity: f64,
        cost: Option<f64>,
    ) -> Result<Self> {
        let record = Self {
            covariates,
            treated,
            outcome,
            propensity,
            cost,
        };
        record.validate().map_err(Error::Validation)?;
        Ok(record)
    }

    fn validate(&self) -> Result<(), String> {
        if !(self.propensity > 0.0 && self.propensity < 1.0) {
            return Err(format!(
                "propensity must lie strictly inside (0, 1), got {}",
                self.propensity
            ));
        }
        if let Some(cost) = self.cost {
            if !(cost > 0.0 && cost.is_finite()) {
                return Err(format!("cost must be a positive finite number, got {cost}"));
            }
        }
        if !self.outcome.is_finite() {
            return Err(format!("outcome must be finite, got {}", self.outcome));
        }
        if let Some(c) = self.covariates.iter().find(|c| !c.is_finite()) {
            return Err(format!("covariates must be finite, got {c}"));
        }
        Ok(())
    }

    /// Treatment indicator as 0/1.
    pub fn arm(&self) -> u8 {
        u8::from(self.treated)
    }

    /// `P(A = arm | C = c)` for either arm, derived from the observed-arm propensity.
    pub fn propensity_of(&self, treated: bool) -> f64 {
        if treated == self.treated {
            self.propensity
        } else {
            1.0 - self.propensity
        }
    }

    /// `(2a - 1) / P(A = a | C = c)` evaluated at the observed arm.
    pub fn clever_covariate(&self) -> f64 {
        clever_covariate(self.treated, self.propensity)
    }
}

/// `(2a - 1) / P(A = a | C = c)` where `propensity` is the probability of arm `a`.
pub fn clever_covariate(treated: bool, propensity: f64) -> f64 {
    if treated {
        1.0 / propensity
    } else {
        -1.0 / propensity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Design {
    /// Every unit treated independently with probability `p`.
    Randomized { p: f64 },
    /// Propensities supplied per record; covariates assumed to control confounding.
    Observational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    records: Vec<TrialRecord>,
    covariate_names: Vec<String>,
    design: Design,
}

impl TrialDataset {
    pub fn new(
        records: Vec<TrialRecord>,
        covariate_names: Vec<String>,
        design: Design,
    ) -> Result<Self> {
        let dim = covariate_names.len();
        if let Design::Randomized { p } = design {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Validation(format!(
                    "randomization probability must lie in (0, 1), got {p}"
                )));
            }
        }
        for (i, r) in records.iter().enumerate() {
            let row = i + 1;
            if r.covariates.len() != dim {
                return Err(Error::InvalidRecord {
                    row,
                    message: format!(
                        "expected {dim} covariates, found {}",
                        r.covariates.len()
                    ),
                });
            }
            r.validate()
                .map_err(|message| Error::InvalidRecord { row, message })?;
            if let Design::Randomized { p } = design {
                let expected = if r.treated { p } else { 1.0 - p };
                if (r.propensity - expected).abs() > 1e-12 {
                    return Err(Error::InvalidRecord {
                        row,
                        message: format!(
                            "randomized design with p = {p} requires propensity {expected}, found {}",
                            r.propensity
                        ),
                    });
                }
            }
        }
        Ok(Self {
            records,
            covariate_names,
            design,
        })
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn design(&self) -> Design {
        self.design
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn has_costs(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.cost.is_some())
    }

    /// Records at the given indices, same design and names.
    pub fn subset(&self, indices: &[usize]) -> TrialDataset {
        TrialDataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            covariate_names: self.covariate_names.clone(),
            design: self.design,
        }
    }

    /// Same records with outcomes replaced through `map`.
    pub fn map_outcomes(&self, map: impl Fn(f64) -> f64) -> TrialDataset {
        let records = self
            .records
            .iter()
            .map(|r| TrialRecord {
                outcome: map(r.outcome),
                ..r.clone()
            })
            .collect();
        TrialDataset {
            records,
            covariate_names: self.covariate_names.clone(),
            design: self.design,
        }
    }
}

/// A unit with both potential outcomes known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialUnit {
    pub covariates: Vec<f64>,
    pub y0: f64,
    pub y1: f64,
    /// Population weight; a unit may stand for a whole stratum.
    pub mass: f64,
    pub cost: Option<f64>,
}

impl PotentialUnit {
    pub fn new(covariates: Vec<f64>, y0: f64, y1: f64) -> Self {
        Self {
            covariates,
            y0,
            y1,
            mass: 1.0,
            cost: None,
        }
    }

    pub fn with_mass(mut self, mass: f64) -> Self {
        self.mass = mass;
        self
    }

    pub fn with_cost(mut self, cost: f64) -> Self {
        self.cost = Some(cost);
        self
    }

    /// Individual treatment effect `y1 - y0`.
    pub fn effect(&self) -> f64 {
        self.y1 - self.y0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialPopulation {
    units: Vec<PotentialUnit>,
    covariate_names: Vec<String>,
}

impl PotentialPopulation {
    pub fn new(units: Vec<PotentialUnit>) -> Result<Self> {
        let dim = units.first().map_or(0, |u| u.covariates.len());
        let names = (1..=dim).map(|j| format!("c{j}")).collect();
        Self::with_names(units, names)
    }

    pub fn with_names(units: Vec<PotentialUnit>, covariate_names: Vec<String>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::Validation("population must be nonempty".into()));
        }
        let dim = covariate_names.len();
        for (i, u) in units.iter().enumerate() {
            let row = i + 1;
            if u.covariates.len() != dim {
                return Err(Error::InvalidRecord {
                    row,
                    message: format!("expected {dim} covariates, found {}", u.covariates.len()),
                });
            }
            if !(u.mass > 0.0 && u.mass.is_finite()) {
                return Err(Error::InvalidRecord {
                    row,
                    message: format!("mass must be positive and finite, got {}", u.mass),
                });
            }
            if !(u.y0.is_finite() && u.y1.is_finite()) {
                return Err(Error::InvalidRecord {
                    row,
                    message: "potential outcomes must be finite".into(),
                });
            }
            if let Some(cost) = u.cost {
                if !(cost > 0.0 && cost.is_finite()) {
                    return Err(Error::InvalidRecord {
                        row,
                        message: format!("cost must be positive and finite, got {cost}"),
                    });
                }
            }
        }
        Ok(Self {
            units,
            covariate_names,
        })
    }

    /// Unweighted population built directly from `(y0, y1)` pairs, no covariates.
    pub fn from_outcomes(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::with_names(
            pairs
                .iter()
                .map(|&(y0, y1)| PotentialUnit::new(Vec::new(), y0, y1))
                .collect(),
            Vec::new(),
        )
    }

    /// Unweighted population with `y0 = 0` and `y1 = effect`.
    pub fn from_effects(effects: &[f64]) -> Result<Self> {
        let pairs: Vec<_> = effects.iter().map(|&v| (0.0, v)).collect();
        Self::from_outcomes(&pairs)
    }

    pub fn units(&self) -> &[PotentialUnit] {
        &self.units
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.units.iter().map(|u| u.mass).sum()
    }

    pub fn effects(&self) -> Vec<f64> {
        self.units.iter().map(PotentialUnit::effect).collect()
    }

    /// True when every unit carries the same mass.
    pub fn is_unweighted(&self) -> bool {
        let m0 = self.units[0].mass;
        self.units.iter().all(|u| u.mass == m0)
    }

    pub fn has_costs(&self) -> bool {
        self.units.iter().all(|u| u.cost.is_some())
    }

    /// Mass-weighted mean of `y1`.
    pub fn mean_y1(&self) -> f64 {
        self.weighted_mean(|u| u.y1)
    }

    /// Mass-weighted mean of `y0`.
    pub fn mean_y0(&self) -> f64 {
        self.weighted_mean(|u| u.y0)
    }

    fn weighted_mean(&self, f: impl Fn(&PotentialUnit) -> f64) -> f64 {
        let total = self.total_mass();
        self.units.iter().map(|u| u.mass * f(u)).sum::<f64>() / total
    }
}
