//! Exact treatment-rule solutions on finite populations whose potential
//! outcomes are both known.
//!
//! These solvers are the ground truth against which estimated rules are
//! judged. All population expectations are mass-weighted. A unit belongs to
//! the treated set `T` when its effect `y1 - y0` is strictly greater than the
//! reported threshold; when an exact treated proportion is required and
//! several units tie at the threshold, the lowest-index tied units are
//! promoted into `T` until the proportion is met.

pub mod exhaustive;
mod kappa;

pub use kappa::{kappa_stationarity_residual, StationaryKind, StationaryPoint, TabulatedDensity};

use serde::{Deserialize, Serialize};

use crate::data::PotentialPopulation;
use crate::{Error, Result};

/// Relative tolerance when matching a treated mass against a requested proportion.
pub const PROPORTION_TOL: f64 = 1e-12;

/// Membership mask of the treated set `T`; its complement is `S`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    treated: Vec<bool>,
}

impl Partition {
    pub fn from_mask(treated: Vec<bool>) -> Self {
        Self { treated }
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self> {
        let mut treated = vec![false; n];
        for &i in indices {
            if i >= n {
                return Err(Error::Precondition(format!(
                    "unit index {i} out of range for population of {n}"
                )));
            }
            treated[i] = true;
        }
        Ok(Self { treated })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            treated: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.treated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treated.is_empty()
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.treated[i]
    }

    pub fn mask(&self) -> &[bool] {
        &self.treated
    }

    pub fn treated_count(&self) -> usize {
        self.treated.iter().filter(|&&t| t).count()
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.treated.len()).filter(|&i| self.treated[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    ConstrainedValue,
    UnconstrainedValue,
    CostValue,
    Heterogeneity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub partition: Partition,
    /// `κ` (effect scale) or `k` (effect per unit cost). `-inf` when every unit is treated.
    pub threshold: f64,
    pub objective_value: f64,
    pub objective: Objective,
    /// Set when every effect is equal and no threshold split exists.
    pub degenerate: bool,
}

fn check_partition(pop: &PotentialPopulation, part: &Partition) -> Result<()> {
    if part.len() != pop.len() {
        return Err(Error::Precondition(format!(
            "partition covers {} units, population has {}",
            part.len(),
            pop.len()
        )));
    }
    Ok(())
}

fn check_proportion(q: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Precondition(format!("proportion must lie in [0, 1], got {q}")));
    }
    Ok(())
}

/// Mass-weighted mean outcome when `T` is treated and `S` is not.
pub fn partition_value(pop: &PotentialPopulation, part: &Partition) -> Result<f64> {
    check_partition(pop, part)?;
    let total = pop.total_mass();
    let sum: f64 = pop
        .units()
        .iter()
        .zip(part.mask())
        .map(|(u, &t)| u.mass * if t { u.y1 } else { u.y0 })
        .sum();
    Ok(sum / total)
}

/// Fraction of population mass in `T`.
pub fn treated_mass_fraction(pop: &PotentialPopulation, part: &Partition) -> Result<f64> {
    check_partition(pop, part)?;
    let treated: f64 = pop
        .units()
        .iter()
        .zip(part.mask())
        .filter(|(_, &t)| t)
        .map(|(u, _)| u.mass)
        .sum();
    Ok(treated / pop.total_mass())
}

/// `q E[Y1 | T] + (1 - q) E[Y0 | S]` for a partition treating exactly a fraction `q`.
pub fn constrained_value(pop: &PotentialPopulation, part: &Partition, q: f64) -> Result<f64> {
    check_proportion(q)?;
    let frac = treated_mass_fraction(pop, part)?;
    if (frac - q).abs() > PROPORTION_TOL {
        return Err(Error::Precondition(format!(
            "partition treats a fraction {frac} of the population, expected {q}"
        )));
    }
    partition_value(pop, part)
}

/// `q E[Y1] + (1 - q) E[Y0]`: treat a random fraction `q`.
pub fn random_allocation_value(pop: &PotentialPopulation, q: f64) -> Result<f64> {
    check_proportion(q)?;
    Ok(q * pop.mean_y1() + (1.0 - q) * pop.mean_y0())
}

/// `E[V | T] - E[V | S]` with `V = y1 - y0`.
pub fn heterogeneity_objective(pop: &PotentialPopulation, part: &Partition) -> Result<f64> {
    check_partition(pop, part)?;
    let (mut mt, mut vt, mut ms, mut vs) = (0.0, 0.0, 0.0, 0.0);
    for (u, &t) in pop.units().iter().zip(part.mask()) {
        if t {
            mt += u.mass;
            vt += u.mass * u.effect();
        } else {
            ms += u.mass;
            vs += u.mass * u.effect();
        }
    }
    if mt == 0.0 || ms == 0.0 {
        return Err(Error::Precondition(
            "heterogeneity needs both the treated and untreated sets nonempty".into(),
        ));
    }
    Ok(vt / mt - vs / ms)
}

/// Unit indices by descending effect, ties by ascending index.
fn effect_order(effects: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..effects.len()).collect();
    order.sort_by(|&i, &j| effects[j].total_cmp(&effects[i]).then(i.cmp(&j)));
    order
}

/// Best partition treating exactly a fraction `q` of the population mass.
///
/// `T` is the effect-sorted prefix whose mass equals `q`; the threshold is the
/// effect of the first unit left out (or `-inf` when nobody is left out).
pub fn solve_constrained(pop: &PotentialPopulation, q: f64) -> Result<OracleSolution> {
    check_proportion(q)?;
    let effects = pop.effects();
    let order = effect_order(&effects);
    let total = pop.total_mass();
    let target = q * total;
    let tol = PROPORTION_TOL * total;

    let mut cum = Vec::with_capacity(order.len() + 1);
    cum.push(0.0);
    for &i in &order {
        cum.push(cum.last().unwrap() + pop.units()[i].mass);
    }
    let m = match cum.iter().position(|&c| (c - target).abs() <= tol) {
        Some(m) => m,
        None => {
            let below = cum.iter().rev().find(|&&c| c < target).copied().unwrap_or(0.0);
            let above = cum.iter().find(|&&c| c > target).copied().unwrap_or(total);
            return Err(Error::Unattainable {
                requested: q,
                below: below / total,
                above: above / total,
            });
        }
    };
    let partition = Partition::from_indices(pop.len(), &order[..m])?;
    let threshold = if m < order.len() {
        effects[order[m]]
    } else {
        f64::NEG_INFINITY
    };
    Ok(OracleSolution {
        objective_value: partition_value(pop, &partition)?,
        partition,
        threshold,
        objective: Objective::ConstrainedValue,
        degenerate: false,
    })
}

/// Treat exactly the units with a strictly positive effect.
pub fn solve_unconstrained(pop: &PotentialPopulation) -> Result<OracleSolution> {
    let partition = Partition::from_mask(pop.effects().iter().map(|&v| v > 0.0).collect());
    Ok(OracleSolution {
        objective_value: partition_value(pop, &partition)?,
        partition,
        threshold: 0.0,
        objective: Objective::UnconstrainedValue,
        degenerate: false,
    })
}

/// Best threshold rule on effect per unit cost subject to
/// `sum_T mass * cost <= budget`.
///
/// When the whole population fits in the budget the constraint is inactive and
/// the unconstrained solution is returned. Otherwise every rule
/// `{effect / cost > k}` with `k` ranging over the observed ratios is scanned,
/// infeasible rules are dropped and the value-maximizing one is kept; on equal
/// values the smaller treated set wins. The reported `k` is the smallest
/// cutoff producing the chosen set.
pub fn solve_cost_constrained(
    pop: &PotentialPopulation,
    costs: &[f64],
    budget: f64,
) -> Result<OracleSolution> {
    if !(budget > 0.0) {
        return Err(Error::Precondition(format!("budget must be positive, got {budget}")));
    }
    if costs.len() != pop.len() {
        return Err(Error::Precondition(format!(
            "{} costs supplied for {} units",
            costs.len(),
            pop.len()
        )));
    }
    if let Some(c) = costs.iter().find(|&&c| !(c > 0.0 && c.is_finite())) {
        return Err(Error::Precondition(format!("costs must be positive and finite, got {c}")));
    }
    let units = pop.units();
    let total_cost: f64 = units.iter().zip(costs).map(|(u, c)| u.mass * c).sum();
    let budget_tol = budget * PROPORTION_TOL;
    if total_cost <= budget + budget_tol {
        let mut sol = solve_unconstrained(pop)?;
        sol.objective = Objective::CostValue;
        return Ok(sol);
    }

    let ratios: Vec<f64> = units.iter().zip(costs).map(|(u, c)| u.effect() / c).collect();
    let order = effect_order(&ratios);
    let total_mass = pop.total_mass();
    let base = pop.mean_y0();

    // Candidate k = ratio of order[j]; T = order[..j] minus any tie with k.
    let mut best_k = ratios[order[0]];
    let mut best_value = base;
    let mut best_len = 0;
    let (mut spent, mut gain) = (0.0, 0.0);
    let mut j = 0;
    while j < order.len() {
        // advance past the tie block at ratios[order[j]] only after evaluating it as a cutoff
        let k = ratios[order[j]];
        if spent <= budget + budget_tol {
            let value = base + gain / total_mass;
            if value > best_value {
                best_value = value;
                best_k = k;
                best_len = j;
            }
        } else {
            break;
        }
        while j < order.len() && ratios[order[j]] == k {
            let u = &units[order[j]];
            spent += u.mass * costs[order[j]];
            gain += u.mass * u.effect();
            j += 1;
        }
    }
    let partition = Partition::from_indices(pop.len(), &order[..best_len])?;
    Ok(OracleSolution {
        objective_value: partition_value(pop, &partition)?,
        partition,
        threshold: best_k,
        objective: Objective::CostValue,
        degenerate: false,
    })
}

/// Threshold split maximizing `E[V | T] - E[V | S]`.
///
/// Only splits between strictly different effects are considered; the
/// heterogeneity gap is convex along any block of tied effects, so the maximum
/// over all partitions is attained at one of these. On equal gaps the smaller
/// treated set wins. With all effects equal the result is flagged degenerate
/// with `T` the highest-index unit and heterogeneity 0.
pub fn solve_heterogeneity(pop: &PotentialPopulation) -> Result<OracleSolution> {
    let n = pop.len();
    if n < 2 {
        return Err(Error::Precondition(
            "heterogeneity needs at least two units for a nonempty split".into(),
        ));
    }
    let effects = pop.effects();
    let order = effect_order(&effects);
    let units = pop.units();
    let total_mass = pop.total_mass();
    let total_effect: f64 = units.iter().map(|u| u.mass * u.effect()).sum();

    let mut best: Option<(usize, f64)> = None;
    let (mut mt, mut vt) = (0.0, 0.0);
    for k in 1..n {
        let u = &units[order[k - 1]];
        mt += u.mass;
        vt += u.mass * u.effect();
        if effects[order[k - 1]] <= effects[order[k]] {
            continue;
        }
        let h = vt / mt - (total_effect - vt) / (total_mass - mt);
        if best.is_none_or(|(_, b)| h > b) {
            best = Some((k, h));
        }
    }
    match best {
        Some((k, h)) => Ok(OracleSolution {
            partition: Partition::from_indices(n, &order[..k])?,
            threshold: effects[order[k]],
            objective_value: h,
            objective: Objective::Heterogeneity,
            degenerate: false,
        }),
        None => Ok(OracleSolution {
            partition: Partition::from_indices(n, &[n - 1])?,
            threshold: effects[0],
            objective_value: 0.0,
            objective: Objective::Heterogeneity,
            degenerate: true,
        }),
    }
}
