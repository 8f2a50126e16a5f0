//! Heterogeneity-maximizing cutoff for a continuous effect distribution.
//!
//! For an effect `V` with density `p`, the gap
//! `h(κ) = E[V | V > κ] - E[V | V <= κ]` has derivative of the same sign as
//!
//! ```text
//! R(κ) = P(V<=κ)^2 {-κ P(V>κ) + ∫_κ^∞ v p(v) dv} + P(V>κ)^2 {-κ P(V<=κ) + ∫_-∞^κ v p(v) dv}
//! ```
//!
//! so interior maximizers of `h` are the roots where `R` changes sign from
//! positive to negative. Densities are tabulated on a grid and integrated by
//! treating the density as linear between grid points, so every integral is exact
//! for that interpolant.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const MIN_GRID_POINTS: usize = 16;
const NORMALIZATION_TOL: f64 = 1e-6;
const BISECTION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedDensity {
    grid: Vec<f64>,
    values: Vec<f64>,
    /// Cumulative trapezoid mass up to each grid point.
    cum_mass: Vec<f64>,
    /// Cumulative integral of `v p(v)` up to each grid point.
    cum_moment: Vec<f64>,
}

impl TabulatedDensity {
    /// Density values on a strictly increasing grid. The trapezoid integral must
    /// be 1 within 1e-6; values are rescaled to integrate to exactly 1.
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() < MIN_GRID_POINTS {
            return Err(Error::Precondition(format!(
                "density grid needs at least {MIN_GRID_POINTS} points, got {}",
                grid.len()
            )));
        }
        if grid.len() != values.len() {
            return Err(Error::Precondition("grid and values differ in length".into()));
        }
        if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Precondition("grid must be finite and strictly increasing".into()));
        }
        if values.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Precondition("density values must be finite and nonnegative".into()));
        }
        let total: f64 = grid
            .windows(2)
            .zip(values.windows(2))
            .map(|(x, p)| 0.5 * (x[1] - x[0]) * (p[0] + p[1]))
            .sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Precondition(format!(
                "density integrates to {total}, expected 1 within {NORMALIZATION_TOL}"
            )));
        }
        let values: Vec<f64> = values.iter().map(|p| p / total).collect();
        let mut cum_mass = vec![0.0; grid.len()];
        let mut cum_moment = vec![0.0; grid.len()];
        for j in 1..grid.len() {
            let (a, b) = (grid[j - 1], grid[j]);
            cum_mass[j] = cum_mass[j - 1] + 0.5 * (b - a) * (values[j - 1] + values[j]);
            cum_moment[j] = cum_moment[j - 1] + cell_moment(a, b, values[j - 1], values[j]);
        }
        Ok(Self {
            grid,
            values,
            cum_mass,
            cum_moment,
        })
    }

    /// Tabulate `density` at `points` equally spaced nodes on `[lo, hi]`.
    pub fn from_fn(lo: f64, hi: f64, points: usize, density: impl Fn(f64) -> f64) -> Result<Self> {
        if points < 2 || !(hi > lo) {
            return Err(Error::Precondition("need hi > lo and at least two points".into()));
        }
        let grid: Vec<f64> = (0..points)
            .map(|j| lo + (hi - lo) * j as f64 / (points - 1) as f64)
            .collect();
        let values = grid.iter().map(|&x| density(x)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// `(P(V <= κ), ∫_-∞^κ v p(v) dv)`.
    fn lower_integrals(&self, kappa: f64) -> (f64, f64) {
        let n = self.grid.len();
        if kappa <= self.grid[0] {
            return (0.0, 0.0);
        }
        if kappa >= self.grid[n - 1] {
            return (self.cum_mass[n - 1], self.cum_moment[n - 1]);
        }
        // cell [grid[j], grid[j+1]) containing kappa
        let j = self.grid.partition_point(|&x| x <= kappa) - 1;
        let (a, b) = (self.grid[j], self.grid[j + 1]);
        let t = (kappa - a) / (b - a);
        let pk = self.values[j] + t * (self.values[j + 1] - self.values[j]);
        let width = kappa - a;
        let mass = self.cum_mass[j] + 0.5 * width * (self.values[j] + pk);
        let moment = self.cum_moment[j] + cell_moment(a, kappa, self.values[j], pk);
        (mass, moment)
    }

    fn totals(&self) -> (f64, f64) {
        let n = self.grid.len();
        (self.cum_mass[n - 1], self.cum_moment[n - 1])
    }

    /// Residual of the stationarity equation at `kappa`.
    pub fn residual(&self, kappa: f64) -> f64 {
        let (mass, moment) = self.totals();
        let (below, moment_below) = self.lower_integrals(kappa);
        let above = mass - below;
        let moment_above = moment - moment_below;
        below * below * (-kappa * above + moment_above) + above * above * (-kappa * below + moment_below)
    }

    /// `E[V | V > κ] - E[V | V <= κ]`, `None` when either side has no mass.
    pub fn heterogeneity(&self, kappa: f64) -> Option<f64> {
        let (mass, moment) = self.totals();
        let (below, moment_below) = self.lower_integrals(kappa);
        let above = mass - below;
        if below <= 0.0 || above <= 0.0 {
            return None;
        }
        Some((moment - moment_below) / above - moment_below / below)
    }

    /// Grid cells on which the residual changes sign, ignoring the two end nodes
    /// where the residual vanishes trivially.
    pub fn bracket_roots(&self) -> Vec<(f64, f64)> {
        let n = self.grid.len();
        let interior = &self.grid[1..n - 1];
        let r: Vec<f64> = interior.iter().map(|&k| self.residual(k)).collect();
        let mut brackets = Vec::new();
        for j in 0..interior.len() - 1 {
            if r[j] == 0.0 {
                brackets.push((interior[j], interior[j]));
            } else if r[j] * r[j + 1] < 0.0 {
                brackets.push((interior[j], interior[j + 1]));
            }
        }
        brackets
    }

    /// Every bracketed root refined by bisection to 1e-10 in `κ`.
    pub fn stationary_points(&self) -> Vec<StationaryPoint> {
        self.bracket_roots()
            .into_iter()
            .map(|(a, b)| {
                let kappa = if a == b { a } else { self.bisect(a, b) };
                let step = (self.grid[1] - self.grid[0]).min(1e-3);
                let before = self.residual(kappa - step);
                let after = self.residual(kappa + step);
                let kind = if before > 0.0 && after < 0.0 {
                    StationaryKind::Maximum
                } else if before < 0.0 && after > 0.0 {
                    StationaryKind::Minimum
                } else {
                    StationaryKind::Flat
                };
                StationaryPoint {
                    kappa,
                    kind,
                    heterogeneity: self.heterogeneity(kappa).unwrap_or(f64::NAN),
                }
            })
            .collect()
    }

    /// Interior local maximum of the heterogeneity gap with the largest gap.
    pub fn solve_kappa(&self) -> Result<StationaryPoint> {
        self.stationary_points()
            .into_iter()
            .filter(|s| s.kind == StationaryKind::Maximum)
            .max_by(|a, b| a.heterogeneity.total_cmp(&b.heterogeneity))
            .ok_or_else(|| {
                Error::Numerical("no bracketed root: the gap has no interior maximum on this grid".into())
            })
    }

    fn bisect(&self, mut a: f64, mut b: f64) -> f64 {
        let mut ra = self.residual(a);
        while b - a > BISECTION_TOL {
            let mid = 0.5 * (a + b);
            let rm = self.residual(mid);
            if rm == 0.0 {
                return mid;
            }
            if (rm < 0.0) == (ra < 0.0) {
                a = mid;
                ra = rm;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationaryKind {
    Maximum,
    Minimum,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryPoint {
    pub kappa: f64,
    pub kind: StationaryKind,
    pub heterogeneity: f64,
}

/// `∫_a^b v p(v) dv` for `p` linear on `[a, b]`; Simpson's rule is exact here.
fn cell_moment(a: f64, b: f64, pa: f64, pb: f64) -> f64 {
    let mid = 0.5 * (a + b);
    (b - a) / 6.0 * (a * pa + 4.0 * mid * 0.5 * (pa + pb) + b * pb)
}

/// Residual of the heterogeneity stationarity equation at `kappa`.
pub fn kappa_stationarity_residual(kappa: f64, density: &TabulatedDensity) -> f64 {
    density.residual(kappa)
}
