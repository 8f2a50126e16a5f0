//! Optimal threshold treatment rules estimated from trial data.
//!
//! Every rule this crate produces has the same shape: treat a unit when a score
//! (an estimate of the conditional average treatment effect, possibly divided
//! by a per-unit cost) exceeds a threshold. What changes between decision
//! contexts is only how the threshold is chosen:
//!
//! * budget-constrained: treat at most a fraction `q`, largest scores first;
//! * unconstrained: threshold zero;
//! * cost-penalized: a covariate-dependent margin `δ(c)`, or a budget on the
//!   summed cost with units ranked by score per unit cost;
//! * heterogeneity-maximizing: the split that maximizes the gap between the
//!   mean effect of the treated and untreated groups.
//!
//! Modules:
//!
//! * [`data`] trial datasets, potential-outcome populations, CSV and simulation;
//! * [`oracle`] exact solutions on finite populations with both potential outcomes;
//! * [`cate`] pseudo-outcome regression with a cross-validated convex ensemble;
//! * [`rules`] rule construction and evaluation;
//! * [`tmle`] cross-validated targeted estimation of the rule's gain with Wald intervals.

pub mod cate;
pub mod data;
mod error;
pub mod oracle;
pub mod rng;
pub mod rules;
pub mod tmle;

pub use error::{Error, Result};

/// Map over fold-level work items, in parallel when the `parallel` feature is on.
/// Output order always matches input order.
#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}
