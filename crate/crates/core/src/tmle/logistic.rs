//! One-parameter logistic fluctuation along the clever covariate.

use crate::{Error, Result};

pub const MAX_NEWTON_ITER: usize = 50;
pub const SCORE_TOL: f64 = 1e-10;
/// Slopes beyond this magnitude are reported as separation.
pub const MAX_EPSILON: f64 = 20.0;

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

struct Fit<'a> {
    y: &'a [f64],
    h: &'a [f64],
    offset: &'a [f64],
    w: &'a [f64],
}

impl Fit<'_> {
    fn terms(&self) -> impl Iterator<Item = (f64, f64, f64, f64)> + '_ {
        (0..self.y.len())
            .filter(|&i| self.w[i] > 0.0)
            .map(|i| (self.y[i], self.h[i], self.offset[i], self.w[i]))
    }

    fn log_likelihood(&self, eps: f64) -> f64 {
        self.terms()
            .map(|(y, h, o, w)| {
                let eta = o + eps * h;
                -w * (y * softplus(-eta) + (1.0 - y) * softplus(eta))
            })
            .sum()
    }

    /// `(score, information)`, both divided by the number of observations.
    fn derivatives(&self, eps: f64) -> (f64, f64) {
        let n = self.y.len() as f64;
        let (mut u, mut info) = (0.0, 0.0);
        for (y, h, o, w) in self.terms() {
            let p = expit(o + eps * h);
            u += w * h * (y - p);
            info += w * h * h * p * (1.0 - p);
        }
        (u / n, info / n)
    }
}

fn separation() -> Error {
    Error::Numerical(format!(
        "fluctuation diverges (|epsilon| > {MAX_EPSILON}): the weighted outcomes are separated along the clever covariate"
    ))
}

/// Slope `ε` of the intercept-free logistic regression of `y ∈ [0, 1]` on `h`
/// with offset and observation weights, by Newton's method with step-halving.
/// Returns 0 when every weight is 0 or the score already vanishes.
pub fn weighted_offset_logistic(y: &[f64], h: &[f64], offset: &[f64], w: &[f64]) -> Result<f64> {
    let n = y.len();
    if h.len() != n || offset.len() != n || w.len() != n {
        return Err(Error::Precondition("fluctuation inputs differ in length".into()));
    }
    if y.iter().chain(h).chain(offset).chain(w).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite fluctuation input".into()));
    }
    if y.iter().any(|v| !(0.0..=1.0).contains(v)) || w.iter().any(|v| *v < 0.0) {
        return Err(Error::Precondition("outcomes must lie in [0, 1] and weights be nonnegative".into()));
    }
    let fit = Fit { y, h, offset, w };
    if w.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    // The likelihood keeps increasing towards ±∞ exactly when every weighted
    // outcome sits at the bound its covariate sign points to.
    let separated = |sign: f64| {
        fit.terms()
            .all(|(y, h, _, _)| (h * sign <= 0.0 || y == 1.0) && (h * sign >= 0.0 || y == 0.0))
    };
    if fit.derivatives(0.0).0 != 0.0 && (separated(1.0) || separated(-1.0)) {
        return Err(separation());
    }
    let mut eps = 0.0;
    let mut ll = fit.log_likelihood(eps);
    for _ in 0..MAX_NEWTON_ITER {
        let (u, info) = fit.derivatives(eps);
        if u.abs() <= SCORE_TOL {
            return Ok(eps);
        }
        if !(info > 0.0) {
            return Err(separation());
        }
        let mut step = u / info;
        let mut next = eps + step;
        let mut next_ll = fit.log_likelihood(next);
        let mut halvings = 0;
        // near the optimum the likelihood is flat to rounding, so a smaller score also counts as progress
        while next_ll < ll && fit.derivatives(next).0.abs() >= u.abs() && halvings < 40 {
            step *= 0.5;
            next = eps + step;
            next_ll = fit.log_likelihood(next);
            halvings += 1;
        }
        if next.abs() > MAX_EPSILON {
            return Err(separation());
        }
        if next == eps {
            break;
        }
        eps = next;
        ll = next_ll;
    }
    let (u, _) = fit.derivatives(eps);
    if u.abs() <= SCORE_TOL {
        Ok(eps)
    } else {
        Err(Error::Numerical(format!(
            "fluctuation did not converge in {MAX_NEWTON_ITER} Newton steps (score {u:e})"
        )))
    }
}
