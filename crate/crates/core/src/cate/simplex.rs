//! Least squares over the probability simplex by projected gradient descent.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Objectives closer than this are treated as tied when choosing among starts.
const TIE_TOL: f64 = 1e-14;

/// Quadratic `(1/n) |y - X a|^2` kept in Gram form.
#[derive(Debug, Clone)]
pub struct SimplexProblem {
    gram: DMatrix<f64>,
    linear: DVector<f64>,
    constant: f64,
}

impl SimplexProblem {
    /// `columns[j]` is the `j`-th candidate's prediction vector.
    pub fn new(targets: &[f64], columns: &[Vec<f64>]) -> Result<Self> {
        let m = columns.len();
        let n = targets.len();
        if m == 0 {
            return Err(Error::Precondition("simplex least squares needs at least one column".into()));
        }
        if n == 0 || columns.iter().any(|c| c.len() != n) {
            return Err(Error::Precondition("columns must match the nonempty target length".into()));
        }
        if targets.iter().chain(columns.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite entry in simplex least squares".into()));
        }
        let nf = n as f64;
        let mut gram = DMatrix::zeros(m, m);
        for a in 0..m {
            for b in a..m {
                let g = columns[a].iter().zip(&columns[b]).map(|(u, v)| u * v).sum::<f64>() / nf;
                gram[(a, b)] = g;
                gram[(b, a)] = g;
            }
        }
        let linear = DVector::from_iterator(
            m,
            columns.iter().map(|c| c.iter().zip(targets).map(|(u, y)| u * y).sum::<f64>() / nf),
        );
        let constant = targets.iter().map(|y| y * y).sum::<f64>() / nf;
        Ok(Self { gram, linear, constant })
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, alpha: &[f64]) -> f64 {
        let a = DVector::from_column_slice(alpha);
        let quad = a.dot(&(&self.gram * &a));
        (quad - 2.0 * a.dot(&self.linear) + self.constant).max(0.0)
    }

    fn descend(&self, start: Vec<f64>, step: f64, tol: f64, max_iter: usize) -> (Vec<f64>, f64) {
        let mut alpha = DVector::from_vec(start);
        let mut value = self.objective(alpha.as_slice());
        for _ in 0..max_iter {
            let grad = (&self.gram * &alpha - &self.linear) * 2.0;
            let next = project_to_simplex((&alpha - grad * step).as_slice());
            let next_value = self.objective(&next);
            if next_value > value {
                break;
            }
            let decrease = value - next_value;
            alpha = DVector::from_vec(next);
            value = next_value;
            if decrease <= tol {
                break;
            }
        }
        (alpha.as_slice().to_vec(), value)
    }

    /// Best of the runs started at the barycentre and at every vertex; ties go to
    /// the lexicographically smallest weight vector.
    pub fn solve(&self, tol: f64, max_iter: usize) -> Vec<f64> {
        let m = self.dim();
        if m == 1 {
            return vec![1.0];
        }
        let lipschitz = 2.0 * self.gram.clone().symmetric_eigen().eigenvalues.max();
        let step = if lipschitz > 0.0 { 1.0 / lipschitz } else { 0.0 };
        let mut starts = vec![vec![1.0 / m as f64; m]];
        for j in 0..m {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            starts.push(e);
        }
        let mut best: Option<(Vec<f64>, f64)> = None;
        for start in starts {
            let alpha = if step > 0.0 {
                self.descend(start, step, tol, max_iter).0
            } else {
                start
            };
            let alpha = renormalize(alpha);
            let value = self.objective(&alpha);
            let better = match &best {
                None => true,
                Some((b, bv)) => {
                    value < bv - TIE_TOL
                        || (value <= bv + TIE_TOL && lexicographic_less(&alpha, b))
                }
            };
            if better {
                best = Some((alpha, value));
            }
        }
        best.unwrap().0
    }
}

/// Weights on the simplex minimizing `(1/n) |targets - columns a|^2`.
pub fn simplex_least_squares(
    targets: &[f64],
    columns: &[Vec<f64>],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    Ok(SimplexProblem::new(targets, columns)?.solve(tol, max_iter))
}

fn lexicographic_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

fn renormalize(mut alpha: Vec<f64>) -> Vec<f64> {
    for a in alpha.iter_mut() {
        *a = a.max(0.0);
    }
    let sum: f64 = alpha.iter().sum();
    for a in alpha.iter_mut() {
        *a /= sum;
    }
    alpha
}

/// Euclidean projection onto `{a >= 0, sum a = 1}` (sort-and-threshold).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_column_is_forced() {
        assert_eq!(simplex_least_squares(&[1.0, 2.0], &[vec![0.0, 0.0]], DEFAULT_TOL, 10).unwrap(), vec![1.0]);
    }

    #[test]
    fn exact_column_is_recovered() {
        let cols = vec![vec![1.0, 0.0, 2.0, 5.0], vec![0.0, 3.0, -1.0, 1.0], vec![2.0, 2.0, 2.0, 2.0]];
        let a = simplex_least_squares(&cols[1].clone(), &cols, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!((a[1] - 1.0).abs() < 1e-8, "{a:?}");
    }

    #[test]
    fn identical_columns_tie_break_lexicographically() {
        let cols = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        let a = simplex_least_squares(&[0.0, 5.0], &cols, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(a, vec![0.0, 1.0]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(simplex_least_squares(&[f64::NAN], &[vec![1.0]], DEFAULT_TOL, 10).is_err());
    }

    proptest! {
        #[test]
        fn projection_is_feasible_and_idempotent(v in prop::collection::vec(-5.0f64..5.0, 1..8)) {
            let p = project_to_simplex(&v);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let pp = project_to_simplex(&p);
            for (a, b) in p.iter().zip(&pp) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn never_worse_than_a_vertex(
            cols in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 12), 1..5),
            y in prop::collection::vec(-3.0f64..3.0, 12),
        ) {
            let problem = SimplexProblem::new(&y, &cols).unwrap();
            let a = problem.solve(DEFAULT_TOL, DEFAULT_MAX_ITER);
            prop_assert!(a.iter().all(|&x| x >= 0.0));
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let value = problem.objective(&a);
            for j in 0..cols.len() {
                let mut e = vec![0.0; cols.len()];
                e[j] = 1.0;
                prop_assert!(value <= problem.objective(&e) + 1e-12);
            }
        }
    }
}
