//! The candidate regression library: constant, ridge-able least squares,
//! k-nearest neighbours and shallow variance-reduction trees.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Ridge used when the spec does not set one, as a multiple of `trace(X'X) / (p + 1)`.
pub const DEFAULT_RIDGE: f64 = 1e-8;
pub const DEFAULT_TREE_DEPTH: usize = 2;
pub const MIN_LEAF: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerKind {
    ConstantMean,
    LinearLeastSquares { ridge: f64 },
    /// `k = None` means `ceil(sqrt(n_train))`.
    KNearest { k: Option<usize> },
    TreeStump { depth: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub label: String,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind) -> Result<Self> {
        match kind {
            LearnerKind::LinearLeastSquares { ridge } if !(ridge >= 0.0 && ridge.is_finite()) => {
                return Err(Error::Validation(format!("ridge must be finite and >= 0, got {ridge}")))
            }
            LearnerKind::KNearest { k: Some(0) } => {
                return Err(Error::Validation("k-nearest needs k >= 1".into()))
            }
            LearnerKind::TreeStump { depth } if !(1..=4).contains(&depth) => {
                return Err(Error::Validation(format!("tree depth must be in 1..=4, got {depth}")))
            }
            _ => {}
        }
        let label = match kind {
            LearnerKind::ConstantMean => "constant".to_string(),
            LearnerKind::LinearLeastSquares { ridge } if ridge == DEFAULT_RIDGE => "linear".to_string(),
            LearnerKind::LinearLeastSquares { ridge } => format!("linear:{ridge}"),
            LearnerKind::KNearest { k: None } => "knn".to_string(),
            LearnerKind::KNearest { k: Some(k) } => format!("knn:{k}"),
            LearnerKind::TreeStump { depth } if depth == DEFAULT_TREE_DEPTH => "stump".to_string(),
            LearnerKind::TreeStump { depth } => format!("stump:{depth}"),
        };
        Ok(Self { kind, label })
    }

    pub fn constant() -> Self {
        Self::new(LearnerKind::ConstantMean).unwrap()
    }

    pub fn linear() -> Self {
        Self::new(LearnerKind::LinearLeastSquares { ridge: DEFAULT_RIDGE }).unwrap()
    }

    pub fn knn() -> Self {
        Self::new(LearnerKind::KNearest { k: None }).unwrap()
    }

    pub fn stump() -> Self {
        Self::new(LearnerKind::TreeStump { depth: DEFAULT_TREE_DEPTH }).unwrap()
    }

    /// `constant, linear, knn, stump`.
    pub fn default_library() -> Vec<Self> {
        vec![Self::constant(), Self::linear(), Self::knn(), Self::stump()]
    }

    /// Parse a comma-separated list such as `constant,linear:0,knn:15,stump:3`.
    pub fn parse_list(list: &str) -> Result<Vec<Self>> {
        let specs = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Self>>>()?;
        if specs.is_empty() {
            return Err(Error::Validation("learner list is empty".into()));
        }
        Ok(specs)
    }

    /// Fit on rows `x` with targets `y`. A degenerate linear system falls back to
    /// the constant mean and returns a warning instead of failing.
    pub fn fit(&self, x: &[&[f64]], y: &[f64]) -> Result<(FittedLearner, Option<String>)> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::Precondition(format!(
                "learner {} needs matching nonempty rows and targets ({} rows, {} targets)",
                self.label,
                x.len(),
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("learner {}: non-finite target", self.label)));
        }
        let fitted = match self.kind {
            LearnerKind::ConstantMean => FittedLearner::Constant { mean: mean(y) },
            LearnerKind::LinearLeastSquares { ridge } => match fit_linear(x, y, ridge) {
                Some(fit) => fit,
                None => {
                    let warning = format!(
                        "learner {}: singular least-squares system on {} rows, using the constant mean",
                        self.label,
                        y.len()
                    );
                    return Ok((FittedLearner::Constant { mean: mean(y) }, Some(warning)));
                }
            },
            LearnerKind::KNearest { k } => {
                let k = k.unwrap_or_else(|| (y.len() as f64).sqrt().ceil() as usize);
                if k > y.len() {
                    return Err(Error::Precondition(format!(
                        "learner {}: k = {k} exceeds the {} training rows",
                        self.label,
                        y.len()
                    )));
                }
                fit_knn(x, y, k)
            }
            LearnerKind::TreeStump { depth } => FittedLearner::Tree {
                root: grow(x, y, (0..y.len()).collect(), depth),
            },
        };
        Ok((fitted, None))
    }
}

impl fmt::Display for LearnerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

impl FromStr for LearnerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let bad = |what: &str| Error::Validation(format!("bad {what} in learner `{s}`"));
        let kind = match (name, arg) {
            ("constant", None) => LearnerKind::ConstantMean,
            ("linear", None) => LearnerKind::LinearLeastSquares { ridge: DEFAULT_RIDGE },
            ("linear", Some(a)) => LearnerKind::LinearLeastSquares {
                ridge: a.parse().map_err(|_| bad("ridge"))?,
            },
            ("knn", None) => LearnerKind::KNearest { k: None },
            ("knn", Some(a)) => LearnerKind::KNearest {
                k: Some(a.parse().map_err(|_| bad("k"))?),
            },
            ("stump", None) => LearnerKind::TreeStump { depth: DEFAULT_TREE_DEPTH },
            ("stump", Some(a)) => LearnerKind::TreeStump {
                depth: a.parse().map_err(|_| bad("depth"))?,
            },
            _ => {
                return Err(Error::Validation(format!(
                    "unknown learner `{s}` (expected constant, linear, knn or stump)"
                )))
            }
        };
        Self::new(kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedLearner {
    Constant {
        mean: f64,
    },
    Linear {
        intercept: f64,
        coefficients: Vec<f64>,
    },
    /// One covariate: training points sorted by `x`, with prefix sums of `y`.
    KnnSorted {
        k: usize,
        x: Vec<f64>,
        index: Vec<usize>,
        y: Vec<f64>,
        prefix: Vec<f64>,
    },
    KnnBrute {
        k: usize,
        rows: Vec<Vec<f64>>,
        y: Vec<f64>,
    },
    Tree {
        root: Node,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl FittedLearner {
    pub fn predict(&self, c: &[f64]) -> f64 {
        match self {
            FittedLearner::Constant { mean } => *mean,
            FittedLearner::Linear {
                intercept,
                coefficients,
            } => intercept + coefficients.iter().zip(c).map(|(b, x)| b * x).sum::<f64>(),
            FittedLearner::KnnSorted {
                k,
                x,
                index,
                y,
                prefix,
            } => knn_sorted_predict(*k, x, index, y, prefix, c[0]),
            FittedLearner::KnnBrute { k, rows, y } => knn_brute_predict(*k, rows, y, c),
            FittedLearner::Tree { root } => {
                let mut node = root;
                loop {
                    match node {
                        Node::Leaf { value } => return *value,
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => node = if c[*feature] <= *threshold { left } else { right },
                    }
                }
            }
        }
    }
}

fn mean(y: &[f64]) -> f64 {
    y.iter().sum::<f64>() / y.len() as f64
}

/// Normal equations with an unpenalized intercept. `None` when the system is
/// numerically singular.
fn fit_linear(x: &[&[f64]], y: &[f64], ridge: f64) -> Option<FittedLearner> {
    let p = x[0].len();
    let d = p + 1;
    let mut xtx = DMatrix::<f64>::zeros(d, d);
    let mut xty = DVector::<f64>::zeros(d);
    let mut row = vec![1.0; d];
    for (xi, &yi) in x.iter().zip(y) {
        row[1..].copy_from_slice(xi);
        for a in 0..d {
            xty[a] += row[a] * yi;
            for b in a..d {
                xtx[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    let lambda = ridge * xtx.trace() / d as f64;
    for a in 1..d {
        xtx[(a, a)] += lambda;
    }
    let chol = xtx.clone().cholesky()?;
    let l = chol.l();
    let diag: Vec<f64> = (0..d).map(|a| l[(a, a)] * l[(a, a)]).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > max * 1e-13) {
        return None;
    }
    let beta = chol.solve(&xty);
    if beta.iter().any(|b| !b.is_finite()) {
        return None;
    }
    Some(FittedLearner::Linear {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).cloned().collect(),
    })
}

fn fit_knn(x: &[&[f64]], y: &[f64], k: usize) -> FittedLearner {
    if x[0].len() == 1 {
        let mut order: Vec<usize> = (0..y.len()).collect();
        order.sort_by(|&a, &b| x[a][0].total_cmp(&x[b][0]).then(a.cmp(&b)));
        let xs: Vec<f64> = order.iter().map(|&i| x[i][0]).collect();
        let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let mut prefix = Vec::with_capacity(ys.len() + 1);
        prefix.push(0.0);
        for v in &ys {
            prefix.push(prefix.last().unwrap() + v);
        }
        FittedLearner::KnnSorted {
            k,
            x: xs,
            index: order,
            y: ys,
            prefix,
        }
    } else {
        FittedLearner::KnnBrute {
            k,
            rows: x.iter().map(|r| r.to_vec()).collect(),
            y: y.to_vec(),
        }
    }
}

/// Mean response of the `k` nearest training points; among points at the
/// `k`-th distance the smallest training indices are used.
fn knn_sorted_predict(k: usize, x: &[f64], index: &[usize], y: &[f64], prefix: &[f64], c: f64) -> f64 {
    let n = x.len();
    let dist = |i: usize| (x[i] - c).abs();
    let pos = x.partition_point(|&v| v < c);
    let lo = pos.saturating_sub(k);
    let hi = pos.min(n - k);
    // smallest window start whose left end is no farther than the point after its right end
    let (mut l, mut h) = (lo, hi);
    while l < h {
        let s = l + (h - l) / 2;
        if c - x[s] > x[s + k] - c {
            l = s + 1;
        } else {
            h = s;
        }
    }
    let r = l + k;
    let radius = dist(l).max(dist(r - 1));
    let (mut l_out, mut r_out) = (l, r);
    while l_out > 0 && dist(l_out - 1) == radius {
        l_out -= 1;
    }
    while r_out < n && dist(r_out) == radius {
        r_out += 1;
    }
    let (mut l_in, mut r_in) = (l_out, r_out);
    while l_in < r_in && dist(l_in) == radius {
        l_in += 1;
    }
    while r_in > l_in && dist(r_in - 1) == radius {
        r_in -= 1;
    }
    let mut sum = prefix[r_in] - prefix[l_in];
    let need = k - (r_in - l_in);
    if need > 0 {
        let mut ties: Vec<usize> = (l_out..l_in).chain(r_in..r_out).collect();
        ties.sort_by_key(|&j| index[j]);
        sum += ties[..need].iter().map(|&j| y[j]).sum::<f64>();
    }
    sum / k as f64
}

fn knn_brute_predict(k: usize, rows: &[Vec<f64>], y: &[f64], c: &[f64]) -> f64 {
    let mut keyed: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k - 1, cmp);
    }
    keyed[..k].iter().map(|&(_, i)| y[i]).sum::<f64>() / k as f64
}

fn grow(x: &[&[f64]], y: &[f64], idx: Vec<usize>, depth: usize) -> Node {
    let n = idx.len();
    let total: f64 = idx.iter().map(|&i| y[i]).sum();
    let leaf = Node::Leaf {
        value: total / n as f64,
    };
    if depth == 0 || n < 2 * MIN_LEAF {
        return leaf;
    }
    let base = total * total / n as f64;
    // (gain, feature, split position, threshold, sorted indices)
    let mut best: Option<(f64, usize, usize, f64, Vec<usize>)> = None;
    for f in 0..x[0].len() {
        let mut sorted = idx.clone();
        sorted.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        let mut left = 0.0;
        let mut cand: Option<(f64, usize)> = None;
        for s in 1..n {
            left += y[sorted[s - 1]];
            if s < MIN_LEAF || n - s < MIN_LEAF || x[sorted[s - 1]][f] == x[sorted[s]][f] {
                continue;
            }
            let right = total - left;
            let gain = left * left / s as f64 + right * right / (n - s) as f64 - base;
            if cand.is_none_or(|(g, _)| gain > g) {
                cand = Some((gain, s));
            }
        }
        if let Some((gain, s)) = cand {
            if gain > 1e-12 * base.abs().max(1e-300) && best.as_ref().is_none_or(|b| gain > b.0) {
                let (a, b) = (x[sorted[s - 1]][f], x[sorted[s]][f]);
                let mid = 0.5 * (a + b);
                let threshold = if mid < b { mid } else { a };
                best = Some((gain, f, s, threshold, sorted));
            }
        }
    }
    match best {
        None => leaf,
        Some((_, feature, s, threshold, sorted)) => {
            let right_idx = sorted[s..].to_vec();
            let mut left_idx = sorted;
            left_idx.truncate(s);
            Node::Split {
                feature,
                threshold,
                left: Box::new(grow(x, y, left_idx, depth - 1)),
                right: Box::new(grow(x, y, right_idx, depth - 1)),
            }
        }
    }
}
