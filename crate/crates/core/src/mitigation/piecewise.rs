use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mechanisms::Dataset;
use crate::problems::{OutputKind, Problem};
use crate::scalar::Real;

/// `G − 1` breakpoints splitting `values` into `G` quantile groups. With
/// distinct values the group sizes differ by at most one.
pub fn partition_groups<T: Real>(values: &[T], groups: usize) -> Result<Vec<T>> {
    let n = values.len();
    if groups == 0 || groups > n {
        return Err(invalid(format!("need 1 <= G <= n, got G={groups} n={n}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("grouping attribute must be finite"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    Ok((1..groups)
        .map(|g| {
            let cut = g * n / groups;
            (sorted[cut - 1] + sorted[cut]) * T::half()
        })
        .collect())
}

/// Index of the group containing `value`: the number of breakpoints
/// strictly below it.
#[inline]
pub fn group_of<T: Real>(breakpoints: &[T], value: T) -> usize {
    breakpoints.partition_point(|b| *b < value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    /// Normal equations on 0/1 labels, decision threshold 0.5.
    LeastSquares,
    /// Subgradient descent on the hinge loss with ±1 labels, threshold 0.
    Hinge,
}

pub const HINGE_EPOCHS: usize = 1000;
pub const HINGE_LEARNING_RATE: f64 = 1e-2;

/// Linear score over standardized features:
/// `intercept + Σ_j w_j (x_j − mean_j)/scale_j`, positive when above `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LinearPiece<T> {
    pub feature_mean: Vec<T>,
    pub feature_scale: Vec<T>,
    pub coefficients: Vec<T>,
    pub intercept: T,
    pub threshold: T,
}

impl<T: Real> LinearPiece<T> {
    pub fn score(&self, features: &[T]) -> T {
        let mut s = self.intercept;
        for (j, &x) in features.iter().enumerate() {
            s += self.coefficients[j] * (x - self.feature_mean[j]) / self.feature_scale[j];
        }
        s
    }

    pub fn decide(&self, features: &[T]) -> bool {
        self.score(features) > self.threshold
    }
}

/// Piecewise-linear decision rule: entities are routed by the grouping
/// attribute to one linear piece each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PiecewiseProxy<T> {
    pub group_attribute: String,
    pub features: Vec<String>,
    pub breakpoints: Vec<T>,
    pub method: FitMethod,
    pub pieces: Vec<LinearPiece<T>>,
}

impl<T: Real> PiecewiseProxy<T> {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("proxies always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s).map_err(|e| invalid(format!("proxy JSON: {e}")))?;
        if p.pieces.len() != p.breakpoints.len() + 1 {
            return Err(invalid("proxy needs one piece per group"));
        }
        if p.breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("breakpoints must be strictly increasing"));
        }
        Ok(p)
    }

    fn columns(&self, data: &Dataset<T>) -> Result<(usize, Vec<usize>)> {
        let g = data.attr_index(&self.group_attribute)?;
        let f = self
            .features
            .iter()
            .map(|name| data.attr_index(name))
            .collect::<Result<Vec<_>>>()?;
        Ok((g, f))
    }

    /// Decision for one row given resolved column indices.
    pub fn decide_row(&self, row: &[T], group_col: usize, feature_cols: &[usize], buf: &mut Vec<T>) -> bool {
        buf.clear();
        buf.extend(feature_cols.iter().map(|&c| row[c]));
        self.pieces[group_of(&self.breakpoints, row[group_col])].decide(buf)
    }

    pub fn group_sizes(&self, data: &Dataset<T>) -> Result<Vec<usize>> {
        let g = data.attr_index(&self.group_attribute)?;
        let mut sizes = vec![0; self.pieces.len()];
        for i in 0..data.n() {
            sizes[group_of(&self.breakpoints, data.get(i, g))] += 1;
        }
        Ok(sizes)
    }
}

impl<T: Real> Problem<T> for PiecewiseProxy<T> {
    fn kind(&self) -> OutputKind {
        OutputKind::Decision
    }

    fn evaluate_into(&self, data: &Dataset<T>, out: &mut [T]) -> Result<()> {
        let (g, f) = self.columns(data)?;
        let mut buf = Vec::with_capacity(f.len());
        for (i, o) in out.iter_mut().enumerate() {
            *o = if self.decide_row(data.row(i), g, &f, &mut buf) {
                T::one()
            } else {
                T::zero()
            };
        }
        Ok(())
    }
}

/// Fits one linear piece per group of `train`, grouped by `breakpoints`
/// over `group_attribute`. `labels` are the true rule outputs.
pub fn fit_piecewise_proxy<T: Real>(
    train: &Dataset<T>,
    labels: &[bool],
    group_attribute: &str,
    features: &[String],
    breakpoints: &[T],
    method: FitMethod,
) -> Result<PiecewiseProxy<T>> {
    if labels.len() != train.n() {
        return Err(Error::Shape(format!(
            "{} labels for {} entities",
            labels.len(),
            train.n()
        )));
    }
    if features.is_empty() {
        return Err(invalid("need at least one feature"));
    }
    if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("breakpoints must be strictly increasing"));
    }
    let mut proxy = PiecewiseProxy {
        group_attribute: group_attribute.to_string(),
        features: features.to_vec(),
        breakpoints: breakpoints.to_vec(),
        method,
        pieces: vec![],
    };
    let (g, f) = proxy.columns(train)?;
    let groups = breakpoints.len() + 1;
    let mut members: Vec<Vec<usize>> = vec![vec![]; groups];
    for i in 0..train.n() {
        members[group_of(breakpoints, train.get(i, g))].push(i);
    }
    for (k, rows) in members.iter().enumerate() {
        if rows.is_empty() {
            return Err(invalid(format!("group {k} has no training rows")));
        }
        let x: Vec<Vec<f64>> = rows
            .iter()
            .map(|&i| f.iter().map(|&c| train.get(i, c).as_f64()).collect())
            .collect();
        let y: Vec<bool> = rows.iter().map(|&i| labels[i]).collect();
        proxy.pieces.push(fit_piece(&x, &y, method));
    }
    Ok(proxy)
}

fn fit_piece<T: Real>(x: &[Vec<f64>], y: &[bool], method: FitMethod) -> LinearPiece<T> {
    let (m, d) = (x.len(), x[0].len());
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / m as f64).collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let var = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / m as f64;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    // design matrix with a leading intercept column
    let design = DMatrix::from_fn(m, d + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            (x[i][j - 1] - mean[j - 1]) / scale[j - 1]
        }
    });
    let (w, threshold) = match method {
        FitMethod::LeastSquares => {
            let target = DVector::from_iterator(m, y.iter().map(|&l| if l { 1.0 } else { 0.0 }));
            (ridge_solve(&design, &target), 0.5)
        }
        FitMethod::Hinge => (hinge_descent(&design, y), 0.0),
    };
    LinearPiece {
        feature_mean: mean.into_iter().map(T::of).collect(),
        feature_scale: scale.into_iter().map(T::of).collect(),
        coefficients: w.iter().skip(1).map(|&v| T::of(v)).collect(),
        intercept: T::of(w[0]),
        threshold: T::of(threshold),
    }
}

/// Normal equations `(XᵀX) w = Xᵀy`; a singular system falls back to a
/// ridge term starting at `10⁻⁶·tr(XᵀX)/p`.
fn ridge_solve(design: &DMatrix<f64>, target: &DVector<f64>) -> DVector<f64> {
    let gram = design.transpose() * design;
    let rhs = design.transpose() * target;
    let p = gram.nrows();
    let mut ridge = 0.0;
    let base = 1e-6 * (gram.trace() / p as f64).max(f64::MIN_POSITIVE);
    loop {
        let mut a = gram.clone();
        for k in 0..p {
            a[(k, k)] += ridge;
        }
        if let Some(ch) = a.cholesky() {
            let w = ch.solve(&rhs);
            if w.iter().all(|v| v.is_finite()) {
                return w;
            }
        }
        ridge = if ridge == 0.0 { base } else { ridge * 10.0 };
    }
}

/// Full-batch subgradient descent on the mean hinge loss,
/// learning rate `10⁻²/√epoch`.
fn hinge_descent(design: &DMatrix<f64>, y: &[bool]) -> DVector<f64> {
    let (m, p) = design.shape();
    let sign: Vec<f64> = y.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let mut w = DVector::zeros(p);
    for epoch in 1..=HINGE_EPOCHS {
        let scores = design * &w;
        let mut grad = DVector::zeros(p);
        for i in 0..m {
            if sign[i] * scores[i] < 1.0 {
                grad -= design.row(i).transpose() * sign[i];
            }
        }
        w -= grad * (HINGE_LEARNING_RATE / (epoch as f64).sqrt() / m as f64);
    }
    w
}
