//! Closed-form bias approximations and composition bounds.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fairness::simulate;
use crate::mechanisms::{Dataset, PrivacySpec};
use crate::montecarlo::McConfig;
use crate::postprocess::Pipeline;
use crate::problems::{AllotmentProblem, BoolOp, Normalizer};
use crate::scalar::Real;

/// Coefficient `c` in `B_i ≈ ½·c·Var[η]·Tr(H P_i)(x)`. A second-order
/// expansion with i.i.d. per-coordinate noise gives `c = 1`.
pub const DEFAULT_TAYLOR_CONSTANT: f64 = 1.0;

/// Second-order bias estimate `½·Var[η]·Tr(H P_i)(x)` with `Var[η] = 2λ²`.
/// Zero for a fixed normalizer, where the allotment is linear.
pub fn taylor_bias<T: Real>(
    problem: &AllotmentProblem<T>,
    data: &Dataset<T>,
    spec: &PrivacySpec<T>,
    i: usize,
) -> Result<T> {
    taylor_bias_scaled(problem, data, spec, i, T::of(DEFAULT_TAYLOR_CONSTANT))
}

pub fn taylor_bias_scaled<T: Real>(
    problem: &AllotmentProblem<T>,
    data: &Dataset<T>,
    spec: &PrivacySpec<T>,
    i: usize,
    constant: T,
) -> Result<T> {
    if let Normalizer::FixedConstant(_) = problem.normalizer() {
        return Ok(T::zero());
    }
    Ok(T::half() * constant * spec.noise_variance() * problem.hessian_trace(data, i)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorCandidate {
    pub constant: f64,
    /// `|taylor − empirical|` per eligible entity.
    pub abs_errors: Vec<f64>,
    /// `abs_errors / std_error` per eligible entity.
    pub z_scores: Vec<f64>,
}

/// Calibration of the Taylor constant against Monte Carlo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorCalibration {
    /// Entities with `λ/x_i` below the cutoff, where the remainder is small.
    pub eligible: Vec<usize>,
    pub empirical_bias: Vec<f64>,
    pub std_error: Vec<f64>,
    pub candidates: Vec<TaylorCandidate>,
    /// Candidate with the smallest worst-case z-score.
    pub chosen: f64,
}

/// Compares `c = 1` and `c = n` against the empirical bias of `problem`.
pub fn calibrate_taylor_constant<T: Real>(
    problem: &AllotmentProblem<T>,
    data: &Dataset<T>,
    spec: &PrivacySpec<T>,
    cfg: &McConfig,
    max_scale_ratio: f64,
) -> Result<TaylorCalibration> {
    let j = data.attr_index(&problem.attribute)?;
    let (truth, summary) = simulate(problem, data, spec, &Pipeline::none(), cfg)?;
    let lambda = spec.scale().as_f64();
    let eligible: Vec<usize> = (0..data.n())
        .filter(|&i| lambda / data.get(i, j).as_f64() < max_scale_ratio)
        .collect();
    if eligible.is_empty() {
        return Err(invalid("no entity satisfies the scale-ratio cutoff"));
    }
    let empirical: Vec<f64> = summary.mean.iter().zip(&truth).map(|(m, t)| m - t.as_f64()).collect();
    let mut candidates = vec![];
    for c in [DEFAULT_TAYLOR_CONSTANT, data.n() as f64] {
        let mut abs_errors = vec![];
        let mut z_scores = vec![];
        for &i in &eligible {
            let t = taylor_bias_scaled(problem, data, spec, i, T::of(c))?.as_f64();
            let err = (t - empirical[i]).abs();
            abs_errors.push(err);
            z_scores.push(err / summary.std_error[i]);
        }
        candidates.push(TaylorCandidate {
            constant: c,
            abs_errors,
            z_scores,
        });
    }
    let worst = |c: &TaylorCandidate| c.z_scores.iter().copied().fold(0.0, f64::max);
    let chosen = candidates
        .iter()
        .min_by(|a, b| worst(a).total_cmp(&worst(b)))
        .map(|c| c.constant)
        .expect("two candidates");
    Ok(TaylorCalibration {
        eligible,
        empirical_bias: empirical,
        std_error: summary.std_error,
        candidates,
        chosen,
    })
}

/// Misclassification probability of `1{x ≥ ℓ}` under `Lap(λ)` noise:
/// `½·exp(−|x − ℓ|/λ)`.
pub fn threshold_bias_closed_form<T: Real>(x: T, level: T, scale: T) -> Result<T> {
    if !(scale > T::zero()) {
        return Err(invalid(format!("scale must be positive, got {scale}")));
    }
    Ok(T::half() * (-(x - level).abs() / scale).exp())
}

fn check_flip<T: Real>(b: T) -> Result<()> {
    if !(b >= T::zero() && b < T::half()) {
        return Err(invalid(format!("flip probability must lie in [0, 0.5), got {b}")));
    }
    Ok(())
}

/// Flip probability of `P¹ op P²` given the children's true values and
/// independent flip probabilities `b1`, `b2`.
pub fn compose_flip_probability<T: Real>(op: BoolOp, t1: bool, t2: bool, b1: T, b2: T) -> Result<T> {
    check_flip(b1)?;
    check_flip(b2)?;
    let one = T::one();
    let either = b1 + b2 - b1 * b2;
    Ok(match (op, t1, t2) {
        (BoolOp::Xor, _, _) => b1 + b2 - T::two() * b1 * b2,
        (BoolOp::And, false, false) | (BoolOp::Or, true, true) => b1 * b2,
        (BoolOp::And, false, true) | (BoolOp::Or, true, false) => b1 * (one - b2),
        (BoolOp::And, true, false) | (BoolOp::Or, false, true) => (one - b1) * b2,
        (BoolOp::And, true, true) | (BoolOp::Or, false, false) => either,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundOp {
    AndOr,
    Xor,
}

/// Fairness bound of a composed predicate from the children's bounds
/// `α_k` and minimum absolute biases `B̲_k`.
///
/// And/Or: `α₁ + B̲¹ + α₂ + B̲² − (α₁ + B̲¹)(α₂ + B̲²) − B̲¹B̲²`.
/// Xor: `α₁(1 − 2B̲²) + α₂(1 − 2B̲¹) − 2α₁α₂`.
pub fn compose_fairness_bound<T: Real>(op: BoundOp, alpha1: T, alpha2: T, bmin1: T, bmin2: T) -> Result<T> {
    for (name, v) in [
        ("alpha1", alpha1),
        ("alpha2", alpha2),
        ("bmin1", bmin1),
        ("bmin2", bmin2),
    ] {
        if !(v >= T::zero()) {
            return Err(invalid(format!("{name} must be >= 0, got {v}")));
        }
    }
    if !(alpha1 + bmin1 < T::half()) || !(alpha2 + bmin2 < T::half()) {
        return Err(invalid("each child needs alpha + bmin < 0.5"));
    }
    let two = T::two();
    Ok(match op {
        BoundOp::AndOr => {
            let (u1, u2) = (alpha1 + bmin1, alpha2 + bmin2);
            u1 + u2 - u1 * u2 - bmin1 * bmin2
        }
        BoundOp::Xor => alpha1 * (T::one() - two * bmin2) + alpha2 * (T::one() - two * bmin1) - two * alpha1 * alpha2,
    })
}

/// Truth assignment of the children with the largest flip probability
/// under equal child biases: `(true, true)` for And, `(false, false)` for Or.
pub fn worst_truth_assignment(op: BoolOp) -> Result<(bool, bool)> {
    match op {
        BoolOp::And => Ok((true, true)),
        BoolOp::Or => Ok((false, false)),
        BoolOp::Xor => Err(invalid(
            "xor flips with the same probability under every truth assignment",
        )),
    }
}
