//! Post-processing operators applied to released values or problem outputs.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mechanisms::PrivacySpec;
use crate::montecarlo::{self, McConfig};
use crate::scalar::Real;

/// One post-processing step. JSON form: `{"clip_lower":0}`,
/// `"stochastic_round"`, `{"project_sum":1.0}`,
/// `{"temperature_clip":{"level":0,"temperature":5}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", bound = "T: Real")]
pub enum PostStep<T> {
    ClipLower(T),
    StochasticRound,
    /// Shift all values uniformly so they sum to the target. Applied per
    /// attribute column on datasets and to the whole vector on outputs.
    ProjectSum(T),
    TemperatureClip {
        level: T,
        temperature: T,
    },
}

impl<T: Real> PostStep<T> {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PostStep::ClipLower(l) if !l.is_finite() => Err(invalid(format!("clip level must be finite, got {l}"))),
            PostStep::ProjectSum(s) if !s.is_finite() => {
                Err(invalid(format!("projection target must be finite, got {s}")))
            }
            PostStep::TemperatureClip { level, temperature } => {
                if !level.is_finite() {
                    return Err(invalid(format!("clip level must be finite, got {level}")));
                }
                if !(temperature >= T::zero()) || !temperature.is_finite() {
                    return Err(invalid(format!("temperature must be >= 0, got {temperature}")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn apply_cell(&self, z: T, uniform: &mut impl FnMut() -> f64) -> T {
        match *self {
            PostStep::ClipLower(l) => clip_lower(z, l),
            PostStep::StochasticRound => round_with(z, uniform()),
            PostStep::TemperatureClip { level, temperature } => temperature_clip(z, level, temperature),
            PostStep::ProjectSum(_) => unreachable!("projection is not a per-cell step"),
        }
    }
}

/// Applies `steps` in order to an `n × k` row-major block. Per-cell steps
/// touch every cell; `ProjectSum` projects each column separately.
pub fn apply_steps<T: Real>(steps: &[PostStep<T>], values: &mut [T], k: usize, mut uniform: impl FnMut() -> f64) {
    for step in steps {
        match *step {
            PostStep::ProjectSum(target) => {
                let n = values.len() / k;
                for j in 0..k {
                    let sum: T = (0..n).map(|i| values[i * k + j]).sum();
                    let shift = (target - sum) / T::of(n as f64);
                    for i in 0..n {
                        values[i * k + j] += shift;
                    }
                }
            }
            _ => {
                for v in values.iter_mut() {
                    *v = step.apply_cell(*v, &mut uniform);
                }
            }
        }
    }
}

/// Steps applied to every released dataset before the problem (`input`)
/// and to the problem's outputs afterwards (`output`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Pipeline<T> {
    #[serde(default)]
    pub input: Vec<PostStep<T>>,
    #[serde(default)]
    pub output: Vec<PostStep<T>>,
}

impl<T: Real> Pipeline<T> {
    pub fn none() -> Self {
        Self {
            input: vec![],
            output: vec![],
        }
    }

    pub fn input(steps: Vec<PostStep<T>>) -> Self {
        Self {
            input: steps,
            output: vec![],
        }
    }

    pub fn output(steps: Vec<PostStep<T>>) -> Self {
        Self {
            input: vec![],
            output: steps,
        }
    }

    /// Nonnegative integral counts: clip at zero, then round stochastically.
    pub fn nonnegative_integral() -> Self {
        Self::input(vec![PostStep::ClipLower(T::zero()), PostStep::StochasticRound])
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty() && self.output.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        validate_steps(&self.input)?;
        validate_steps(&self.output)
    }
}

pub fn validate_steps<T: Real>(steps: &[PostStep<T>]) -> Result<()> {
    steps.iter().try_for_each(PostStep::validate)
}

/// `max(level, z)`.
#[inline]
pub fn clip_lower<T: Real>(z: T, level: T) -> T {
    z.max(level)
}

/// `E[max(ℓ, x + η)] = x + (λ/2)·exp((ℓ − x)/λ)` for `η ~ Lap(λ)` and `ℓ < x`.
pub fn expected_clipped<T: Real>(x: T, level: T, scale: T) -> Result<T> {
    if !(scale > T::zero()) {
        return Err(invalid(format!("scale must be positive, got {scale}")));
    }
    if !(level < x) {
        return Err(Error::OutOfDomain(format!(
            "closed form needs level < x, got level={level} x={x}"
        )));
    }
    Ok(x + scale * T::half() * ((level - x) / scale).exp())
}

/// Unbiased stochastic rounding: `⌊z⌋ + 1` with probability `z − ⌊z⌋`,
/// else `⌊z⌋`. The result is integral.
pub fn stochastic_round<T: Real, R: rand::Rng + ?Sized>(z: T, rng: &mut R) -> T {
    round_with(z, rng.gen::<f64>())
}

#[inline]
fn round_with<T: Real>(z: T, u: f64) -> T {
    let f = z.floor();
    if T::of(u) < z - f {
        f + T::one()
    } else {
        f
    }
}

/// Euclidean projection onto `{y : Σ y = target}`: a uniform shift by
/// `(target − Σ z)/n`.
pub fn project_sum<T: Real>(z: &[T], target: T) -> Result<Vec<T>> {
    if z.is_empty() {
        return Err(invalid("projection needs at least one coordinate"));
    }
    let mut out = z.to_vec();
    apply_steps(&[PostStep::ProjectSum(target)], &mut out, 1, || 0.0);
    Ok(out)
}

/// Bias vector after projecting the outputs onto a sum constraint:
/// `b_i − (Σ_j b_j)/n`. Pairwise differences are unchanged.
pub fn projected_bias(b: &[f64]) -> Vec<f64> {
    let mean = b.iter().sum::<f64>() / b.len() as f64;
    b.iter().map(|v| v - mean).collect()
}

/// Clip with a boundary correction:
/// `x̄ = max(ℓ, x̃)`, `x̄_T = x̄ − T/(x̄ + 1 − ℓ)`, `x̂ = max(x̄_T, ℓ)`.
#[inline]
pub fn temperature_clip<T: Real>(x_tilde: T, level: T, temperature: T) -> T {
    let bar = x_tilde.max(level);
    let corrected = bar - temperature / (bar + T::one() - level);
    corrected.max(level)
}

/// `count` log-spaced temperatures over `[10⁻²·λ, 10²·λ]`.
pub fn default_temperature_grid<T: Real>(scale: T, count: usize) -> Vec<T> {
    let (lo, hi) = ((scale.as_f64() * 1e-2).ln(), (scale.as_f64() * 1e2).ln());
    match count {
        0 => vec![],
        1 => vec![T::of(lo.exp())],
        _ => (0..count)
            .map(|i| T::of((lo + (hi - lo) * i as f64 / (count - 1) as f64).exp()))
            .collect(),
    }
}

pub const DEFAULT_GRID_SIZE: usize = 25;

/// Outcome of a temperature search. Tuning reads the true values, so the
/// chosen temperature is not itself differentially private.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureTuning {
    pub temperature: f64,
    pub score: f64,
    /// `(T, max_x |bias| − min_x |bias|)` for every grid entry, in grid order.
    pub scores: Vec<(f64, f64)>,
    pub private: bool,
}

/// Bias spread `max_x |E[x̂_T] − x| − min_x |E[x̂_T] − x|` of the temperature
/// clip, estimated by Monte Carlo. The same stream is used for every `T`.
pub fn temperature_spread<T: Real>(
    domain: &[T],
    level: T,
    spec: &PrivacySpec<T>,
    temperature: T,
    cfg: &McConfig,
) -> Result<f64> {
    let scale = spec.scale();
    let summary = montecarlo::run(domain, cfg, || {
        move |noise: &mut montecarlo::Noise<'_>, out: &mut [T]| {
            for (o, &x) in out.iter_mut().zip(domain) {
                *o = temperature_clip(x + noise.laplace(scale), level, temperature);
            }
            Ok(())
        }
    })?;
    let abs: Vec<f64> = summary
        .mean
        .iter()
        .zip(domain)
        .map(|(m, x)| (m - x.as_f64()).abs())
        .collect();
    let max = abs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = abs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

/// Grid search for the temperature minimizing the bias spread; ties go to
/// the smaller temperature.
pub fn tune_temperature<T: Real>(
    domain: &[T],
    level: T,
    spec: &PrivacySpec<T>,
    grid: &[T],
    cfg: &McConfig,
) -> Result<TemperatureTuning> {
    if domain.is_empty() || grid.is_empty() {
        return Err(invalid("temperature tuning needs a non-empty domain and grid"));
    }
    if let Some(x) = domain.iter().find(|x| !(**x >= level)) {
        return Err(invalid(format!("domain value {x} lies below the clip level {level}")));
    }
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &t in grid {
        PostStep::TemperatureClip { level, temperature: t }.validate()?;
        let s = temperature_spread(domain, level, spec, t, cfg)?;
        let t = t.as_f64();
        scores.push((t, s));
        best = match best {
            Some((bt, bs)) if bs < s || (bs == s && bt <= t) => Some((bt, bs)),
            _ => Some((t, s)),
        };
    }
    let (temperature, score) = best.expect("grid is non-empty");
    Ok(TemperatureTuning {
        temperature,
        score,
        scores,
        private: false,
    })
}
