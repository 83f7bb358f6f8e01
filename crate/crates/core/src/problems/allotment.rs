use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mechanisms::Dataset;
use crate::problems::{OutputKind, Problem, ProblemOutput};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", bound = "T: Real")]
pub enum Normalizer<T> {
    /// `Z = Σ_j a_j x_j`, recomputed from the (possibly released) input.
    DataDependent,
    /// `Z` held constant, which makes the allotment linear in the counts.
    FixedConstant(T),
}

/// Weighted proportional allotment: `share_i = a_i x_i / Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AllotmentProblem<T> {
    pub attribute: String,
    weights: Vec<T>,
    normalizer: Normalizer<T>,
}

impl<T: Real> AllotmentProblem<T> {
    pub fn new(attribute: impl Into<String>, weights: Vec<T>, normalizer: Normalizer<T>) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("allotment needs at least one weight"));
        }
        if let Some(a) = weights.iter().find(|a| !(**a > T::zero()) || !a.is_finite()) {
            return Err(invalid(format!("weights must be positive, got {a}")));
        }
        if let Normalizer::FixedConstant(z) = normalizer {
            if !(z > T::zero()) || !z.is_finite() {
                return Err(invalid(format!("fixed normalizer must be positive, got {z}")));
            }
        }
        Ok(Self {
            attribute: attribute.into(),
            weights,
            normalizer,
        })
    }

    /// Data-dependent allotment with unit weights.
    pub fn uniform(attribute: impl Into<String>, n: usize) -> Result<Self> {
        Self::new(attribute, vec![T::one(); n], Normalizer::DataDependent)
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn normalizer(&self) -> Normalizer<T> {
        self.normalizer
    }

    pub fn max_weight(&self) -> T {
        self.weights.iter().copied().fold(T::zero(), T::max)
    }

    /// Same weights, normalizer frozen at `z`.
    pub fn with_fixed_normalizer(&self, z: T) -> Result<Self> {
        Self::new(
            self.attribute.clone(),
            self.weights.clone(),
            Normalizer::FixedConstant(z),
        )
    }

    fn counts(&self, data: &Dataset<T>) -> Result<usize> {
        if data.n() != self.weights.len() {
            return Err(Error::Shape(format!(
                "{} weights for {} entities",
                self.weights.len(),
                data.n()
            )));
        }
        data.attr_index(&self.attribute)
    }

    /// `Σ_j a_j x_j` over the problem attribute.
    pub fn weighted_total(&self, data: &Dataset<T>) -> Result<T> {
        let j = self.counts(data)?;
        Ok(self.weights.iter().enumerate().map(|(i, &a)| a * data.get(i, j)).sum())
    }

    pub fn eval_allotment(&self, data: &Dataset<T>) -> Result<ProblemOutput<T>> {
        let mut out = vec![T::zero(); data.n()];
        self.evaluate_into(data, &mut out)?;
        Ok(ProblemOutput::allotment(out))
    }

    /// Trace of the Hessian of `share_i` with respect to the counts:
    /// `2 a_i (x_i Σ a_j² − a_i Z) / Z³`.
    pub fn hessian_trace(&self, data: &Dataset<T>, entity: usize) -> Result<T> {
        if self.normalizer != Normalizer::DataDependent {
            return Err(invalid("Hessian trace is defined for the data-dependent normalizer"));
        }
        let j = self.counts(data)?;
        if entity >= data.n() {
            return Err(invalid(format!("entity {entity} out of range")));
        }
        let z = self.weighted_total(data)?;
        if !(z > T::zero()) {
            return Err(Error::NonPositiveNormalizer { z: z.as_f64() });
        }
        let sum_sq: T = self.weights.iter().map(|&a| a * a).sum();
        let a_i = self.weights[entity];
        let x_i = data.get(entity, j);
        Ok(T::two() * a_i * (x_i * sum_sq - a_i * z) / (z * z * z))
    }
}

impl<T: Real> Problem<T> for AllotmentProblem<T> {
    fn kind(&self) -> OutputKind {
        OutputKind::Allotment
    }

    fn evaluate_into(&self, data: &Dataset<T>, out: &mut [T]) -> Result<()> {
        let j = self.counts(data)?;
        let z = match self.normalizer {
            Normalizer::FixedConstant(z) => z,
            Normalizer::DataDependent => {
                let z = self.weighted_total(data)?;
                if !(z > T::zero()) {
                    return Err(Error::NonPositiveNormalizer { z: z.as_f64() });
                }
                z
            }
        };
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.weights[i] * data.get(i, j) / z;
        }
        Ok(())
    }
}

/// L1 global sensitivity of the full share vector given a public lower
/// bound `L` on `Σ a_i x_i`: `2 a_max / L`.
pub fn pf_sensitivity<T: Real>(a_max: T, lower_bound: T) -> Result<T> {
    if !(a_max > T::zero()) || !(lower_bound > T::zero()) {
        return Err(invalid(format!(
            "a_max and L must be positive, got a_max={a_max} L={lower_bound}"
        )));
    }
    Ok(T::two() * a_max / lower_bound)
}
