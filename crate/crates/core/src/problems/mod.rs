//! Decision problems evaluated on raw or released datasets.
//!
//! Two families: proportional allotments (shares of a fixed resource) and
//! Boolean decision rules built from threshold predicates.

mod allotment;
mod predicate;

pub use allotment::{pf_sensitivity, AllotmentProblem, Normalizer};
pub use predicate::{BoolOp, Comparator, CompiledPredicate, DecisionRule, Leaf, Predicate};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mechanisms::Dataset;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Allotment,
    Decision,
}

/// Per-entity outputs of a problem. Decisions are stored as 0/1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ProblemOutput<T> {
    pub kind: OutputKind,
    pub values: Vec<T>,
    /// Set for entities whose evaluation hit a non-positive ratio denominator.
    pub degenerate: Vec<bool>,
}

impl<T: Real> ProblemOutput<T> {
    pub fn allotment(values: Vec<T>) -> Self {
        let degenerate = vec![false; values.len()];
        Self {
            kind: OutputKind::Allotment,
            values,
            degenerate,
        }
    }

    pub fn decisions(&self) -> Vec<bool> {
        self.values.iter().map(|v| *v > T::half()).collect()
    }

    pub fn sum(&self) -> T {
        self.values.iter().copied().sum()
    }
}

/// A problem `P : X × [n] → R` (or `{0, 1}`) evaluated for all entities at once.
pub trait Problem<T: Real>: Send + Sync {
    fn kind(&self) -> OutputKind;

    /// Writes `P_i(data)` for every entity into `out` (length `n`).
    fn evaluate_into(&self, data: &Dataset<T>, out: &mut [T]) -> Result<()>;

    fn evaluate(&self, data: &Dataset<T>) -> Result<ProblemOutput<T>> {
        let mut values = vec![T::zero(); data.n()];
        self.evaluate_into(data, &mut values)?;
        Ok(ProblemOutput {
            kind: self.kind(),
            values,
            degenerate: vec![false; data.n()],
        })
    }
}

/// `P_i(x) = slope · x_i + intercept` on one attribute. With slope 1 and
/// intercept 0 this is the identity read-out used to audit released values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LinearProblem<T> {
    pub attribute: String,
    pub slope: T,
    pub intercept: T,
}

impl<T: Real> LinearProblem<T> {
    pub fn new(attribute: impl Into<String>, slope: T, intercept: T) -> Self {
        Self {
            attribute: attribute.into(),
            slope,
            intercept,
        }
    }

    pub fn identity(attribute: impl Into<String>) -> Self {
        Self::new(attribute, T::one(), T::zero())
    }
}

impl<T: Real> Problem<T> for LinearProblem<T> {
    fn kind(&self) -> OutputKind {
        OutputKind::Allotment
    }

    fn evaluate_into(&self, data: &Dataset<T>, out: &mut [T]) -> Result<()> {
        let j = data.attr_index(&self.attribute)?;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.slope * data.get(i, j) + self.intercept;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_problem_evaluates_affine_map() {
        let data = Dataset::from_counts("x", &[1.0, 2.0]).unwrap();
        let p = LinearProblem::new("x", 3.0, 2.0);
        assert_eq!(p.evaluate(&data).unwrap().values, vec![5.0, 8.0]);
        let missing = LinearProblem::new("y", 1.0, 0.0);
        assert!(missing.evaluate(&data).is_err());
    }
}
