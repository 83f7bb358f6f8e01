//! Fairness auditing for differentially private data releases.
//!
//! Counts are released through the Laplace mechanism and then fed to
//! downstream problems: proportional allotments and Boolean decision rules.
//! The crate measures the per-entity bias this induces, evaluates the
//! closed-form approximations and composition bounds for that bias, and
//! implements post-processing operators and mitigation strategies.
//!
//! Every numeric type is generic over [`Real`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar for common use.

pub mod error;
pub mod fairness;
pub mod mechanisms;
pub mod mitigation;
pub mod montecarlo;
pub mod postprocess;
pub mod problems;
pub mod scalar;

pub use error::{Error, Result};
pub use fairness::{empirical_bias, BiasEstimate, BiasMode, FairnessReport, ReportConfig};
pub use mechanisms::{
    compose_budgets, release, release_per_attribute, sample_laplace, split_budget, unit_laplace, Dataset, DatasetKind,
    PrivacySpec, RngStream,
};
pub use montecarlo::{McConfig, McSummary, Noise, VarianceReduction};
pub use postprocess::{Pipeline, PostStep};
pub use problems::{
    pf_sensitivity, AllotmentProblem, BoolOp, Comparator, DecisionRule, LinearProblem, Normalizer, OutputKind,
    Predicate, Problem, ProblemOutput,
};
pub use scalar::Real;

pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type PrivacySpec64 = PrivacySpec<f64>;
pub type PrivacySpec32 = PrivacySpec<f32>;
pub type AllotmentProblem64 = AllotmentProblem<f64>;
pub type AllotmentProblem32 = AllotmentProblem<f32>;
pub type Predicate64 = Predicate<f64>;
pub type Predicate32 = Predicate<f32>;
