//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use dpfair::mitigation::FitMethod;
use dpfair::problems::Normalizer;
use dpfair::{PostStep, Predicate, VarianceReduction};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::synth::SyntheticSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSource,
    pub problem: ProblemSpec,
    pub privacy: PrivacyConfig,
    /// Steps applied to every released dataset before the problem.
    #[serde(default)]
    pub pipeline: Vec<PostStep<f64>>,
    /// Steps applied to the problem's outputs.
    #[serde(default)]
    pub output_pipeline: Vec<PostStep<f64>>,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub mitigation: Option<Mitigation>,
    /// Total resource `B` for cost-of-privacy tables; omitted tables are skipped.
    #[serde(default)]
    pub cost_budget: Option<f64>,
    #[serde(default)]
    pub outputs: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        schema: Schema,
        /// Allotment: drop rows with `count` below this. Minority: any value
        /// enables the `x_sp >= 1` filter.
        #[serde(default)]
        filter_min_count: Option<f64>,
    },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    Allotment,
    Minority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemSpec {
    /// Weighted proportional allotment over `count`, weights from the dataset.
    Allotment {
        #[serde(default = "data_dependent")]
        normalizer: Normalizer<f64>,
    },
    Predicate(Predicate<f64>),
    Linear {
        attribute: String,
        #[serde(default = "one")]
        slope: f64,
        #[serde(default)]
        intercept: f64,
    },
}

fn data_dependent() -> Normalizer<f64> {
    Normalizer::DataDependent
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    pub epsilons: Vec<f64>,
    #[serde(default = "one")]
    pub sensitivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_shards")]
    pub shards: usize,
    #[serde(default)]
    pub variance_reduction: VarianceReduction,
}

fn default_samples() -> usize {
    dpfair::fairness::DEFAULT_SAMPLES
}

fn default_shards() -> usize {
    1
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            master_seed: 0,
            shards: default_shards(),
            variance_reduction: VarianceReduction::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mitigation {
    /// Counts and `Z` released separately, shares `a_i x̃_i / Z̃`.
    LinearProxy {
        #[serde(default)]
        conditioning: ProxyConditioning,
    },
    OutputPerturbation {
        /// Public lower bound on `Z`; defaults to `0.9·Z`.
        #[serde(default)]
        lower_bound: Option<f64>,
    },
    /// Temperature-corrected clip tuned over the dataset's count domain.
    Temperature {
        #[serde(default)]
        level: f64,
        #[serde(default)]
        grid: Option<Vec<f64>>,
    },
    PiecewiseProxy {
        groups: usize,
        method: FitMethod,
        group_attribute: String,
        features: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyConditioning {
    /// `Z̃` redrawn in every sample.
    #[default]
    Marginal,
    /// `Z̃` drawn once from the experiment seed and held fixed.
    FixedReleased,
}

impl Mitigation {
    pub fn label(&self) -> &'static str {
        match self {
            Mitigation::LinearProxy { .. } => "linear_proxy",
            Mitigation::OutputPerturbation { .. } => "output_perturbation",
            Mitigation::Temperature { .. } => "temperature",
            Mitigation::PiecewiseProxy { .. } => "piecewise_proxy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out_dir() }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| CliError::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let s = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs always serialize")
    }

    /// Checks that do not need the dataset; attribute names are checked
    /// when the problem is built.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!(
                "experiment name must be a non-empty file stem, got `{}`",
                self.name
            ));
        }
        if self.privacy.epsilons.is_empty() {
            return bad("privacy.epsilons must be non-empty".into());
        }
        if let Some(e) = self.privacy.epsilons.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
            return bad(format!("epsilon must be positive and finite, got {e}"));
        }
        if !(self.privacy.sensitivity > 0.0) || !self.privacy.sensitivity.is_finite() {
            return bad(format!(
                "sensitivity must be positive, got {}",
                self.privacy.sensitivity
            ));
        }
        if self.estimator.samples < 2 {
            return bad(format!(
                "estimator.samples must be at least 2, got {}",
                self.estimator.samples
            ));
        }
        if self.estimator.shards == 0 {
            return bad("estimator.shards must be at least 1".into());
        }
        if let Some(b) = self.cost_budget {
            if !(b > 0.0) || !b.is_finite() {
                return bad(format!("cost_budget must be positive, got {b}"));
            }
        }
        dpfair::postprocess::validate_steps(&self.pipeline)?;
        dpfair::postprocess::validate_steps(&self.output_pipeline)?;
        if let ProblemSpec::Predicate(p) = &self.problem {
            p.validate()?;
        }
        match (&self.mitigation, &self.problem) {
            (Some(Mitigation::PiecewiseProxy { .. }), ProblemSpec::Predicate(_)) => {}
            (Some(Mitigation::PiecewiseProxy { .. }), _) => {
                return bad("piecewise_proxy needs a predicate problem".into())
            }
            (
                Some(Mitigation::LinearProxy { .. } | Mitigation::OutputPerturbation { .. }),
                ProblemSpec::Allotment { .. },
            ) => {}
            (Some(m @ (Mitigation::LinearProxy { .. } | Mitigation::OutputPerturbation { .. })), _) => {
                return bad(format!("{} needs an allotment problem", m.label()))
            }
            _ => {}
        }
        if let Some(Mitigation::PiecewiseProxy { groups, features, .. }) = &self.mitigation {
            if *groups == 0 || features.is_empty() {
                return bad("piecewise_proxy needs groups >= 1 and at least one feature".into());
            }
        }
        Ok(())
    }
}
