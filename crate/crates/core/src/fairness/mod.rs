//! Per-entity bias of a private release, disparity error and fairness bound.
//!
//! The bias of entity `i` is `B_i = E[P_i(x̃)] − P_i(x)`. Its disparity error
//! is `ξ_i = max_j |B_i − B_j|` and the fairness bound is
//! `α = max_i ξ_i = max_i B_i − min_i B_i`.

mod analytic;

pub use analytic::{
    calibrate_taylor_constant, compose_fairness_bound, compose_flip_probability, taylor_bias, taylor_bias_scaled,
    threshold_bias_closed_form, worst_truth_assignment, BoundOp, TaylorCalibration, TaylorCandidate,
    DEFAULT_TAYLOR_CONSTANT,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mechanisms::{Dataset, DatasetKind, PrivacySpec};
use crate::montecarlo::{self, McConfig, McSummary, VarianceReduction};
use crate::postprocess::{apply_steps, Pipeline};
use crate::problems::{OutputKind, Problem};
use crate::scalar::Real;

/// Default Monte Carlo sample count for reports.
pub const DEFAULT_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    /// Disparities over the signed bias `E[P_i(x̃)] − P_i(x)`.
    SignedBias,
    /// Disparities over `|B_i|`; for decision rules this is the
    /// misclassification probability `Pr[P_i(x̃) ≠ P_i(x)]`.
    AbsoluteBias,
}

impl BiasMode {
    pub fn default_for(kind: OutputKind) -> Self {
        match kind {
            OutputKind::Allotment => BiasMode::SignedBias,
            OutputKind::Decision => BiasMode::AbsoluteBias,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimate {
    pub entity_id: String,
    pub true_value: f64,
    pub expected_private_value: f64,
    pub bias: f64,
    pub absolute_bias: f64,
    pub std_error: f64,
    /// `E|P_i(x̃) − P_i(x)|`.
    pub mean_abs_error: f64,
    pub samples: usize,
}

/// Sampling configuration embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub epsilon: f64,
    pub sensitivity: f64,
    pub scale: f64,
    pub samples: usize,
    pub master_seed: u64,
    pub stream_id: u64,
    pub shards: usize,
    pub variance_reduction: VarianceReduction,
}

impl ReportConfig {
    pub fn new<T: Real>(spec: &PrivacySpec<T>, cfg: &McConfig) -> Self {
        Self {
            epsilon: spec.epsilon().as_f64(),
            sensitivity: spec.sensitivity().as_f64(),
            scale: spec.scale().as_f64(),
            samples: cfg.samples,
            master_seed: cfg.stream.master_seed,
            stream_id: cfg.stream.stream_id,
            shards: cfg.shards,
            variance_reduction: cfg.variance_reduction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub entities: Vec<BiasEstimate>,
    pub disparity: Vec<f64>,
    pub alpha: f64,
    /// `sqrt(se_max² + se_min²)` for the entities attaining the max and min bias.
    pub alpha_std_error: f64,
    pub mode: BiasMode,
    pub config: ReportConfig,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

pub const CSV_HEADER: [&str; 7] = [
    "entity_id",
    "true_value",
    "expected_private_value",
    "bias",
    "abs_bias",
    "std_error",
    "disparity",
];

impl FairnessReport {
    pub fn from_summary(
        entity_ids: &[String],
        truth: &[f64],
        summary: &McSummary,
        mode: BiasMode,
        config: ReportConfig,
    ) -> Result<Self> {
        if entity_ids.len() != truth.len() || truth.len() != summary.mean.len() {
            return Err(Error::Shape("ids, truth and summary lengths differ".into()));
        }
        let entities = (0..truth.len())
            .map(|i| {
                let bias = summary.mean[i] - truth[i];
                BiasEstimate {
                    entity_id: entity_ids[i].clone(),
                    true_value: truth[i],
                    expected_private_value: summary.mean[i],
                    bias,
                    absolute_bias: bias.abs(),
                    std_error: summary.std_error[i],
                    mean_abs_error: summary.mean_abs_error[i],
                    samples: summary.samples,
                }
            })
            .collect();
        Ok(Self::from_estimates(entities, mode, config))
    }

    /// Builds the disparity vector and `α` from per-entity estimates.
    pub fn from_estimates(entities: Vec<BiasEstimate>, mode: BiasMode, config: ReportConfig) -> Self {
        let mut report = Self {
            entities,
            disparity: vec![],
            alpha: 0.0,
            alpha_std_error: 0.0,
            mode,
            config,
            metadata: BTreeMap::new(),
        };
        report.recompute();
        report
    }

    fn recompute(&mut self) {
        let b = self.mode_biases();
        if b.is_empty() {
            self.disparity.clear();
            self.alpha = 0.0;
            self.alpha_std_error = 0.0;
            return;
        }
        let (mut imax, mut imin) = (0, 0);
        for (i, &v) in b.iter().enumerate() {
            if v > b[imax] {
                imax = i;
            }
            if v < b[imin] {
                imin = i;
            }
        }
        let (hi, lo) = (b[imax], b[imin]);
        self.disparity = b.iter().map(|&v| (v - lo).max(hi - v)).collect();
        self.alpha = hi - lo;
        let (se_hi, se_lo) = (self.entities[imax].std_error, self.entities[imin].std_error);
        self.alpha_std_error = (se_hi * se_hi + se_lo * se_lo).sqrt();
    }

    /// Signed or absolute biases according to the report mode.
    pub fn mode_biases(&self) -> Vec<f64> {
        self.entities
            .iter()
            .map(|e| match self.mode {
                BiasMode::SignedBias => e.bias,
                BiasMode::AbsoluteBias => e.absolute_bias,
            })
            .collect()
    }

    pub fn biases(&self) -> Vec<f64> {
        self.entities.iter().map(|e| e.bias).collect()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        self.entities.iter().map(|e| e.std_error).collect()
    }

    /// `sqrt(mean_i se_i²)`.
    pub fn pooled_std_error(&self) -> f64 {
        let n = self.entities.len().max(1) as f64;
        (self.entities.iter().map(|e| e.std_error * e.std_error).sum::<f64>() / n).sqrt()
    }

    /// Mean over entities of `E|P_i(x̃) − P_i(x)|`.
    pub fn mean_abs_error(&self) -> f64 {
        let n = self.entities.len().max(1) as f64;
        self.entities.iter().map(|e| e.mean_abs_error).sum::<f64>() / n
    }

    /// Keeps entities whose true decision is positive and recomputes `ξ`, `α`.
    pub fn true_positives(&self) -> Self {
        self.subset(|e| e.true_value > 0.5)
    }

    pub fn subset(&self, mut keep: impl FnMut(&BiasEstimate) -> bool) -> Self {
        let mut out = self.clone();
        out.entities.retain(|e| keep(e));
        out.recompute();
        out
    }

    pub fn with_metadata(mut self, key: &str, value: serde_json::Value) -> Self {
        self.metadata.insert(key.to_string(), value);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidData(format!("report JSON: {e}")))
    }

    /// Flat CSV with [`CSV_HEADER`] columns, one row per entity.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(CSV_HEADER).expect("in-memory write");
        for (e, d) in self.entities.iter().zip(&self.disparity) {
            w.write_record([
                e.entity_id.clone(),
                e.true_value.to_string(),
                e.expected_private_value.to_string(),
                e.bias.to_string(),
                e.absolute_bias.to_string(),
                e.std_error.to_string(),
                d.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV is UTF-8")
    }
}

/// Monte Carlo over released datasets: each sample adds Laplace noise to
/// every cell, applies `pipeline.input`, evaluates `problem` and applies
/// `pipeline.output`.
pub fn simulate<T: Real>(
    problem: &dyn Problem<T>,
    data: &Dataset<T>,
    spec: &PrivacySpec<T>,
    pipeline: &Pipeline<T>,
    cfg: &McConfig,
) -> Result<(Vec<T>, McSummary)> {
    pipeline.validate()?;
    let truth = problem.evaluate(data)?.values;
    let scale = spec.scale();
    let k = data.k();
    let summary = montecarlo::run(&truth, cfg, || {
        let mut work = data.clone();
        let mut noisy = data.values().to_vec();
        move |noise: &mut montecarlo::Noise<'_>, out: &mut [T]| {
            for (z, &x) in noisy.iter_mut().zip(data.values()) {
                *z = x + noise.laplace(scale);
            }
            apply_steps(&pipeline.input, &mut noisy, k, || noise.uniform());
            work.overwrite_released(&noisy);
            problem.evaluate_into(&work, out)?;
            apply_steps(&pipeline.output, out, 1, || noise.uniform());
            Ok(())
        }
    })?;
    Ok((truth, summary))
}

/// Empirical bias and fairness report of `problem` under the Laplace
/// mechanism `spec`, optionally post-processed by `pipeline`.
pub fn empirical_bias<T: Real>(
    problem: &dyn Problem<T>,
    data: &Dataset<T>,
    spec: &PrivacySpec<T>,
    pipeline: &Pipeline<T>,
    cfg: &McConfig,
    mode: BiasMode,
) -> Result<FairnessReport> {
    if data.kind() != DatasetKind::Raw {
        return Err(invalid("bias is measured against a raw dataset"));
    }
    let (truth, summary) = simulate(problem, data, spec, pipeline, cfg)?;
    let truth: Vec<f64> = truth.iter().map(|t| t.as_f64()).collect();
    let mut report =
        FairnessReport::from_summary(data.entity_ids(), &truth, &summary, mode, ReportConfig::new(spec, cfg))?;
    if !pipeline.is_empty() {
        report = report.with_metadata("pipeline", serde_json::to_value(pipeline).expect("pipeline serializes"));
    }
    Ok(report)
}
