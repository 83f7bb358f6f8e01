//! Mitigation strategies: output perturbation, the linear proxy obtained by
//! releasing the normalizer separately, learned piecewise-linear proxies and
//! cost-of-privacy accounting.

mod piecewise;

pub use piecewise::{fit_piecewise_proxy, group_of, partition_groups, FitMethod, LinearPiece, PiecewiseProxy};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fairness::{BiasMode, FairnessReport, ReportConfig};
use crate::mechanisms::{release, split_budget, unit_laplace, Dataset, DatasetKind, PrivacySpec, RngStream};
use crate::montecarlo::{self, McConfig};
use crate::problems::{pf_sensitivity, AllotmentProblem, Normalizer, Problem, ProblemOutput};
use crate::scalar::Real;

/// Counts and normalizer released under separate halves of the budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RedundantRelease<T> {
    pub noisy_counts: Dataset<T>,
    pub noisy_normalizer: T,
    pub epsilon_counts: T,
    pub epsilon_normalizer: T,
}

impl<T: Real> RedundantRelease<T> {
    pub fn component_budgets(&self) -> [T; 2] {
        [self.epsilon_counts, self.epsilon_normalizer]
    }
}

fn raw_column<T: Real>(problem: &AllotmentProblem<T>, data: &Dataset<T>) -> Result<Vec<T>> {
    if data.kind() != DatasetKind::Raw {
        return Err(invalid("mitigations start from a raw dataset"));
    }
    if data.n() != problem.weights().len() {
        return Err(Error::Shape(format!(
            "{} weights for {} entities",
            problem.weights().len(),
            data.n()
        )));
    }
    Ok(data.column(data.attr_index(&problem.attribute)?))
}

/// Releases the counts with `Lap(1/(ε/2))` and `Z = Σ a_i x_i` with
/// `Lap(a_max/(ε/2))`, for a total budget of `ε`.
pub fn release_with_redundant_z<T: Real>(
    data: &Dataset<T>,
    problem: &AllotmentProblem<T>,
    epsilon: T,
    stream: RngStream,
) -> Result<RedundantRelease<T>> {
    raw_column(problem, data)?;
    let parts = split_budget(epsilon, &[T::half(), T::half()])?;
    let counts_spec = PrivacySpec::counting(parts[0])?;
    let z_spec = PrivacySpec::new(parts[1], problem.max_weight())?;
    let noisy_counts = release(data, &counts_spec, stream.child(0))?;
    let z = problem.weighted_total(data)?;
    let noisy_normalizer = z + z_spec.scale() * T::of(unit_laplace(&mut stream.child(1).rng()));
    Ok(RedundantRelease {
        noisy_counts,
        noisy_normalizer,
        epsilon_counts: parts[0],
        epsilon_normalizer: parts[1],
    })
}

/// `a_i x̃_i / Z̃` with the released normalizer held constant; the output is
/// not renormalized.
pub fn linear_proxy_allotment<T: Real>(
    rel: &RedundantRelease<T>,
    problem: &AllotmentProblem<T>,
) -> Result<ProblemOutput<T>> {
    if !(rel.noisy_normalizer > T::zero()) {
        return Err(Error::NonPositiveNormalizer {
            z: rel.noisy_normalizer.as_f64(),
        });
    }
    let proxy = AllotmentProblem::new(
        problem.attribute.clone(),
        problem.weights().to_vec(),
        Normalizer::FixedConstant(rel.noisy_normalizer),
    )?;
    proxy.evaluate(&rel.noisy_counts)
}

/// How the released normalizer is treated when auditing the linear proxy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", bound = "T: Real")]
pub enum Conditioning<T> {
    /// `Z̃` is redrawn in every sample; bias is measured against `P^F(x)`.
    Marginal,
    /// `Z̃` is held at the given value; bias is measured against
    /// `a_i x_i / Z̃`, the proxy evaluated on the true counts.
    FixedNormalizer(T),
}

/// Monte Carlo audit of the linear proxy at total budget `epsilon`.
pub fn linear_proxy_audit<T: Real>(
    problem: &AllotmentProblem<T>,
    data: &Dataset<T>,
    epsilon: T,
    conditioning: Conditioning<T>,
    cfg: &McConfig,
) -> Result<FairnessReport> {
    let x = raw_column(problem, data)?;
    let parts = split_budget(epsilon, &[T::half(), T::half()])?;
    let counts_spec = PrivacySpec::counting(parts[0])?;
    let z_scale = PrivacySpec::new(parts[1], problem.max_weight())?.scale();
    let count_scale = counts_spec.scale();
    let a = problem.weights();
    let z = problem.weighted_total(data)?;
    let truth: Vec<T> = match conditioning {
        Conditioning::Marginal => problem.evaluate(data)?.values,
        Conditioning::FixedNormalizer(zt) => {
            if !(zt > T::zero()) {
                return Err(Error::NonPositiveNormalizer { z: zt.as_f64() });
            }
            x.iter().zip(a).map(|(&xi, &ai)| ai * xi / zt).collect()
        }
    };
    let summary = montecarlo::run(&truth, cfg, || {
        let x = &x;
        move |noise: &mut montecarlo::Noise<'_>, out: &mut [T]| {
            for ((o, &xi), &ai) in out.iter_mut().zip(x).zip(a) {
                *o = ai * (xi + noise.laplace(count_scale));
            }
            let zt = match conditioning {
                Conditioning::Marginal => z + noise.laplace(z_scale),
                Conditioning::FixedNormalizer(zt) => zt,
            };
            if !(zt > T::zero()) {
                return Err(Error::NonPositiveNormalizer { z: zt.as_f64() });
            }
            out.iter_mut().for_each(|o| *o /= zt);
            Ok(())
        }
    })?;
    let mut config = ReportConfig::new(&counts_spec, cfg);
    config.epsilon = epsilon.as_f64();
    let truth: Vec<f64> = truth.iter().map(|t| t.as_f64()).collect();
    Ok(
        FairnessReport::from_summary(data.entity_ids(), &truth, &summary, BiasMode::SignedBias, config)?
            .with_metadata("strategy", "linear_proxy".into())
            .with_metadata("conditioning", serde_json::to_value(conditioning).expect("serializes"))
            .with_metadata(
                "component_budgets",
                serde_json::json!([parts[0].as_f64(), parts[1].as_f64()]),
            ),
    )
}

fn output_scale<T: Real>(
    problem: &AllotmentProblem<T>,
    data: &Dataset<T>,
    epsilon: T,
    lower_bound: Option<T>,
) -> Result<(T, T)> {
    let z = problem.weighted_total(data)?;
    let l = lower_bound.unwrap_or(T::of(0.9) * z);
    if !(l > T::zero()) || l > z {
        return Err(invalid(format!("lower bound L must satisfy 0 < L <= Z = {z}, got {l}")));
    }
    let sensitivity = pf_sensitivity(problem.max_weight(), l)?;
    Ok((PrivacySpec::new(epsilon, sensitivity)?.scale(), l))
}

/// Exact shares plus i.i.d. `Lap((2a_max/L)/ε)` noise. `L` defaults to `0.9·Z`.
pub fn output_perturbation_pf<T: Real>(
    data: &Dataset<T>,
    problem: &AllotmentProblem<T>,
    epsilon: T,
    lower_bound: Option<T>,
    stream: RngStream,
) -> Result<ProblemOutput<T>> {
    raw_column(problem, data)?;
    let (scale, _) = output_scale(problem, data, epsilon, lower_bound)?;
    let mut out = problem.evaluate(data)?;
    let mut rng = stream.rng();
    for v in out.values.iter_mut() {
        *v += scale * T::of(unit_laplace(&mut rng));
    }
    Ok(out)
}

/// Monte Carlo audit of output perturbation.
pub fn output_perturbation_audit<T: Real>(
    problem: &AllotmentProblem<T>,
    data: &Dataset<T>,
    epsilon: T,
    lower_bound: Option<T>,
    cfg: &McConfig,
) -> Result<FairnessReport> {
    raw_column(problem, data)?;
    let (scale, l) = output_scale(problem, data, epsilon, lower_bound)?;
    let truth = problem.evaluate(data)?.values;
    let summary = montecarlo::run(&truth, cfg, || {
        let truth = &truth;
        move |noise: &mut montecarlo::Noise<'_>, out: &mut [T]| {
            for (o, &t) in out.iter_mut().zip(truth) {
                *o = t + noise.laplace(scale);
            }
            Ok(())
        }
    })?;
    let spec = PrivacySpec::new(epsilon, scale * epsilon)?;
    let truth: Vec<f64> = truth.iter().map(|t| t.as_f64()).collect();
    Ok(FairnessReport::from_summary(
        data.entity_ids(),
        &truth,
        &summary,
        BiasMode::SignedBias,
        ReportConfig::new(&spec, cfg),
    )?
    .with_metadata("strategy", "output_perturbation".into())
    .with_metadata("lower_bound", l.as_f64().into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostOfPrivacyReport {
    pub entity_ids: Vec<String>,
    /// `|B_i|·B` for negatively biased entities, zero otherwise.
    pub per_entity_shortfall: Vec<f64>,
    pub total: f64,
    pub budget: f64,
}

/// Extra budget needed so no entity is under-allocated in expectation:
/// `B⁺ = Σ_{i : B_i < 0} |B_i|·B`.
pub fn cost_of_privacy(report: &FairnessReport, budget: f64) -> Result<CostOfPrivacyReport> {
    if report.mode != BiasMode::SignedBias {
        return Err(Error::InvalidMode("cost of privacy needs signed biases".into()));
    }
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(invalid(format!("budget must be positive, got {budget}")));
    }
    let per_entity_shortfall: Vec<f64> = report
        .entities
        .iter()
        .map(|e| if e.bias < 0.0 { -e.bias * budget } else { 0.0 })
        .collect();
    Ok(CostOfPrivacyReport {
        entity_ids: report.entities.iter().map(|e| e.entity_id.clone()).collect(),
        total: per_entity_shortfall.iter().sum(),
        per_entity_shortfall,
        budget,
    })
}
