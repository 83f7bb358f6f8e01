//! Experiment orchestration: one baseline report per ε plus an optional
//! mitigation report, written as JSON reports and CSV plot data.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use dpfair::fairness::DEFAULT_SAMPLES;
use dpfair::mitigation::{
    fit_piecewise_proxy, group_of, linear_proxy_audit, output_perturbation_audit, partition_groups,
    release_with_redundant_z, Conditioning, PiecewiseProxy,
};
use dpfair::postprocess::{default_temperature_grid, tune_temperature, TemperatureTuning, DEFAULT_GRID_SIZE};
use dpfair::{
    empirical_bias, release, AllotmentProblem, BiasMode, Dataset, DecisionRule, FairnessReport, LinearProblem,
    McConfig, Pipeline, PostStep, PrivacySpec, Problem, RngStream,
};
use log::info;
use serde_json::json;

use crate::config::{DatasetSource, ExperimentConfig, Mitigation, ProblemSpec, ProxyConditioning, Schema};
use crate::error::CliError;
use crate::ingest::{load_allotment_csv, load_minority_csv};
use crate::synth::ALLOTMENT_ATTRIBUTE;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Stream ids under the experiment seed. Estimation uses stream 0; one-off
/// releases (fixed `Z̃`, proxy training data) use stream 1.
const ESTIMATOR_STREAM: u64 = 0;
const RELEASE_STREAM: u64 = 1;

pub const BASELINE: &str = "baseline";

/// Command-line overrides of config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub shards: Option<usize>,
    pub epsilons: Vec<f64>,
    pub out_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        if let Some(s) = self.seed {
            cfg.estimator.master_seed = s;
        }
        if let Some(m) = self.samples {
            cfg.estimator.samples = m;
        }
        if let Some(s) = self.shards {
            cfg.estimator.shards = s;
        }
        if !self.epsilons.is_empty() {
            cfg.privacy.epsilons = self.epsilons.clone();
        }
        if let Some(d) = &self.out_dir {
            cfg.outputs.dir = d.clone();
        }
        cfg.validate()
    }
}

/// Raw dataset and per-entity allotment weights.
pub fn load_dataset(src: &DatasetSource) -> Result<(Dataset<f64>, Vec<f64>), CliError> {
    match src {
        DatasetSource::Csv {
            path,
            schema: Schema::Allotment,
            filter_min_count,
        } => {
            let l = load_allotment_csv(path, *filter_min_count)?;
            Ok((l.data, l.weights))
        }
        DatasetSource::Csv {
            path,
            schema: Schema::Minority,
            filter_min_count,
        } => {
            let l = load_minority_csv(path, filter_min_count.is_some())?;
            Ok((l.data, l.weights))
        }
        DatasetSource::Synthetic(spec) => {
            let s = spec.generate()?;
            Ok((s.data, s.weights))
        }
    }
}

pub enum BuiltProblem {
    Allotment(AllotmentProblem<f64>),
    Rule(DecisionRule<f64>),
    Linear(LinearProblem<f64>),
}

impl BuiltProblem {
    pub fn as_dyn(&self) -> &dyn Problem<f64> {
        match self {
            BuiltProblem::Allotment(p) => p,
            BuiltProblem::Rule(p) => p,
            BuiltProblem::Linear(p) => p,
        }
    }
}

pub fn build_problem(spec: &ProblemSpec, data: &Dataset<f64>, weights: &[f64]) -> Result<BuiltProblem, CliError> {
    Ok(match spec {
        ProblemSpec::Allotment { normalizer } => {
            data.attr_index(ALLOTMENT_ATTRIBUTE)?;
            BuiltProblem::Allotment(AllotmentProblem::new(
                ALLOTMENT_ATTRIBUTE,
                weights.to_vec(),
                *normalizer,
            )?)
        }
        ProblemSpec::Predicate(p) => BuiltProblem::Rule(DecisionRule::new(p.clone(), data.attribute_names())?),
        ProblemSpec::Linear {
            attribute,
            slope,
            intercept,
        } => {
            data.attr_index(attribute)?;
            BuiltProblem::Linear(LinearProblem::new(attribute.clone(), *slope, *intercept))
        }
    })
}

/// One audited strategy at one ε.
#[derive(Debug, Clone)]
pub struct StrategyResult {
    pub epsilon: f64,
    pub strategy: String,
    pub report: FairnessReport,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub results: Vec<StrategyResult>,
    pub artifacts: Vec<PathBuf>,
}

struct Writer {
    dir: PathBuf,
    artifacts: Vec<PathBuf>,
}

impl Writer {
    fn write(&mut self, file: String, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(file);
        fs::write(&path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        info!("wrote {}", path.display());
        self.artifacts.push(path);
        Ok(())
    }
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV is UTF-8")
}

/// Entities ordered by their first attribute (the count or population),
/// ties by position.
fn size_order(data: &Dataset<f64>) -> Vec<usize> {
    let size = data.column(0);
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.sort_by(|&a, &b| size[a].total_cmp(&size[b]).then(a.cmp(&b)));
    order
}

fn sorted_report(report: &FairnessReport, order: &[usize]) -> FairnessReport {
    let entities = order.iter().map(|&i| report.entities[i].clone()).collect();
    let mut sorted = FairnessReport::from_estimates(entities, report.mode, report.config.clone());
    sorted.metadata = report.metadata.clone();
    sorted
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    let (data, weights) = load_dataset(&cfg.dataset)?;
    let problem = build_problem(&cfg.problem, &data, &weights)?;
    fs::create_dir_all(&cfg.outputs.dir).map_err(|e| CliError::Data(format!("{}: {e}", cfg.outputs.dir.display())))?;
    let mut out = Writer {
        dir: cfg.outputs.dir.clone(),
        artifacts: vec![],
    };
    if cfg.estimator.samples < DEFAULT_SAMPLES {
        info!("{} samples per estimate; expect wide std errors", cfg.estimator.samples);
    }
    let pipeline = Pipeline {
        input: cfg.pipeline.clone(),
        output: cfg.output_pipeline.clone(),
    };
    let order = size_order(&data);
    let size = data.column(0);
    let experiment = serde_json::to_value(cfg).expect("configs serialize");
    let mut results = vec![];
    for &eps in &cfg.privacy.epsilons {
        let spec = PrivacySpec::new(eps, cfg.privacy.sensitivity)?;
        let mc = McConfig::new(cfg.estimator.samples, cfg.estimator.master_seed)
            .stream(RngStream::new(cfg.estimator.master_seed, ESTIMATOR_STREAM))
            .shards(cfg.estimator.shards)
            .with_variance_reduction(cfg.estimator.variance_reduction);
        let mode = BiasMode::default_for(problem.as_dyn().kind());
        let baseline = empirical_bias(problem.as_dyn(), &data, &spec, &pipeline, &mc, mode)?
            .with_metadata("strategy", BASELINE.into());
        results.push(StrategyResult {
            epsilon: eps,
            strategy: BASELINE.into(),
            report: baseline,
        });
        if let Some(m) = &cfg.mitigation {
            let report = run_mitigation(m, cfg, &problem, &data, &spec, &pipeline, &mc, &mut out, &results)?;
            results.push(StrategyResult {
                epsilon: eps,
                strategy: m.label().into(),
                report,
            });
        }
    }

    let stem = &cfg.name;
    for r in results.iter_mut() {
        r.report.metadata.insert("toolkit_version".into(), VERSION.into());
        r.report.metadata.insert("experiment".into(), experiment.clone());
        let sorted = sorted_report(&r.report, &order);
        let base = format!("{stem}_eps{}_{}", r.epsilon, r.strategy);
        out.write(format!("{base}.json"), &sorted.to_json())?;
        out.write(format!("{base}.csv"), &sorted.to_csv())?;
        if let (Some(budget), BiasMode::SignedBias) = (cfg.cost_budget, r.report.mode) {
            let cost = dpfair::mitigation::cost_of_privacy(&r.report, budget)?;
            let rows = order.iter().map(|&i| {
                vec![
                    cost.entity_ids[i].clone(),
                    size[i].to_string(),
                    r.report.entities[i].bias.to_string(),
                    r.report.entities[i].std_error.to_string(),
                    cost.per_entity_shortfall[i].to_string(),
                ]
            });
            out.write(
                format!("{base}_cost.csv"),
                &csv_string(&["entity_id", "size", "bias", "std_error", "shortfall"], rows),
            )?;
        }
    }

    let alpha_rows = results.iter().map(|r| {
        vec![
            r.epsilon.to_string(),
            r.strategy.clone(),
            r.report.alpha.to_string(),
            r.report.alpha_std_error.to_string(),
            r.report.pooled_std_error().to_string(),
            r.report.mean_abs_error().to_string(),
            r.report.config.samples.to_string(),
        ]
    });
    out.write(
        format!("{stem}_alpha.csv"),
        &csv_string(
            &[
                "epsilon",
                "strategy",
                "alpha",
                "alpha_std_error",
                "pooled_std_error",
                "mean_abs_error",
                "samples",
            ],
            alpha_rows,
        ),
    )?;

    if let Some(budget) = cfg.cost_budget {
        let mut rows = vec![];
        for &eps in &cfg.privacy.epsilons {
            let mut ranked: Vec<(String, f64)> = results
                .iter()
                .filter(|r| r.epsilon == eps && r.report.mode == BiasMode::SignedBias)
                .map(|r| {
                    Ok((
                        r.strategy.clone(),
                        dpfair::mitigation::cost_of_privacy(&r.report, budget)?.total,
                    ))
                })
                .collect::<Result<_, dpfair::Error>>()?;
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            for (rank, (s, total)) in ranked.into_iter().enumerate() {
                rows.push(vec![
                    eps.to_string(),
                    (rank + 1).to_string(),
                    s,
                    total.to_string(),
                    budget.to_string(),
                ]);
            }
        }
        out.write(
            format!("{stem}_cost.csv"),
            &csv_string(&["epsilon", "rank", "strategy", "total_shortfall", "budget"], rows),
        )?;
    }
    out.write(format!("{stem}_config.json"), &cfg.to_json())?;
    Ok(RunOutput {
        results,
        artifacts: out.artifacts,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_mitigation(
    m: &Mitigation,
    cfg: &ExperimentConfig,
    problem: &BuiltProblem,
    data: &Dataset<f64>,
    spec: &PrivacySpec<f64>,
    pipeline: &Pipeline<f64>,
    mc: &McConfig,
    out: &mut Writer,
    results: &[StrategyResult],
) -> Result<FairnessReport, CliError> {
    let eps = spec.epsilon();
    let seed = cfg.estimator.master_seed;
    let base = format!("{}_eps{}_{}", cfg.name, eps, m.label());
    match (m, problem) {
        (Mitigation::LinearProxy { conditioning }, BuiltProblem::Allotment(p)) => {
            let cond = match conditioning {
                ProxyConditioning::Marginal => Conditioning::Marginal,
                ProxyConditioning::FixedReleased => {
                    let rel = release_with_redundant_z(data, p, eps, RngStream::new(seed, RELEASE_STREAM))?;
                    Conditioning::FixedNormalizer(rel.noisy_normalizer)
                }
            };
            Ok(linear_proxy_audit(p, data, eps, cond, mc)?)
        }
        (Mitigation::OutputPerturbation { lower_bound }, BuiltProblem::Allotment(p)) => {
            Ok(output_perturbation_audit(p, data, eps, *lower_bound, mc)?)
        }
        (Mitigation::Temperature { level, grid }, _) => {
            let tuning = tune_for_dataset(data, *level, spec, grid.as_deref(), mc)?;
            let rows = tuning.scores.iter().map(|(t, s)| vec![t.to_string(), s.to_string()]);
            out.write(
                format!("{base}_tuning.csv"),
                &csv_string(&["temperature", "bias_spread"], rows),
            )?;
            out.write(
                format!("{base}_tuning.json"),
                &serde_json::to_string_pretty(&tuning).expect("tuning serializes"),
            )?;
            let tuned = Pipeline {
                input: with_temperature(&pipeline.input, *level, tuning.temperature),
                output: pipeline.output.clone(),
            };
            let mode = BiasMode::default_for(problem.as_dyn().kind());
            Ok(
                empirical_bias(problem.as_dyn(), data, spec, &tuned, mc, mode)?.with_metadata(
                    "temperature",
                    json!({"value": tuning.temperature, "private": tuning.private}),
                ),
            )
        }
        (
            Mitigation::PiecewiseProxy {
                groups,
                method,
                group_attribute,
                features,
            },
            BuiltProblem::Rule(rule),
        ) => {
            let labels = rule.evaluate(data)?.decisions();
            let train = release(data, spec, RngStream::new(seed, RELEASE_STREAM))?;
            let g = train.attr_index(group_attribute)?;
            let breakpoints = partition_groups(&train.column(g), *groups)?;
            let proxy = fit_piecewise_proxy(&train, &labels, group_attribute, features, &breakpoints, *method)?;
            out.write(format!("{base}_model.json"), &proxy.to_json())?;
            let report = empirical_bias(&proxy, data, spec, pipeline, mc, BiasMode::AbsoluteBias)?.with_metadata(
                "training_data",
                "one release at the experiment seed; negative counts kept".into(),
            );
            let baseline = &results.last().expect("baseline precedes mitigation").report;
            out.write(
                format!("{base}_groups.csv"),
                &group_table(&proxy, data, baseline, &report)?,
            )?;
            Ok(report)
        }
        (m, _) => Err(CliError::Config(format!(
            "{} does not apply to this problem",
            m.label()
        ))),
    }
}

/// Temperature search over the distinct values of the first attribute;
/// `T = 0` is always a candidate.
pub fn tune_for_dataset(
    data: &Dataset<f64>,
    level: f64,
    spec: &PrivacySpec<f64>,
    grid: Option<&[f64]>,
    mc: &McConfig,
) -> Result<TemperatureTuning, CliError> {
    let mut domain = data.column(0);
    domain.sort_by(f64::total_cmp);
    domain.dedup();
    let mut candidates = vec![0.0];
    match grid {
        Some(g) => candidates.extend(g.iter().copied().filter(|&t| t != 0.0)),
        None => candidates.extend(default_temperature_grid(spec.scale(), DEFAULT_GRID_SIZE)),
    }
    Ok(tune_temperature(&domain, level, spec, &candidates, mc)?)
}

/// Replaces every `ClipLower(level)` with the tuned temperature clip, or
/// prepends one when the pipeline has no such step.
fn with_temperature(steps: &[PostStep<f64>], level: f64, temperature: f64) -> Vec<PostStep<f64>> {
    let tc = PostStep::TemperatureClip { level, temperature };
    let mut replaced = false;
    let mut out: Vec<_> = steps
        .iter()
        .map(|s| match *s {
            PostStep::ClipLower(l) if l == level => {
                replaced = true;
                tc
            }
            s => s,
        })
        .collect();
    if !replaced {
        out.insert(0, tc);
    }
    out
}

/// Per-group fairness bound of the original rule and the proxy, groups
/// taken over the true grouping attribute.
fn group_table(
    proxy: &PiecewiseProxy<f64>,
    data: &Dataset<f64>,
    baseline: &FairnessReport,
    mitigated: &FairnessReport,
) -> Result<String, CliError> {
    let g = data.attr_index(&proxy.group_attribute)?;
    let group: HashMap<&str, usize> = (0..data.n())
        .map(|i| {
            (
                data.entity_ids()[i].as_str(),
                group_of(&proxy.breakpoints, data.get(i, g)),
            )
        })
        .collect();
    let mut rows = vec![];
    for k in 0..proxy.pieces.len() {
        let mut members: Vec<f64> = (0..data.n())
            .filter(|&i| group[data.entity_ids()[i].as_str()] == k)
            .map(|i| data.get(i, g))
            .collect();
        if members.is_empty() {
            continue;
        }
        members.sort_by(f64::total_cmp);
        let median = members[members.len() / 2];
        let a0 = baseline.subset(|e| group[e.entity_id.as_str()] == k);
        let a1 = mitigated.subset(|e| group[e.entity_id.as_str()] == k);
        rows.push(vec![
            k.to_string(),
            members.len().to_string(),
            median.to_string(),
            a0.alpha.to_string(),
            a0.alpha_std_error.to_string(),
            a1.alpha.to_string(),
            a1.alpha_std_error.to_string(),
        ]);
    }
    Ok(csv_string(
        &[
            "group",
            "size",
            "median_group_value",
            "alpha_original",
            "alpha_original_std_error",
            "alpha_proxy",
            "alpha_proxy_std_error",
        ],
        rows,
    ))
}
