use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dpfair::fairness::{compose_fairness_bound, compose_flip_probability, BoundOp};
use dpfair::mitigation::cost_of_privacy;
use dpfair::postprocess::{clip_lower, expected_clipped, projected_bias};
use dpfair::{montecarlo, release, BoolOp, FairnessReport, McConfig, PrivacySpec, RngStream};
use dpfair_cli::config::Mitigation;
use dpfair_cli::ingest::{load_allotment_csv, load_minority_csv, write_dataset_csv};
use dpfair_cli::synth::SyntheticSpec;
use dpfair_cli::{run_experiment, CliError, ExperimentConfig, Overrides};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "dpfair",
    version,
    about = "Fairness audits of differentially private releases"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo samples per estimate.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Worker threads for Monte Carlo estimation.
    #[arg(long, global = true)]
    shards: Option<usize>,
    /// Privacy budget; repeat to sweep several values.
    #[arg(long = "epsilon", global = true)]
    epsilons: Vec<f64>,
    /// Directory for experiment artifacts.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Release a CSV dataset with the Laplace mechanism.
    Release {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "allotment")]
        schema: SchemaArg,
        #[arg(long)]
        filter_min_count: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        sensitivity: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run an experiment config and write bias and fairness reports.
    Audit { config: PathBuf },
    /// Run an experiment config that declares a mitigation strategy.
    Mitigate { config: PathBuf },
    /// Fairness bound and flip probabilities of a composed predicate.
    ComposeBound {
        #[arg(long, value_enum)]
        op: BoundOpArg,
        #[arg(long)]
        alpha1: f64,
        #[arg(long)]
        alpha2: f64,
        #[arg(long)]
        bmin1: f64,
        #[arg(long)]
        bmin2: f64,
    },
    /// Clipping bias (closed form and Monte Carlo) and projection bias map.
    PostprocessAnalyze {
        #[arg(long)]
        x: f64,
        #[arg(long, default_value_t = 0.0)]
        level: f64,
        /// Laplace scale; defaults to 1/ε for the first --epsilon.
        #[arg(long)]
        scale: Option<f64>,
        /// Per-entity biases to push through the sum projection.
        #[arg(long, value_delimiter = ',')]
        biases: Vec<f64>,
    },
    /// Cost of privacy of a signed-bias report.
    CostOfPrivacy {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 1e6)]
        budget: f64,
    },
    /// Generate a synthetic dataset from a JSON generator spec.
    Synth {
        /// Inline JSON, or `@path` to read it from a file.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemaArg {
    Allotment,
    Minority,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundOpArg {
    AndOr,
    Xor,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn overrides(g: &Global) -> Overrides {
    Overrides {
        seed: g.seed,
        samples: g.samples,
        shards: g.shards,
        epsilons: g.epsilons.clone(),
        out_dir: g.out_dir.clone(),
    }
}

fn first_epsilon(g: &Global) -> Result<f64, CliError> {
    g.epsilons
        .first()
        .copied()
        .ok_or_else(|| CliError::Config("--epsilon is required".into()))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match cli.command {
        Command::Release {
            input,
            schema,
            filter_min_count,
            sensitivity,
            output,
        } => {
            let (loaded, id_header) = match schema {
                SchemaArg::Allotment => (load_allotment_csv(&input, filter_min_count)?, "district_id"),
                SchemaArg::Minority => (load_minority_csv(&input, filter_min_count.is_some())?, "county_id"),
            };
            let spec = PrivacySpec::new(first_epsilon(g)?, sensitivity)?;
            let released = release(&loaded.data, &spec, RngStream::new(g.seed.unwrap_or(0), 0))?;
            let file = fs::File::create(&output).map_err(|e| CliError::Data(format!("{}: {e}", output.display())))?;
            let weights = matches!(schema, SchemaArg::Allotment).then_some(loaded.weights.as_slice());
            write_dataset_csv(file, id_header, &released, weights)?;
            print_json(&json!({
                "released": output,
                "entities": released.n(),
                "epsilon": spec.epsilon(),
                "scale": spec.scale(),
                "dropped_missing": loaded.dropped_missing,
                "dropped_filter": loaded.dropped_filter,
            }));
        }
        Command::Audit { config } => run_config(&config, g, false)?,
        Command::Mitigate { config } => run_config(&config, g, true)?,
        Command::ComposeBound {
            op,
            alpha1,
            alpha2,
            bmin1,
            bmin2,
        } => {
            let (bound_op, ops) = match op {
                BoundOpArg::AndOr => (BoundOp::AndOr, vec![BoolOp::And, BoolOp::Or]),
                BoundOpArg::Xor => (BoundOp::Xor, vec![BoolOp::Xor]),
            };
            let bound = compose_fairness_bound(bound_op, alpha1, alpha2, bmin1, bmin2)?;
            let mut flips = vec![];
            for op in ops {
                for (t1, t2) in [(false, false), (false, true), (true, false), (true, true)] {
                    let p = compose_flip_probability(op, t1, t2, bmin1, bmin2)?;
                    flips.push(json!({"op": op, "truth": [t1, t2], "flip_probability": p}));
                }
            }
            print_json(&json!({"bound": bound, "flip_probabilities_at_bmin": flips}));
        }
        Command::PostprocessAnalyze {
            x,
            level,
            scale,
            biases,
        } => {
            let scale = match scale {
                Some(s) => s,
                None => PrivacySpec::counting(first_epsilon(g)?)?.scale(),
            };
            let closed = expected_clipped(x, level, scale)?;
            let cfg = McConfig::new(g.samples.unwrap_or(100_000), g.seed.unwrap_or(0)).shards(g.shards.unwrap_or(1));
            let mc = montecarlo::run(&[x], &cfg, || {
                move |noise: &mut montecarlo::Noise<'_>, out: &mut [f64]| {
                    out[0] = clip_lower(x + noise.laplace(scale), level);
                    Ok(())
                }
            })?;
            let mut out = json!({
                "clip": {
                    "x": x, "level": level, "scale": scale,
                    "expected_closed_form": closed,
                    "monte_carlo_mean": mc.mean[0],
                    "monte_carlo_std_error": mc.std_error[0],
                    "z_score": (mc.mean[0] - closed) / mc.std_error[0],
                    "samples": mc.samples,
                }
            });
            if !biases.is_empty() {
                let projected = projected_bias(&biases);
                let shift = projected[0] - biases[0];
                let drift = projected
                    .iter()
                    .zip(&biases)
                    .map(|(p, b)| (p - b - shift).abs())
                    .fold(0.0, f64::max);
                out["projection"] = json!({
                    "biases": biases,
                    "projected_biases": projected,
                    "max_pairwise_difference_change": drift,
                    "projected_sum": projected.iter().sum::<f64>(),
                });
            }
            print_json(&out);
        }
        Command::CostOfPrivacy { report, budget } => {
            let s = read(&report)?;
            let r = FairnessReport::from_json(&s).map_err(|e| CliError::Data(e.to_string()))?;
            print_json(&serde_json::to_value(cost_of_privacy(&r, budget)?).expect("cost report serializes"));
        }
        Command::Synth { spec, output } => {
            let text = match spec.strip_prefix('@') {
                Some(p) => read(Path::new(p))?,
                None => spec,
            };
            let spec: SyntheticSpec =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("generator spec: {e}")))?;
            let s = spec.generate()?;
            let file = fs::File::create(&output).map_err(|e| CliError::Data(format!("{}: {e}", output.display())))?;
            match spec {
                SyntheticSpec::MinorityCounties { .. } => write_dataset_csv(file, "county_id", &s.data, None)?,
                _ => write_dataset_csv(file, "district_id", &s.data, Some(&s.weights))?,
            }
            print_json(&json!({"written": output, "entities": s.data.n()}));
        }
    }
    Ok(())
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn run_config(path: &Path, g: &Global, require_mitigation: bool) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    overrides(g).apply(&mut cfg)?;
    if require_mitigation && cfg.mitigation.is_none() {
        return Err(CliError::Config(
            "mitigate needs a `mitigation` block in the config".into(),
        ));
    }
    let out = run_experiment(&cfg)?;
    let summary: Vec<_> = out
        .results
        .iter()
        .map(|r| {
            json!({
                "epsilon": r.epsilon,
                "strategy": r.strategy,
                "alpha": r.report.alpha,
                "alpha_std_error": r.report.alpha_std_error,
                "mean_abs_error": r.report.mean_abs_error(),
            })
        })
        .collect();
    let mitigation = cfg.mitigation.as_ref().map(Mitigation::label);
    print_json(
        &json!({"experiment": cfg.name, "mitigation": mitigation, "results": summary, "artifacts": out.artifacts}),
    );
    Ok(())
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("JSON values serialize"));
}
