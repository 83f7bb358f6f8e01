//! Synthetic stand-ins for the census extracts.

use dpfair::{Dataset, RngStream};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum SyntheticSpec {
    /// Counts drawn from a power law `∝ x^(−exponent)` truncated to
    /// `[min, max]` and rounded. Optional weights are log-uniform over
    /// `weight_range`; otherwise all weights are 1.
    PowerLawCounts {
        n: usize,
        exponent: f64,
        min: f64,
        max: f64,
        #[serde(default)]
        weight_range: Option<(f64, f64)>,
        #[serde(default)]
        seed: u64,
    },
    /// `x_i = i` for `i = 1..=n`.
    LinearRamp { n: usize },
    /// Counties with total, Hispanic and limited-English Hispanic citizen
    /// counts (`x_s`, `x_sp`, `x_spe`).
    MinorityCounties { n: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub data: Dataset<f64>,
    pub weights: Vec<f64>,
}

pub const ALLOTMENT_ATTRIBUTE: &str = "count";
pub const MINORITY_ATTRIBUTES: [&str; 3] = ["x_s", "x_sp", "x_spe"];

impl SyntheticSpec {
    pub fn generate(&self) -> Result<SyntheticData, CliError> {
        match *self {
            SyntheticSpec::PowerLawCounts {
                n,
                exponent,
                min,
                max,
                weight_range,
                seed,
            } => power_law(n, exponent, min, max, weight_range, seed),
            SyntheticSpec::LinearRamp { n } => {
                check_n(n)?;
                let counts: Vec<f64> = (1..=n).map(|i| i as f64).collect();
                allotment(counts, vec![1.0; n])
            }
            SyntheticSpec::MinorityCounties { n, seed } => minority(n, seed),
        }
    }
}

fn check_n(n: usize) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Config("generator needs n >= 1".into()));
    }
    Ok(())
}

fn ids(prefix: &str, n: usize) -> Vec<String> {
    let width = n.to_string().len();
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

fn allotment(counts: Vec<f64>, weights: Vec<f64>) -> Result<SyntheticData, CliError> {
    let data = Dataset::raw(ids("d", counts.len()), vec![ALLOTMENT_ATTRIBUTE.into()], counts)?;
    Ok(SyntheticData { data, weights })
}

fn power_law(
    n: usize,
    exponent: f64,
    min: f64,
    max: f64,
    weight_range: Option<(f64, f64)>,
    seed: u64,
) -> Result<SyntheticData, CliError> {
    check_n(n)?;
    if !(min >= 0.0 && max > min && exponent > 0.0) {
        return Err(CliError::Config(format!(
            "power law needs 0 <= min < max and exponent > 0, got min={min} max={max} exponent={exponent}"
        )));
    }
    let mut rng = RngStream::new(seed, 0).rng();
    // inverse CDF of the truncated power law on [lo, max]
    let lo = min.max(1.0);
    let k = 1.0 - exponent;
    let counts = (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            let x = if k.abs() < 1e-12 {
                lo * (max / lo).powf(u)
            } else {
                (lo.powf(k) + u * (max.powf(k) - lo.powf(k))).powf(1.0 / k)
            };
            x.round().clamp(min, max)
        })
        .collect();
    let weights = match weight_range {
        None => vec![1.0; n],
        Some((a, b)) => {
            if !(a > 0.0 && b >= a) {
                return Err(CliError::Config(format!(
                    "weight range must satisfy 0 < lo <= hi, got ({a}, {b})"
                )));
            }
            let mut wrng = RngStream::new(seed, 1).rng();
            (0..n).map(|_| a * (b / a).powf(wrng.gen::<f64>())).collect()
        }
    };
    allotment(counts, weights)
}

fn minority(n: usize, seed: u64) -> Result<SyntheticData, CliError> {
    check_n(n)?;
    let mut rng = RngStream::new(seed, 0).rng();
    let mut values = Vec::with_capacity(3 * n);
    for _ in 0..n {
        // county size: log-uniform over [50, 5·10⁶]
        let x_s = (50.0 * (1e5f64).powf(rng.gen::<f64>())).round();
        // Hispanic share: mostly small, a minority of counties far above 5%
        let share = if rng.gen::<f64>() < 0.7 {
            0.1 * rng.gen::<f64>().powi(2)
        } else {
            0.05 + 0.5 * rng.gen::<f64>()
        };
        let x_sp = (x_s * share).round().max(1.0);
        // limited-English fraction straddling the 1.31% threshold
        let x_spe = (x_sp * 0.04 * rng.gen::<f64>()).round();
        values.extend_from_slice(&[x_s, x_sp.min(x_s), x_spe]);
    }
    let data = Dataset::raw(
        ids("c", n),
        MINORITY_ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
        values,
    )?;
    Ok(SyntheticData {
        data,
        weights: vec![1.0; n],
    })
}
