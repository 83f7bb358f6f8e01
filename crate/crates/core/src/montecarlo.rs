//! Deterministic, sharded Monte Carlo over per-entity outputs.
//!
//! The `m` samples are cut into fixed blocks of [`BLOCK_SIZE`]. Block `b`
//! draws its mechanism noise from `stream.child(2b)` and any auxiliary
//! randomness (stochastic rounding) from `stream.child(2b + 1)`. Workers
//! take blocks round-robin and the per-block statistics are merged in
//! block order, so a summary depends on `(stream, m)` only and never on the
//! number of shards.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mechanisms::{unit_laplace, RngStream};
use crate::scalar::Real;

pub const BLOCK_SIZE: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceReduction {
    /// One independent draw per sample.
    #[default]
    None,
    /// Each sample averages the outputs under noise `η` and `−η`. Laplace
    /// noise is symmetric, so the estimator stays unbiased while the
    /// odd-order terms of the output cancel.
    Antithetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: usize,
    pub stream: RngStream,
    pub shards: usize,
    #[serde(default)]
    pub variance_reduction: VarianceReduction,
}

impl McConfig {
    pub fn new(samples: usize, master_seed: u64) -> Self {
        Self {
            samples,
            stream: RngStream::new(master_seed, 0),
            shards: 1,
            variance_reduction: VarianceReduction::None,
        }
    }

    pub fn shards(mut self, shards: usize) -> Self {
        self.shards = shards;
        self
    }

    pub fn antithetic(mut self) -> Self {
        self.variance_reduction = VarianceReduction::Antithetic;
        self
    }

    pub fn with_variance_reduction(mut self, vr: VarianceReduction) -> Self {
        self.variance_reduction = vr;
        self
    }

    pub fn stream(mut self, stream: RngStream) -> Self {
        self.stream = stream;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TapeMode {
    Plain,
    Record,
    Replay,
}

/// Randomness handed to a sampler for one sample (one arm of an antithetic pair).
pub struct Noise<'a> {
    noise: &'a mut ChaCha8Rng,
    aux: &'a mut ChaCha8Rng,
    tape: &'a mut Vec<f64>,
    mode: TapeMode,
    cursor: usize,
}

impl<'a> Noise<'a> {
    /// Unit Laplace draw; mirrored (`−η`) on the second antithetic arm.
    #[inline]
    pub fn unit_laplace(&mut self) -> f64 {
        match self.mode {
            TapeMode::Plain => unit_laplace(self.noise),
            TapeMode::Record => {
                let e = unit_laplace(self.noise);
                self.tape.push(e);
                e
            }
            TapeMode::Replay => {
                let e = self.tape[self.cursor];
                self.cursor += 1;
                -e
            }
        }
    }

    #[inline]
    pub fn laplace<T: Real>(&mut self, scale: T) -> T {
        scale * T::of(self.unit_laplace())
    }

    /// Uniform `[0, 1)` draw from the auxiliary stream; never mirrored.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.aux.gen::<f64>()
    }
}

/// Running mean / M2 (Welford) plus mean absolute error against the truth.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
    abs_err: f64,
}

impl Welford {
    #[inline]
    fn push(&mut self, v: f64, abs_err: f64) {
        self.count += 1;
        let d = v - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (v - self.mean);
        self.abs_err += abs_err;
    }

    fn merge(&mut self, o: &Welford) {
        if o.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *o;
            return;
        }
        let n = (self.count + o.count) as f64;
        let d = o.mean - self.mean;
        self.mean += d * o.count as f64 / n;
        self.m2 += o.m2 + d * d * self.count as f64 * o.count as f64 / n;
        self.count += o.count;
        self.abs_err += o.abs_err;
    }
}

/// Per-entity summary of one Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub samples: usize,
    pub mean: Vec<f64>,
    /// Sample standard deviation of the per-sample value.
    pub std_dev: Vec<f64>,
    /// `std_dev / √m`.
    pub std_error: Vec<f64>,
    /// Mean over samples (and antithetic arms) of `|P_i(x̃) − P_i(x)|`.
    pub mean_abs_error: Vec<f64>,
}

/// Runs `cfg.samples` samples of the per-entity output vector.
///
/// `make_sampler` is called once per block to build a sampler with its own
/// scratch buffers; the sampler writes one output vector per call.
pub fn run<T, S, F>(truth: &[T], cfg: &McConfig, make_sampler: F) -> Result<McSummary>
where
    T: Real,
    F: Fn() -> S + Sync,
    S: FnMut(&mut Noise<'_>, &mut [T]) -> Result<()>,
{
    if cfg.samples < 2 {
        return Err(invalid(format!("need at least 2 samples, got {}", cfg.samples)));
    }
    if cfg.shards == 0 {
        return Err(invalid("shard count must be at least 1"));
    }
    let n = truth.len();
    let truth64: Vec<f64> = truth.iter().map(|t| t.as_f64()).collect();
    let blocks = cfg.samples.div_ceil(BLOCK_SIZE);
    let shards = cfg.shards.min(blocks);

    let run_block = |b: usize| -> Result<Vec<Welford>> {
        let count = BLOCK_SIZE.min(cfg.samples - b * BLOCK_SIZE);
        let mut noise_rng = cfg.stream.child(2 * b as u64).rng();
        let mut aux_rng = cfg.stream.child(2 * b as u64 + 1).rng();
        let mut tape = Vec::new();
        let mut sampler = make_sampler();
        let mut stats = vec![Welford::default(); n];
        let mut arm_a = vec![T::zero(); n];
        let mut arm_b = vec![T::zero(); n];
        for _ in 0..count {
            match cfg.variance_reduction {
                VarianceReduction::None => {
                    let mut noise = Noise {
                        noise: &mut noise_rng,
                        aux: &mut aux_rng,
                        tape: &mut tape,
                        mode: TapeMode::Plain,
                        cursor: 0,
                    };
                    sampler(&mut noise, &mut arm_a)?;
                    for i in 0..n {
                        let v = arm_a[i].as_f64();
                        stats[i].push(v, (v - truth64[i]).abs());
                    }
                }
                VarianceReduction::Antithetic => {
                    tape.clear();
                    let mut noise = Noise {
                        noise: &mut noise_rng,
                        aux: &mut aux_rng,
                        tape: &mut tape,
                        mode: TapeMode::Record,
                        cursor: 0,
                    };
                    sampler(&mut noise, &mut arm_a)?;
                    let mut mirror = Noise {
                        noise: &mut noise_rng,
                        aux: &mut aux_rng,
                        tape: &mut tape,
                        mode: TapeMode::Replay,
                        cursor: 0,
                    };
                    sampler(&mut mirror, &mut arm_b)?;
                    for i in 0..n {
                        let (a, b) = (arm_a[i].as_f64(), arm_b[i].as_f64());
                        let err = 0.5 * ((a - truth64[i]).abs() + (b - truth64[i]).abs());
                        stats[i].push(0.5 * (a + b), err);
                    }
                }
            }
        }
        Ok(stats)
    };

    let mut per_block: Vec<Option<Result<Vec<Welford>>>> = (0..blocks).map(|_| None).collect();
    if shards == 1 {
        for (b, slot) in per_block.iter_mut().enumerate() {
            *slot = Some(run_block(b));
        }
    } else {
        let results: Vec<Vec<(usize, Result<Vec<Welford>>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..shards)
                .map(|s| {
                    let run_block = &run_block;
                    scope.spawn(move || {
                        (s..blocks)
                            .step_by(shards)
                            .map(|b| (b, run_block(b)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("Monte Carlo worker panicked"))
                .collect()
        });
        for (b, r) in results.into_iter().flatten() {
            per_block[b] = Some(r);
        }
    }

    let mut total = vec![Welford::default(); n];
    for block in per_block {
        let stats = block.expect("every block ran")?;
        for (t, s) in total.iter_mut().zip(&stats) {
            t.merge(s);
        }
    }

    let m = cfg.samples as f64;
    let std_dev: Vec<f64> = total
        .iter()
        .map(|w| (w.m2 / (w.count as f64 - 1.0)).max(0.0).sqrt())
        .collect();
    Ok(McSummary {
        samples: cfg.samples,
        mean: total.iter().map(|w| w.mean).collect(),
        std_error: std_dev.iter().map(|s| s / m.sqrt()).collect(),
        std_dev,
        mean_abs_error: total.iter().map(|w| w.abs_err / m).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_mean(cfg: McConfig) -> McSummary {
        run(&[0.0f64, 5.0], &cfg, || {
            |noise: &mut Noise<'_>, out: &mut [f64]| {
                out[0] = noise.laplace(2.0);
                out[1] = 5.0 + noise.laplace(1.0);
                Ok(())
            }
        })
        .unwrap()
    }

    #[test]
    fn summary_is_identical_across_shard_counts() {
        let base = McConfig::new(10_000, 11);
        let one = laplace_mean(base);
        for shards in [2, 3, 4, 16] {
            assert_eq!(one, laplace_mean(base.shards(shards)));
        }
    }

    #[test]
    fn antithetic_cancels_linear_outputs() {
        let s = laplace_mean(McConfig::new(5000, 3).antithetic());
        assert_eq!(s.mean[0], 0.0);
        assert!(s.std_dev[0] == 0.0);
        assert!((s.mean[1] - 5.0).abs() < 1e-12);
        // arms are still noisy: E|η| = λ
        assert!((s.mean_abs_error[0] - 2.0).abs() < 0.1);
    }

    #[test]
    fn welford_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.5).collect();
        let mut whole = Welford::default();
        xs.iter().for_each(|&x| whole.push(x, 0.0));
        let mut a = Welford::default();
        let mut b = Welford::default();
        xs[..313].iter().for_each(|&x| a.push(x, 0.0));
        xs[313..].iter().for_each(|&x| b.push(x, 0.0));
        a.merge(&b);
        assert!((a.mean - whole.mean).abs() < 1e-12);
        assert!((a.m2 - whole.m2).abs() < 1e-8 * whole.m2);
    }

    #[test]
    fn rejects_degenerate_configs() {
        let sampler = || |_: &mut Noise<'_>, _: &mut [f64]| Ok(());
        assert!(run(&[0.0], &McConfig::new(1, 0), sampler).is_err());
        assert!(run(&[0.0], &McConfig::new(10, 0).shards(0), sampler).is_err());
    }

    #[test]
    fn sampler_errors_propagate() {
        let r = run(&[0.0f64], &McConfig::new(10, 0), || {
            |_: &mut Noise<'_>, _: &mut [f64]| Err(crate::Error::InvalidData("boom".into()))
        });
        assert!(r.is_err());
    }
}
