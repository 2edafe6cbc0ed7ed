//! Exact top-down sampling of the tree-indexed chain with keyed random streams.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{MeasureSpec, ModelConfig};
use crate::rgflow::{FlowTrace, SpectralCoeffs};

const MAX_ATTEMPTS: u64 = 1_000_000;
const MAX_LEVEL: usize = 4095;
const MAX_LANE: u64 = 1 << 24;
/// Largest field sampled by [`sample_field`].
pub const MAX_LEAVES: usize = 1 << 24;

/// Random stream for `(seed, stream, level, lane)`.
///
/// Each key owns a disjoint window of `2^32` words of the ChaCha stream.
pub fn keyed_rng(seed: u64, stream: u64, level: usize, lane: u64) -> ChaCha8Rng {
    debug_assert!(level <= MAX_LEVEL && lane < MAX_LANE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos((((level as u128) << 24) | lane as u128) << 32);
    rng
}

/// Mean and standard error of a Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorResult {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl EstimatorResult {
    pub fn from_samples(xs: &[f64], seed: u64) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        EstimatorResult { mean, std_error: (var / n as f64).sqrt(), n_samples: n, seed }
    }

    /// `|mean - target|` in units of the standard error (0 when both vanish).
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.std_error
        }
    }
}

/// Pair estimators for a given merge level.
#[derive(Debug, Clone, Serialize)]
pub struct PairEstimate {
    pub k: usize,
    pub alpha: f64,
    pub covariance: EstimatorResult,
    pub charge_re: EstimatorResult,
    pub charge_im: EstimatorResult,
}

enum Level0 {
    Discrete { a: Vec<f64> },
    Continuous { measure: MeasureSpec, max: f64 },
}

/// Per-level data for the kernels `p_k(. | phi')`.
pub struct ChainSampler {
    n: usize,
    b: usize,
    /// `sd[k] = sqrt(sigma_k^2 / beta)`.
    sd: Vec<f64>,
    /// `lam_{k-1}` for `k = 1..=n` (index `k-1`).
    lam: Vec<SpectralCoeffs>,
    /// `sum_q lam_{k-1}(q)`, the maximum of the series at `z = 0`.
    s_max: Vec<f64>,
    level0: Level0,
}

impl ChainSampler {
    pub fn new(config: &ModelConfig, flow: &FlowTrace) -> Result<Self> {
        config.validate()?;
        if flow.n() != config.n {
            return Err(invalid("flow depth does not match config.n"));
        }
        if config.n > MAX_LEVEL {
            return Err(invalid(format!("sampling supports n <= {MAX_LEVEL}")));
        }
        let sd = config.sigma_sq.iter().map(|s| (s / config.beta).sqrt()).collect();
        let lam: Vec<SpectralCoeffs> = (0..config.n).map(|k| flow.lam(k).clone()).collect();
        // All coefficients are non-negative, so the series peaks at z = 0.
        let s_max = lam.iter().map(|l| l.two_sided().iter().sum()).collect();
        let level0 = match &config.measure {
            MeasureSpec::Dg => Level0::Discrete { a: vec![1.0] },
            m => Level0::Continuous {
                measure: m.clone(),
                max: m.density_max().ok_or_else(|| invalid("measure has no density"))?,
            },
        };
        Ok(ChainSampler { n: config.n, b: config.b, sd, lam, s_max, level0 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    // e^{-b (v(phi) - min v)} = (S(phi) / S(0))^b
    fn accept_prob(&self, k: usize, phi: f64) -> f64 {
        let r = self.lam[k - 1].series(phi) / self.s_max[k - 1];
        r.max(0.0).powi(self.b as i32)
    }

    /// One draw from `p_k(. | phi')`.
    pub fn sample_kernel<R: RngCore>(&self, k: usize, phi_prime: f64, rng: &mut R) -> Result<f64> {
        if k > self.n {
            return Err(invalid(format!("level {k} exceeds n = {}", self.n)));
        }
        let sd = self.sd[k];
        if k == 0 {
            return match &self.level0 {
                Level0::Discrete { a } => Ok(sample_discrete_gaussian(phi_prime, sd, a, rng)),
                Level0::Continuous { measure, max } => {
                    rejection(rng, phi_prime, sd, |x| measure.density(x).unwrap_or(0.0) / max)
                }
            };
        }
        rejection(rng, phi_prime, sd, |x| self.accept_prob(k, x))
    }

    /// Values `phi_n..phi_0` of one root-to-leaf path (index = level).
    pub fn sample_path(&self, seed: u64, stream: u64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n + 1];
        let mut parent = 0.0;
        for k in (0..=self.n).rev() {
            let mut rng = keyed_rng(seed, stream, k, 0);
            parent = self.sample_kernel(k, parent, &mut rng)?;
            out[k] = parent;
        }
        Ok(out)
    }

    /// `(phi_x, phi_y)` for a pair whose paths share levels `>= k`.
    pub fn sample_pair_values(&self, k: usize, seed: u64, stream: u64) -> Result<(f64, f64)> {
        if k > self.n + 1 {
            return Err(invalid(format!("merge level {k} exceeds n+1")));
        }
        let mut spine = 0.0;
        for l in (k..=self.n).rev() {
            let mut rng = keyed_rng(seed, stream, l, 0);
            spine = self.sample_kernel(l, spine, &mut rng)?;
        }
        if k == 0 {
            return Ok((spine, spine));
        }
        let branch = |lane: u64| -> Result<f64> {
            let mut x = spine;
            for l in (0..k).rev() {
                let mut rng = keyed_rng(seed, stream, l, lane);
                x = self.sample_kernel(l, x, &mut rng)?;
            }
            Ok(x)
        };
        Ok((branch(1)?, branch(2)?))
    }
}

fn rejection<R: RngCore, F: Fn(f64) -> f64>(
    rng: &mut R,
    center: f64,
    sd: f64,
    accept: F,
) -> Result<f64> {
    for _ in 0..MAX_ATTEMPTS {
        let z: f64 = rng.sample(StandardNormal);
        let x = center + sd * z;
        let u: f64 = rng.random();
        if u < accept(x) {
            return Ok(x);
        }
    }
    Err(Error::NumericalFailure(format!(
        "rejection sampler accepted nothing in {MAX_ATTEMPTS} proposals"
    )))
}

/// Inverse-CDF draw from `∝ a(|q|) e^{-(q - center)^2 / (2 sd^2)}` on the integers.
///
/// `a` lists `a(0), a(1), ...`; missing entries repeat the last one.
pub fn sample_discrete_gaussian<R: RngCore>(center: f64, sd: f64, a: &[f64], rng: &mut R) -> f64 {
    let half = (12.0 * sd).ceil() as i64 + 2;
    let c = center.round() as i64;
    let coef = |q: i64| a[(q.unsigned_abs() as usize).min(a.len() - 1)];
    let w: Vec<f64> = (c - half..=c + half)
        .map(|q| {
            let d = q as f64 - center;
            coef(q) * (-0.5 * d * d / (sd * sd)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, x) in w.iter().enumerate() {
        acc += x;
        if u < acc {
            return (c - half + i as i64) as f64;
        }
    }
    (c + half) as f64
}

/// Estimators of `<phi_x phi_y>` and `<e^{2 pi i alpha (phi_x - phi_y)}>` at merge level `k`.
pub fn sample_pair(
    config: &ModelConfig,
    flow: &FlowTrace,
    k: usize,
    alpha: f64,
    n_samples: usize,
    seed: u64,
) -> Result<PairEstimate> {
    if n_samples < 2 {
        return Err(invalid("need at least 2 samples"));
    }
    let s = ChainSampler::new(config, flow)?;
    let pairs: Vec<(f64, f64)> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| s.sample_pair_values(k, seed, i))
        .collect::<Result<_>>()?;
    let two_pi_a = 2.0 * std::f64::consts::PI * alpha;
    let cov: Vec<f64> = pairs.iter().map(|(x, y)| x * y).collect();
    let re: Vec<f64> = pairs.iter().map(|(x, y)| (two_pi_a * (x - y)).cos()).collect();
    let im: Vec<f64> = pairs.iter().map(|(x, y)| (two_pi_a * (x - y)).sin()).collect();
    Ok(PairEstimate {
        k,
        alpha,
        covariance: EstimatorResult::from_samples(&cov, seed),
        charge_re: EstimatorResult::from_samples(&re, seed),
        charge_im: EstimatorResult::from_samples(&im, seed),
    })
}

/// Full top-down sample of the `b^n` leaves, in leaf-index order.
pub fn sample_field(config: &ModelConfig, flow: &FlowTrace, seed: u64) -> Result<Vec<f64>> {
    sample_field_stream(config, flow, seed, 0)
}

/// As [`sample_field`], drawing from stream `stream` (one stream per field).
pub fn sample_field_stream(
    config: &ModelConfig,
    flow: &FlowTrace,
    seed: u64,
    stream: u64,
) -> Result<Vec<f64>> {
    let b = config.b;
    let leaves = (b as f64).powi(config.n as i32);
    if leaves > MAX_LEAVES as f64 {
        return Err(invalid(format!("b^n = {leaves} exceeds {MAX_LEAVES}")));
    }
    let s = ChainSampler::new(config, flow)?;
    let mut rng = keyed_rng(seed, stream, config.n, 0);
    let mut cur = vec![s.sample_kernel(config.n, 0.0, &mut rng)?];
    for k in (0..config.n).rev() {
        cur = (0..cur.len() * b)
            .into_par_iter()
            .map(|j| {
                let mut rng = keyed_rng(seed, stream, k, j as u64);
                s.sample_kernel(k, cur[j / b], &mut rng)
            })
            .collect::<Result<_>>()?;
    }
    Ok(cur)
}

pub fn write_field_csv<W: std::io::Write>(field: &[f64], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["leaf_index", "value"])?;
    for (i, v) in field.iter().enumerate() {
        wr.write_record([i.to_string(), format!("{v:.17e}")])?;
    }
    wr.flush()?;
    Ok(())
}
