//! Brute-force references at desk scale: dense hierarchical Laplacians, the
//! block-projector decomposition of the Green function, exhaustive Gibbs sums
//! for small DG systems, and direct quadrature of the potential recursion.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::model::{branch_depth, build_profile, leaf_count, LaplacianProfile, MeasureSpec, ModelConfig};
use crate::quad;
use crate::rgflow::PeriodicFunction;

/// Largest matrix built by [`build_laplacian`].
pub const MAX_SITES: usize = 4096;
/// Largest state space enumerated by [`gibbs_brute`].
pub const MAX_STATES: f64 = 1e8;

fn check_size(b: usize, n: usize) -> Result<usize> {
    let size = leaf_count(b, n)?;
    if size > MAX_SITES {
        return Err(invalid(format!("b^n = {size} exceeds {MAX_SITES}")));
    }
    Ok(size)
}

/// Dense `Delta_n`: entry `(x, y)` is `sum_{j >= k(x,y)} c_j` off the diagonal and
/// `-c_{n+1} - sum_k c_k (b^k - 1)` on it.
pub fn build_laplacian(profile: &LaplacianProfile, b: usize, n: usize) -> Result<DMatrix<f64>> {
    if profile.b != b || profile.n() != n {
        return Err(invalid("profile does not match (b, n)"));
    }
    let size = check_size(b, n)?;
    // cum[k] = sum_{j=k}^{n} c_j
    let mut cum = vec![0.0; n + 2];
    for k in (1..=n).rev() {
        cum[k] = cum[k + 1] + profile.c(k);
    }
    let bf = b as f64;
    let diag = -profile.c(n + 1)
        - (1..=n).map(|k| profile.c(k) * (bf.powi(k as i32) - 1.0)).sum::<f64>();
    let mut m = DMatrix::zeros(size, size);
    for x in 0..size {
        for y in 0..size {
            m[(x, y)] = if x == y { diag } else { cum[branch_depth(x, y, b, n)?] };
        }
    }
    Ok(m)
}

/// Block-averaging projector `Q_k` on `b^n` leaves.
pub fn block_projector(b: usize, n: usize, k: usize) -> Result<DMatrix<f64>> {
    let size = check_size(b, n)?;
    if k > n {
        return Err(invalid("projector level exceeds n"));
    }
    let w = (b as f64).powi(-(k as i32));
    let blk = leaf_count(b, k)?;
    Ok(DMatrix::from_fn(size, size, |x, y| if x / blk == y / blk { w } else { 0.0 }))
}

/// Max entrywise gap between `(-Delta_n)^{-1}` and `sum_k sigma_k^2 b^k Q_k`.
pub fn verify_decomposition(profile: &LaplacianProfile, b: usize, n: usize) -> Result<f64> {
    let lap = build_laplacian(profile, b, n)?;
    let inv = (-lap)
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure("-Delta is singular".into()))?;
    let sig = profile.to_sigma_sq();
    let mut rhs = DMatrix::zeros(inv.nrows(), inv.ncols());
    for (k, s) in sig.iter().enumerate() {
        rhs += block_projector(b, n, k)? * (s * (b as f64).powi(k as i32));
    }
    Ok((inv - rhs).amax())
}

/// Observable `(x, y, alpha)` for [`gibbs_brute`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairObservable {
    pub x: usize,
    pub y: usize,
    pub alpha: f64,
}

/// Exact DG expectations on a truncated state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsResult {
    pub q_site: i64,
    pub observables: Vec<PairObservable>,
    /// `<phi_x phi_y>` per observable.
    pub covariance: Vec<f64>,
    /// `<cos 2 pi alpha (phi_x - phi_y)>` per observable.
    pub charge: Vec<f64>,
    /// `max_x |<phi_x>|`.
    pub max_abs_mean: f64,
    /// Largest change of any reported value when `q_site` drops by one.
    pub truncation_sensitivity: f64,
}

#[derive(Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    fn merge(&mut self, other: &Kahan) {
        self.add(other.sum);
        self.add(-other.c);
    }
}

struct Sums {
    z: Kahan,
    cov: Vec<Kahan>,
    charge: Vec<Kahan>,
    mean: Vec<Kahan>,
}

fn enumerate(
    lap: &DMatrix<f64>,
    beta: f64,
    q: i64,
    obs: &[PairObservable],
) -> (f64, Vec<f64>, Vec<f64>, f64) {
    let size = lap.nrows();
    let width = (2 * q + 1) as usize;
    let partial: Vec<Sums> = (-q..=q)
        .into_par_iter()
        .map(|first| {
            let mut s = Sums {
                z: Kahan::default(),
                cov: vec![Kahan::default(); obs.len()],
                charge: vec![Kahan::default(); obs.len()],
                mean: vec![Kahan::default(); size],
            };
            let rest = width.pow((size - 1) as u32);
            let mut phi = vec![0.0; size];
            phi[0] = first as f64;
            for idx in 0..rest {
                let mut r = idx;
                for p in phi.iter_mut().skip(1) {
                    *p = (r % width) as f64 - q as f64;
                    r /= width;
                }
                let mut quad_form = 0.0;
                for x in 0..size {
                    let mut row = 0.0;
                    for y in 0..size {
                        row += lap[(x, y)] * phi[y];
                    }
                    quad_form += phi[x] * row;
                }
                let w = (0.5 * beta * quad_form).exp();
                s.z.add(w);
                for (i, o) in obs.iter().enumerate() {
                    s.cov[i].add(w * phi[o.x] * phi[o.y]);
                    s.charge[i].add(w * (2.0 * PI * o.alpha * (phi[o.x] - phi[o.y])).cos());
                }
                for (x, m) in s.mean.iter_mut().enumerate() {
                    m.add(w * phi[x]);
                }
            }
            s
        })
        .collect();
    let mut tot = Sums {
        z: Kahan::default(),
        cov: vec![Kahan::default(); obs.len()],
        charge: vec![Kahan::default(); obs.len()],
        mean: vec![Kahan::default(); size],
    };
    for p in &partial {
        tot.z.merge(&p.z);
        for i in 0..obs.len() {
            tot.cov[i].merge(&p.cov[i]);
            tot.charge[i].merge(&p.charge[i]);
        }
        for x in 0..size {
            tot.mean[x].merge(&p.mean[x]);
        }
    }
    let z = tot.z.sum;
    let cov = tot.cov.iter().map(|k| k.sum / z).collect();
    let charge = tot.charge.iter().map(|k| k.sum / z).collect();
    let mean = tot.mean.iter().map(|k| (k.sum / z).abs()).fold(0.0, f64::max);
    (z, cov, charge, mean)
}

/// Exhaustive DG Gibbs sums over `{-q_site..q_site}^{b^n}`.
pub fn gibbs_brute(
    config: &ModelConfig,
    q_site: i64,
    observables: &[PairObservable],
) -> Result<GibbsResult> {
    if config.measure != MeasureSpec::Dg {
        return Err(invalid("gibbs_brute supports the DG measure only"));
    }
    if q_site < 1 {
        return Err(invalid("q_site must be >= 1"));
    }
    let size = leaf_count(config.b, config.n)?;
    let states = ((2 * q_site + 1) as f64).powi(size as i32);
    if states > MAX_STATES {
        return Err(invalid(format!("{states:.3e} states exceed {MAX_STATES:.0e}")));
    }
    for o in observables {
        if o.x >= size || o.y >= size {
            return Err(invalid("observable site out of range"));
        }
    }
    let profile = build_profile(config)?;
    let lap = build_laplacian(&profile, config.b, config.n)?;
    let (_, cov, charge, mean) = enumerate(&lap, config.beta, q_site, observables);
    let (_, cov1, charge1, _) = enumerate(&lap, config.beta, q_site - 1, observables);
    let sens = cov
        .iter()
        .zip(&cov1)
        .chain(charge.iter().zip(&charge1))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(GibbsResult {
        q_site,
        observables: observables.to_vec(),
        covariance: cov,
        charge,
        max_abs_mean: mean,
        truncation_sensitivity: sens,
    })
}

/// Cache key: SHA-256 of the serialized `(config, q_site, observables)`.
pub fn cache_key(config: &ModelConfig, q_site: i64, observables: &[PairObservable]) -> Result<String> {
    let payload = serde_json::to_string(&(config, q_site, observables))?;
    let digest = Sha256::digest(payload.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// [`gibbs_brute`] with results stored as JSON under `cache_dir`.
pub fn gibbs_brute_cached(
    config: &ModelConfig,
    q_site: i64,
    observables: &[PairObservable],
    cache_dir: &Path,
) -> Result<GibbsResult> {
    let key = cache_key(config, q_site, observables)?;
    let path = cache_dir.join(format!("gibbs-{key}.json"));
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(r) = serde_json::from_str::<GibbsResult>(&text) {
            return Ok(r);
        }
    }
    let r = gibbs_brute(config, q_site, observables)?;
    std::fs::create_dir_all(cache_dir)?;
    std::fs::write(&path, serde_json::to_string_pretty(&r)?)?;
    Ok(r)
}

/// `v_{k+1} = -log int e^{-b v_k(z + zeta)} mu_{sigma^2/beta}(d zeta)` on the grid,
/// shifted so that its minimum is 0.
pub fn potential_recursion_direct(
    v_prev: &PeriodicFunction,
    sigma_sq: f64,
    beta: f64,
    b: usize,
) -> PeriodicFunction {
    let n = v_prev.len();
    let vmin = v_prev.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = v_prev.values.iter().map(|v| (-(b as f64) * (v - vmin)).exp()).collect();
    let g = quad::wrapped_gaussian_row(n, sigma_sq / beta);
    let conv = quad::circ_apply(&g, &e);
    let v: Vec<f64> = conv.iter().map(|x| -x.ln()).collect();
    let m = v.iter().cloned().fold(f64::INFINITY, f64::min);
    PeriodicFunction { values: v.iter().map(|x| x - m).collect() }
}

/// Cosine coefficients of `e^{-v}` normalized to a unit zero mode, for `q = 0..=q_max`.
pub fn coeffs_from_potential(v: &PeriodicFunction, q_max: usize) -> Vec<f64> {
    let n = v.len();
    let e: Vec<f64> = v.values.iter().map(|x| (-x).exp()).collect();
    let (ct, _) = quad::trig_table(n);
    let raw: Vec<f64> = (0..=q_max)
        .map(|q| e.iter().enumerate().map(|(j, x)| x * ct[(q * j) % n]).sum::<f64>() / n as f64)
        .collect();
    raw.iter().map(|x| x / raw[0]).collect()
}
