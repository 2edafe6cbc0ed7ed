//! Variance and charge exponents derived from the fixed point:
//! `sigma^2(beta)`, `nu_star`, `gamma_star`, the path sums `Gamma_star_j`,
//! `t_star`, `kappa(alpha, beta)`, `tau(alpha)` and `c_bar`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::chain::MarginalDensity;
use crate::error::{invalid, Error, Result};
use crate::model::{beta_critical, theta_of_beta, ModelConfig};
use crate::quad;
use crate::rgflow::{conv_sums, fixed_point, power_conv, v_star, SpectralCoeffs, VStar};

/// Tolerance handed to the fixed-point solver by the observables.
pub const FP_TOL: f64 = 1e-13;

const SERIES_CUTOFF: f64 = 1e-14;
const J_CAP: usize = 200_000;

/// Everything derived from a converged fixed point.
#[derive(Debug, Clone, Serialize)]
pub struct StarData {
    pub b: usize,
    pub theta: f64,
    pub lam_star: SpectralCoeffs,
    pub vstar: VStar,
    pub nu_star: MarginalDensity,
    /// `gamma_star(q)` for `q >= 0` (symmetric).
    pub gamma_star: Vec<f64>,
}

impl StarData {
    pub fn new(b: usize, theta: f64, q_max: usize, grid_size: usize) -> Result<Self> {
        let fp = fixed_point(b, theta, q_max, FP_TOL)?;
        Self::from_lam(fp.lam, b, theta, grid_size)
    }

    pub fn from_lam(lam_star: SpectralCoeffs, b: usize, theta: f64, grid: usize) -> Result<Self> {
        let vstar = v_star(&lam_star, b, theta, grid, 1e-10)?;
        let nu_star = nu_star(&vstar, b);
        let gamma_star = gamma_star_weights(&lam_star, b);
        Ok(StarData { b, theta, lam_star, vstar, nu_star, gamma_star })
    }
}

/// `nu_star(dz) ∝ e^{-(b+1) v_star(z)} dz`.
pub fn nu_star(vs: &VStar, b: usize) -> MarginalDensity {
    let vmin = vs.v.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> =
        vs.v.values.iter().map(|v| (-(b as f64 + 1.0) * (v - vmin)).exp()).collect();
    let z = quad::mean(&w);
    MarginalDensity { rho: w.iter().map(|x| x / z).collect(), level: 0 }
}

/// `sigma^2(beta)` for the constant profile.
pub fn sigma2(config: &ModelConfig) -> Result<f64> {
    config.validate()?;
    sigma2_at(config.b, config.beta, config.q_max, config.grid_size)
}

pub fn sigma2_at(b: usize, beta: f64, q_max: usize, grid: usize) -> Result<f64> {
    if beta <= beta_critical(b)? {
        return Ok(1.0 / beta);
    }
    let star = StarData::new(b, theta_of_beta(beta), q_max, grid)?;
    Ok(sigma2_from_star(&star, beta))
}

pub fn sigma2_from_star(star: &StarData, beta: f64) -> f64 {
    let bf = star.b as f64;
    let ratio = quad::mean_prod(&star.nu_star.rho, &sq(&star.vstar.v1.values));
    1.0 / beta - bf / (beta * beta) * (bf + 1.0) / (bf - 1.0) * ratio
}

fn sq(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v * v).collect()
}

/// Double-integral form of `sigma^2`, divided by `int e^{-(b+1) v_star}`.
///
/// The `zeta` integral runs over `[-12 s, 12 s]` with `s = beta^{-1/2}`, on the
/// grid spacing so that `phi + zeta` stays on grid nodes.
pub fn sigma2_double_integral(star: &StarData, beta: f64) -> f64 {
    let bf = star.b as f64;
    let v = &star.vstar.v.values;
    let v1 = &star.vstar.v1.values;
    let n = v.len();
    let s = (1.0 / beta).sqrt();
    let m = (12.0 * s * n as f64).ceil() as i64;
    let h = 1.0 / n as f64;
    let c = bf / ((bf - 1.0) * beta);
    let norm = 1.0 / (2.0 * PI / beta).sqrt();
    let mut total = 0.0;
    for i in 0..n {
        let mut inner = 0.0;
        for mm in -m..=m {
            let zeta = mm as f64 * h;
            let j = (i as i64 + mm).rem_euclid(n as i64) as usize;
            let gauss = norm * (-0.5 * beta * zeta * zeta).exp();
            let a = zeta - c * (v1[j] - v1[i]);
            inner += a * a * (-bf * (v[i] + v[j])).exp() * gauss;
        }
        total += inner * h;
    }
    total /= n as f64;
    let denom = quad::mean(&v.iter().map(|x| (-(bf + 1.0) * x).exp()).collect::<Vec<_>>());
    total / denom
}

/// `tau(alpha)` governing the near-critical shift of `t_star`.
pub fn tau_exponent(alpha: f64, b: usize) -> Result<f64> {
    if alpha.abs() >= 0.5 {
        return Err(invalid(format!("|alpha| = {} must be < 1/2", alpha.abs())));
    }
    if b < 2 {
        return Err(invalid("b must be >= 2"));
    }
    let bf = b as f64;
    let pre = 2.0 * (bf.powi(3) - 1.0) / ((bf - 1.0) * (bf + 1.0).powi(3));
    if alpha == 0.0 {
        return Ok(0.0);
    }
    let br = (bf - 1.0) / (bf.powf(1.0 + 2.0 * alpha) - 1.0)
        + (bf - 1.0) / (bf.powf(1.0 - 2.0 * alpha) - 1.0)
        - 2.0;
    Ok(pre * br)
}

/// Coefficient of the critical log-correction to the covariance.
pub fn c_bar(b: usize) -> Result<f64> {
    let bc = beta_critical(b)?;
    let bf = b as f64;
    Ok(8.0 * PI * PI / (bc * bc) * bf * (bf.powi(3) - 1.0)
        / ((bf - 1.0).powi(3) * (bf + 1.0).powi(2)))
}

/// `A^2 = (b^3-1)/((b-1)^2 (b+1)^3)`: critical amplitude of `lam_k(1)^2 k`.
pub fn critical_amplitude_sq(b: usize) -> f64 {
    let bf = b as f64;
    (bf.powi(3) - 1.0) / ((bf - 1.0).powi(2) * (bf + 1.0).powi(3))
}

/// `gamma_star(q) = G^{(b-1)}_q(lam) / G^{(b)}_0(lam)` for `q >= 0`.
pub fn gamma_star_weights(lam_star: &SpectralCoeffs, b: usize) -> Vec<f64> {
    let g0 = conv_sums(lam_star, b)[0];
    let mut g: Vec<f64> = conv_sums(lam_star, b - 1).iter().map(|x| x / g0).collect();
    while g.len() > 1 && *g.last().unwrap() < 1e-300 {
        g.pop();
    }
    g
}

/// Two-sided `gamma_k(q)` for the charge recursion, centred at its midpoint.
pub(crate) fn gamma_two_sided(lam: &SpectralCoeffs, b: usize) -> Vec<f64> {
    let g0 = conv_sums(lam, b)[0];
    power_conv(lam, b - 1).iter().map(|x| x / g0).collect()
}

fn gamma_at(gamma: &[f64], q: i64) -> f64 {
    gamma.get(q.unsigned_abs() as usize).copied().unwrap_or(0.0)
}

/// Path sums `Gamma_star_j(p)` for `j = 1..=J`, `p = -qpath..=qpath`
/// (row `j-1`, column `p + qpath`).
pub fn gamma_star_path_sums(
    gamma_star: &[f64],
    theta: f64,
    alpha: f64,
    j_max: usize,
    qpath: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(j_max);
    let mut it = PathIter::new(gamma_star, theta, alpha, qpath)?;
    for _ in 0..j_max {
        out.push(it.next_row());
    }
    Ok(out)
}

/// Transfer-operator iteration behind the path sums.
struct PathIter<'a> {
    gamma: &'a [f64],
    qp: i64,
    weight: Vec<f64>,
    prev: Option<Vec<f64>>,
}

impl<'a> PathIter<'a> {
    fn new(gamma: &'a [f64], theta: f64, alpha: f64, qpath: usize) -> Result<Self> {
        if alpha.abs() >= 0.5 {
            return Err(invalid("|alpha| must be < 1/2"));
        }
        if qpath < 2 {
            return Err(invalid("qpath must be >= 2"));
        }
        let qp = qpath as i64;
        let lt = theta.ln();
        let weight = (-qp..=qp)
            .map(|q| {
                let x = q as f64 + alpha;
                (lt * (x * x - alpha * alpha)).exp()
            })
            .collect();
        Ok(PathIter { gamma, qp, weight, prev: None })
    }

    // Row j of Gamma_star_j(p); the first call returns j = 1.
    fn next_row(&mut self) -> Vec<f64> {
        let qp = self.qp;
        let idx = |q: i64| (q + qp) as usize;
        let row: Vec<f64> = match &self.prev {
            None => {
                let p1: Vec<f64> =
                    (-qp..=qp).map(|q| self.weight[idx(q)] * gamma_at(self.gamma, q)).collect();
                self.prev = Some(p1);
                return (-qp..=qp).map(|q| gamma_at(self.gamma, q)).collect();
            }
            Some(prev) => (-qp..=qp)
                .map(|p| {
                    let mut s = 0.0;
                    for q in -qp..=qp {
                        if q != 0 {
                            s += gamma_at(self.gamma, q - p) * prev[idx(q)];
                        }
                    }
                    self.weight[idx(p)] * s
                })
                .collect(),
        };
        self.prev = Some(row.clone());
        row
    }
}

/// Smallest path-state truncation whose boundary weight is below `1e-14`.
pub fn choose_qpath(gamma_star: &[f64], theta: f64, alpha: f64) -> usize {
    let total: f64 = gamma_star[0] + 2.0 * gamma_star[1..].iter().sum::<f64>();
    let mut qp = 8;
    while qp < 64 && path_tail(theta, alpha, qp) * total > SERIES_CUTOFF {
        qp += 1;
    }
    qp
}

// Weight gained by a path stepping just beyond the truncation.
fn path_tail(theta: f64, alpha: f64, qpath: usize) -> f64 {
    let x = qpath as f64 + 1.0 - alpha.abs();
    theta.powf(x * x - alpha * alpha)
}

/// `Gamma_star_j(0)` for `j = 1..J`, with `J` chosen adaptively.
pub fn gamma_series(gamma_star: &[f64], theta: f64, alpha: f64, qpath: usize) -> Result<Vec<f64>> {
    let total: f64 = gamma_star[0] + 2.0 * gamma_star[1..].iter().sum::<f64>();
    if path_tail(theta, alpha, qpath) * total > SERIES_CUTOFF {
        return Err(Error::Truncation(format!(
            "qpath = {qpath} too small; use qpath >= {}",
            choose_qpath(gamma_star, theta, alpha)
        )));
    }
    let mut it = PathIter::new(gamma_star, theta, alpha, qpath)?;
    let mut series = Vec::new();
    loop {
        let row = it.next_row();
        let g = row[qpath];
        series.push(g);
        let j = series.len();
        if j >= 3 && g < SERIES_CUTOFF {
            let r = g / series[j - 2];
            if r < 1.0 {
                break;
            }
        }
        if j >= J_CAP {
            return Err(Error::Truncation(format!(
                "path series not summable within {J_CAP} terms (alpha too close to 1/2?)"
            )));
        }
    }
    Ok(series)
}

fn series_value(series: &[f64], t: f64) -> (f64, f64) {
    let mut s = 0.0;
    let mut ds = 0.0;
    let inv = 1.0 / t;
    let mut p = inv;
    for (i, g) in series.iter().enumerate() {
        s += g * p;
        ds -= (i + 1) as f64 * g * p * inv;
        p *= inv;
    }
    (s, ds)
}

/// Root `t >= 1` of `sum_j Gamma_j t^{-j} = 1`.
///
/// When the series equals 1 at the lower bracket to within `1e-12` the bracket
/// itself is returned; this is the `alpha = 0` case.
pub fn t_star_solve(series: &[f64], tol: f64) -> Result<f64> {
    if series.is_empty() {
        return Err(invalid("empty path series"));
    }
    let lo0 = series[0].max(1.0);
    let (s_lo, _) = series_value(series, lo0);
    if s_lo < 1.0 - 1e-12 {
        return Err(Error::BracketFailure { t: lo0, sum: s_lo });
    }
    if s_lo <= 1.0 + 1e-12 {
        return Ok(lo0);
    }
    let mut hi = 2.0;
    while series_value(series, hi).0 > 1.0 {
        hi *= 2.0;
        if hi > 16.0 {
            return Err(Error::NumericalFailure("t_star above 16".into()));
        }
    }
    let mut lo = lo0;
    while hi - lo > tol.max(1e-15 * hi) {
        let mid = 0.5 * (lo + hi);
        if series_value(series, mid).0 > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..3 {
        let (s, ds) = series_value(series, t);
        let nt = t - (s - 1.0) / ds;
        if nt.is_finite() && nt >= lo0 {
            t = nt;
        }
    }
    Ok(t)
}

/// Charge exponents at one `(alpha, beta)`.
#[derive(Debug, Clone, Serialize)]
pub struct ChargeExponents {
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    pub t_star: f64,
    pub kappa: f64,
    pub tau: f64,
    /// `Gamma_star_j(0)` for `j = 1..J` (empty for `beta <= beta_c`).
    pub gamma_series: Vec<f64>,
}

pub fn kappa_exponent(alpha: f64, config: &ModelConfig) -> Result<ChargeExponents> {
    config.validate()?;
    let star = if config.is_supercritical() {
        Some(StarData::new(config.b, config.theta(), config.q_max, config.grid_size)?)
    } else {
        None
    };
    kappa_with_star(alpha, config.b, config.beta, star.as_ref())
}

/// `kappa` from a precomputed fixed point (`None` below criticality).
pub fn kappa_with_star(
    alpha: f64,
    b: usize,
    beta: f64,
    star: Option<&StarData>,
) -> Result<ChargeExponents> {
    let tau = tau_exponent(alpha, b)?;
    let bc = beta_critical(b)?;
    let theta = theta_of_beta(beta);
    let base = ChargeExponents {
        alpha,
        beta,
        theta,
        t_star: 1.0,
        kappa: 4.0 * bc * alpha * alpha / beta,
        tau,
        gamma_series: Vec::new(),
    };
    let Some(star) = star.filter(|_| b as f64 * theta > 1.0) else {
        return Ok(base);
    };
    let qp = choose_qpath(&star.gamma_star, theta, alpha);
    let series = gamma_series(&star.gamma_star, theta, alpha, qp)?;
    let t_star = t_star_solve(&series, 1e-15)?;
    let lb = (b as f64).ln();
    let kappa = 4.0 * (2.0 * PI * PI / (beta * lb)) * alpha * alpha - 4.0 / lb * t_star.ln();
    Ok(ChargeExponents { t_star, kappa, gamma_series: series, ..base })
}

/// Leading-order near-critical expansions.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Expansions {
    pub b: usize,
    pub beta: f64,
    pub beta_c: f64,
    pub sigma2_linear: f64,
}

impl Expansions {
    /// `4 beta_c alpha^2 / beta - (4/beta_c) tau(alpha) (beta - beta_c)`.
    pub fn kappa_linear(&self, alpha: f64) -> Result<f64> {
        let tau = tau_exponent(alpha, self.b)?;
        Ok(4.0 * self.beta_c * alpha * alpha / self.beta
            - 4.0 / self.beta_c * tau * (self.beta - self.beta_c))
    }
}

/// Slope of the linear `sigma^2` correction above `beta_c`.
pub fn sigma2_slope(b: usize) -> Result<f64> {
    let bc = beta_critical(b)?;
    let bf = b as f64;
    Ok(32.0 * PI.powi(4) / bc.powi(4) * bf * (bf.powi(3) - 1.0)
        / ((bf - 1.0).powi(3) * (bf + 1.0).powi(2)))
}

pub fn expansions(b: usize, beta: f64) -> Result<Expansions> {
    let bc = beta_critical(b)?;
    if beta < bc {
        return Err(invalid("expansions require beta >= beta_c"));
    }
    Ok(Expansions { b, beta, beta_c: bc, sigma2_linear: 1.0 / beta - sigma2_slope(b)? * (beta - bc) })
}
