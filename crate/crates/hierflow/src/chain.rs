//! Exact level-by-level evaluation of the block-spin chain: marginal
//! densities, the martingale covariance recursion and charge correlations.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{fourier_coeffs, MeasureSpec, ModelConfig};
use crate::observables::gamma_two_sided;
use crate::quad;
use crate::rgflow::{convolve, potential_from_coeffs, run_flow, FlowTrace, PeriodicFunction, SpectralCoeffs};

/// Grid density of a level variable on [0,1).
///
/// A point mass at 0 is stored as the value `N` at index 0 (unit integral).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalDensity {
    pub rho: Vec<f64>,
    pub level: usize,
}

impl MarginalDensity {
    pub fn point_mass(grid: usize, level: usize) -> Self {
        let mut rho = vec![0.0; grid];
        rho[0] = grid as f64;
        MarginalDensity { rho, level }
    }

    pub fn uniform(grid: usize, level: usize) -> Self {
        MarginalDensity { rho: vec![1.0; grid], level }
    }

    pub fn integral(&self) -> f64 {
        quad::mean(&self.rho)
    }

    pub fn expect(&self, f: &[f64]) -> f64 {
        quad::mean_prod(&self.rho, f)
    }

    pub fn tv_distance(&self, other: &MarginalDensity) -> f64 {
        0.5 * self.rho.iter().zip(&other.rho).map(|(a, b)| (a - b).abs()).sum::<f64>()
            / self.rho.len() as f64
    }
}

// rho = E * G[(rho_next / G[E])] for a kernel p(phi | phi') ∝ E(phi) N(phi'; phi, var).
fn propagate_with_weight(rho_next: &[f64], e: &[f64], var: f64) -> Result<Vec<f64>> {
    let n = e.len();
    let g = quad::wrapped_gaussian_row(n, var);
    let c = quad::circ_apply(&g, e);
    if c.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::NumericalFailure("kernel normalizer vanished".into()));
    }
    let ratio: Vec<f64> = rho_next.iter().zip(&c).map(|(r, c)| r / c).collect();
    let inner = quad::circ_apply(&g, &ratio);
    Ok(e.iter().zip(inner).map(|(a, b)| a * b).collect())
}

/// Density of `phi_k` from that of `phi_{k+1}`, for `k >= 1`.
///
/// The kernel is `∝ e^{-b v_{k-1}(phi)} N(phi_{k+1}; phi, sigma_k^2 / beta)`.
pub fn propagate_density(
    rho_next: &MarginalDensity,
    v_prev: &PeriodicFunction,
    sigma_k_sq: f64,
    beta: f64,
    b: usize,
) -> Result<MarginalDensity> {
    if rho_next.level == 0 {
        return Err(invalid("cannot propagate below level 0"));
    }
    if rho_next.rho.len() != v_prev.len() {
        return Err(invalid("grid mismatch between density and potential"));
    }
    let vmin = v_prev.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = v_prev.values.iter().map(|v| (-(b as f64) * (v - vmin)).exp()).collect();
    let rho = propagate_with_weight(&rho_next.rho, &e, sigma_k_sq / beta)?;
    Ok(MarginalDensity { rho, level: rho_next.level - 1 })
}

/// Density of `phi_0 mod 1` from that of `phi_1`; the kernel weight is `nu`.
///
/// For the discrete Gaussian `phi_0` is an integer, so the result is the point mass at 0.
pub fn propagate_density_level0(
    rho_1: &MarginalDensity,
    measure: &MeasureSpec,
    sigma0_sq: f64,
    beta: f64,
) -> Result<MarginalDensity> {
    let n = rho_1.rho.len();
    match measure {
        MeasureSpec::Dg => Ok(MarginalDensity::point_mass(n, 0)),
        m => {
            let e: Vec<f64> =
                (0..n).map(|j| m.density(j as f64 / n as f64).unwrap_or(0.0)).collect();
            let rho = propagate_with_weight(&rho_1.rho, &e, sigma0_sq / beta)?;
            Ok(MarginalDensity { rho, level: 0 })
        }
    }
}

type Potential = (PeriodicFunction, PeriodicFunction, PeriodicFunction);

fn level_potential(flow: &FlowTrace, k: usize, grid: usize) -> Result<Potential> {
    potential_from_coeffs(flow.lam(k), grid)
}

/// Charge weights `w_k(q) = exp(log_scale) * w[q - qmin]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChargeWeights {
    pub alpha: f64,
    pub level: usize,
    pub qmin: i64,
    pub w: Vec<f64>,
    pub log_scale: f64,
}

impl ChargeWeights {
    /// `w_1(q) = (a(q)/a(0)) theta_0^{(q+alpha)^2}`.
    pub fn initial(config: &ModelConfig, lam0: &SpectralCoeffs, alpha: f64) -> Result<Self> {
        let qm = lam0.q() + 1;
        let a = fourier_coeffs(&config.measure, qm)?;
        let lt = config.theta_k(0).ln();
        let qmin = -(qm as i64);
        let w: Vec<f64> = (qmin..=qm as i64)
            .map(|q| {
                let x = q as f64 + alpha;
                a[q.unsigned_abs() as usize] / a[0] * (lt * x * x).exp()
            })
            .collect();
        let mut cw = ChargeWeights { alpha, level: 1, qmin, w, log_scale: 0.0 };
        cw.renormalize()?;
        Ok(cw)
    }

    /// `w_k(q)` including the scale factor.
    pub fn get(&self, q: i64) -> f64 {
        let i = q - self.qmin;
        if i < 0 || i as usize >= self.w.len() {
            return 0.0;
        }
        self.w[i as usize] * self.log_scale.exp()
    }

    /// `log w_k(q)`.
    pub fn log_get(&self, q: i64) -> f64 {
        let i = q - self.qmin;
        if i < 0 || i as usize >= self.w.len() {
            return f64::NEG_INFINITY;
        }
        self.w[i as usize].ln() + self.log_scale
    }

    fn renormalize(&mut self) -> Result<()> {
        let m = self.w.iter().cloned().fold(0.0, f64::max);
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::NumericalFailure("charge weights vanished".into()));
        }
        for x in &mut self.w {
            *x /= m;
        }
        self.log_scale += m.ln();
        let cut = 1e-17;
        let first = self.w.iter().position(|x| *x > cut).unwrap();
        let last = self.w.iter().rposition(|x| *x > cut).unwrap();
        self.w = self.w[first..=last].to_vec();
        self.qmin += first as i64;
        Ok(())
    }

    /// `|sum_q w(q) e^{2 pi i q z}|^2` on the grid (scale factor excluded).
    fn modulus_sq_on_grid(&self, n: usize) -> Vec<f64> {
        let (ct, st) = quad::trig_table(n);
        (0..n)
            .map(|j| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, w) in self.w.iter().enumerate() {
                    let q = self.qmin + i as i64;
                    let m = ((q * j as i64).rem_euclid(n as i64)) as usize;
                    re += w * ct[m];
                    im += w * st[m];
                }
                re * re + im * im
            })
            .collect()
    }
}

/// `w_{k+1}(q) = theta_k^{(q+alpha)^2} sum_l gamma_k(q-l) w_k(l)`, with
/// `gamma_k` built from `lam_{k-1}`.
pub fn charge_weights_step(
    w: &ChargeWeights,
    lam_prev: &SpectralCoeffs,
    theta_k: f64,
    b: usize,
) -> Result<ChargeWeights> {
    let gamma = gamma_two_sided(lam_prev, b);
    let qg = ((gamma.len() - 1) / 2) as i64;
    let conv = convolve(&gamma, &w.w);
    let qmin = w.qmin - qg;
    let lt = theta_k.ln();
    let vals: Vec<f64> = conv
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let x = (qmin + i as i64) as f64 + w.alpha;
            c * (lt * x * x).exp()
        })
        .collect();
    let mut out = ChargeWeights {
        alpha: w.alpha,
        level: w.level + 1,
        qmin,
        w: vals,
        log_scale: w.log_scale,
    };
    out.renormalize()?;
    Ok(out)
}

/// Per-level record of the exact chain.
#[derive(Debug, Clone, Serialize)]
pub struct ChainLevel {
    pub k: usize,
    /// `E(M_k^2)`, equal to `<phi_x phi_y>` when `x, y` first merge at level k.
    pub em2: f64,
    /// `E(M_k^2) - E(M_{k+1}^2)`.
    pub increment: f64,
    /// `log w_k(0)` (absent without a charge or at k = 0).
    pub log_w0: Option<f64>,
    /// `w_{k+1}(0) / w_k(0)`.
    pub w0_ratio: Option<f64>,
    /// Total variation distance from `rho_k` to the reference density.
    pub tv_to_nu_star: Option<f64>,
    /// `<e^{2 pi i alpha (phi_x - phi_y)}>` for pairs merging at level k.
    pub charge_corr: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainProfile {
    pub alpha: Option<f64>,
    /// Indexed by `k = 0..=n+1`.
    pub levels: Vec<ChainLevel>,
    /// `f_{n+1}(0)` as a logarithm (present with a charge).
    pub log_single_charge: Option<f64>,
}

impl ChainProfile {
    pub fn em2(&self, k: usize) -> f64 {
        self.levels[k].em2
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "k",
            "EM2",
            "increment",
            "w0",
            "w0_ratio",
            "tv_to_nu_star",
            "log_w0",
            "charge_corr",
        ])?;
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.17e}")).unwrap_or_default();
        for l in &self.levels {
            wr.write_record([
                l.k.to_string(),
                format!("{:.17e}", l.em2),
                format!("{:.17e}", l.increment),
                opt(l.log_w0.map(f64::exp)),
                opt(l.w0_ratio),
                opt(l.tv_to_nu_star),
                opt(l.log_w0),
                opt(l.charge_corr),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Optional extras for [`chain_profile`].
#[derive(Debug, Clone, Default)]
pub struct ChainOptions<'a> {
    pub alpha: Option<f64>,
    pub reference: Option<&'a MarginalDensity>,
}

/// Full downward pass over the chain for the given configuration.
pub fn chain_profile(config: &ModelConfig, opts: &ChainOptions) -> Result<ChainProfile> {
    let flow = run_flow(config)?;
    chain_profile_with_flow(config, &flow, opts)
}

pub fn chain_profile_with_flow(
    config: &ModelConfig,
    flow: &FlowTrace,
    opts: &ChainOptions,
) -> Result<ChainProfile> {
    config.validate()?;
    let n = config.n;
    let grid = config.grid_size;
    let beta = config.beta;
    let b = config.b;
    let bf = b as f64;
    if let Some(r) = opts.reference {
        if r.rho.len() != grid {
            return Err(invalid("reference density grid mismatch"));
        }
    }

    // Charge weights w_1..w_{n+1}, stored upward.
    let weights = match opts.alpha {
        Some(alpha) => {
            if !alpha.is_finite() {
                return Err(invalid("alpha must be finite"));
            }
            let mut ws = Vec::with_capacity(n + 1);
            ws.push(ChargeWeights::initial(config, flow.lam(0), alpha)?);
            for k in 1..=n {
                let next = charge_weights_step(&ws[k - 1], flow.lam(k - 1), config.theta_k(k), b)?;
                ws.push(next);
            }
            Some(ws)
        }
        None => None,
    };
    let w_at = |k: usize| weights.as_ref().and_then(|ws| ws.get(k.wrapping_sub(1)));

    // s_k for k = 0..=n+1.
    let mut s = vec![0.0; n + 2];
    for k in 0..=n {
        s[k + 1] = s[k] / bf + config.sigma_sq[k];
    }

    let mut levels: Vec<ChainLevel> = (0..=n + 1)
        .map(|k| ChainLevel {
            k,
            em2: 0.0,
            increment: 0.0,
            log_w0: None,
            w0_ratio: None,
            tv_to_nu_star: None,
            charge_corr: None,
        })
        .collect();

    let mut rho_next = MarginalDensity::point_mass(grid, n + 1);
    let mut pot_k = level_potential(flow, n, grid)?;
    let mut em2 = 0.0;

    for k in (0..=n).rev() {
        let (_, v1k, v2k) = &pot_k;
        let sig = config.sigma_sq[k];
        let t1 = {
            let f: Vec<f64> =
                v1k.values.iter().zip(&v2k.values).map(|(a, c)| a * a - c).collect();
            rho_next.expect(&f)
        };
        let t3 = rho_next.expect(&v1k.values.iter().map(|a| a * a).collect::<Vec<_>>());
        let (t2, pot_prev, rho_k) = if k >= 1 {
            let pot_prev = level_potential(flow, k - 1, grid)?;
            let rho_k = propagate_density(&rho_next, &pot_prev.0, sig, beta, b)?;
            let t2 = rho_k.expect(&pot_prev.1.values.iter().map(|a| a * a).collect::<Vec<_>>());
            (t2, Some(pot_prev), Some(rho_k))
        } else {
            (0.0, None, None)
        };
        let inc = sig / beta
            + sig / (beta * beta) * (sig + 2.0 * s[k] / bf) * t1
            + (s[k] * s[k] * t2 - s[k + 1] * s[k + 1] * t3) / (beta * beta);
        em2 += inc;
        levels[k].em2 = em2;
        levels[k].increment = inc;

        if let (Some(rho_k), Some(pot_prev)) = (&rho_k, &pot_prev) {
            if let Some(r) = opts.reference {
                levels[k].tv_to_nu_star = Some(rho_k.tv_distance(r));
            }
            if let Some(wk) = w_at(k) {
                // f_k uses lam_{k-1}, whose series on the grid is e^{-v_{k-1}}.
                let m2 = wk.modulus_sq_on_grid(grid);
                let f2: Vec<f64> = m2
                    .iter()
                    .zip(&pot_prev.0.values)
                    .map(|(m, v)| m * (2.0 * (v + wk.log_scale)).exp())
                    .collect();
                levels[k].charge_corr = Some(rho_k.expect(&f2));
            }
        }
        if k == 0 && weights.is_some() {
            levels[0].charge_corr = Some(1.0);
        }
        if let Some(rk) = rho_k {
            rho_next = rk;
        }
        if let Some(pp) = pot_prev {
            pot_k = pp;
        }
    }

    let mut log_single = None;
    if let Some(ws) = &weights {
        for k in 1..=n + 1 {
            levels[k].log_w0 = Some(ws[k - 1].log_get(0));
        }
        let wt = &ws[n];
        let s_top: f64 = flow.lam(n).two_sided().iter().sum();
        let sum_w: f64 = wt.w.iter().sum();
        let ls = sum_w.ln() + wt.log_scale - s_top.ln();
        log_single = Some(ls);
        levels[n + 1].charge_corr = Some((2.0 * ls).exp());
        for k in 1..=n {
            if let (Some(a), Some(c)) = (levels[k].log_w0, levels[k + 1].log_w0) {
                levels[k].w0_ratio = Some((c - a).exp());
            }
        }
    }

    Ok(ChainProfile { alpha: opts.alpha, levels, log_single_charge: log_single })
}

/// `<phi_x phi_y>` for a pair first merging at level `k` (`E(M_k^2)`).
pub fn covariance_exact(config: &ModelConfig, k: usize) -> Result<f64> {
    if k > config.n + 1 {
        return Err(invalid(format!("level {k} exceeds n+1 = {}", config.n + 1)));
    }
    Ok(chain_profile(config, &ChainOptions::default())?.em2(k))
}

/// `<e^{2 pi i alpha (phi_x - phi_y)}>` for a pair first merging at level `k`.
pub fn charge_correlation_exact(config: &ModelConfig, alpha: f64, k: usize) -> Result<f64> {
    if k > config.n + 1 {
        return Err(invalid(format!("level {k} exceeds n+1 = {}", config.n + 1)));
    }
    let p = chain_profile(config, &ChainOptions { alpha: Some(alpha), reference: None })?;
    p.levels[k].charge_corr.ok_or_else(|| Error::Inconsistency("missing charge value".into()))
}

/// `<e^{2 pi i alpha phi_x}> = f_{n+1}(0)`.
pub fn single_charge_exact(config: &ModelConfig, alpha: f64) -> Result<f64> {
    let p = chain_profile(config, &ChainOptions { alpha: Some(alpha), reference: None })?;
    Ok(p.log_single_charge.unwrap().exp())
}
