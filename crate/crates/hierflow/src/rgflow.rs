//! Fourier-coefficient renormalization-group flow, potentials and the
//! supercritical fixed point.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{fourier_coeffs, ModelConfig, DROP_THRESHOLD, EXTEND_THRESHOLD, Q_MAX_HARD};
use crate::quad;

/// Normalized symmetric coefficients `lam(0..=Q)` with `lam(0) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralCoeffs {
    pub lam: Vec<f64>,
    /// Largest relative mode discarded by the hard cap (0 when nothing was cut).
    pub tail: f64,
}

impl SpectralCoeffs {
    pub fn delta() -> Self {
        SpectralCoeffs { lam: vec![1.0], tail: 0.0 }
    }

    /// Builds from raw values, normalizing by `lam[0]` and trimming negligible modes.
    pub fn from_unnormalized(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() || !(raw[0] > 0.0) {
            return Err(Error::InvalidMeasure("zero mode must be positive".into()));
        }
        let z = raw[0];
        let mut lam: Vec<f64> = raw.iter().map(|x| x / z).collect();
        let mut tail = 0.0;
        if lam.len() > Q_MAX_HARD + 1 {
            tail = lam[Q_MAX_HARD + 1..].iter().cloned().fold(0.0, f64::max);
            lam.truncate(Q_MAX_HARD + 1);
        }
        while lam.len() > 1 && *lam.last().unwrap() < DROP_THRESHOLD {
            lam.pop();
        }
        Ok(SpectralCoeffs { lam, tail })
    }

    pub fn q(&self) -> usize {
        self.lam.len() - 1
    }

    /// `lam(q)` for any integer q, zero beyond the truncation.
    pub fn get(&self, q: i64) -> f64 {
        self.lam.get(q.unsigned_abs() as usize).copied().unwrap_or(0.0)
    }

    pub fn lam1(&self) -> f64 {
        self.get(1)
    }

    pub fn rho(&self) -> f64 {
        self.get(2)
    }

    /// `sup_{q>=0} lam(q+1)/lam(q)`.
    pub fn sup_ratio(&self) -> f64 {
        let mut c: f64 = 0.0;
        for q in 0..self.lam.len() - 1 {
            c = c.max(self.lam[q + 1] / self.lam[q]);
        }
        c
    }

    pub fn is_trivial(&self) -> bool {
        self.lam.len() == 1
    }

    /// Two-sided vector `lam(-Q..=Q)`.
    pub fn two_sided(&self) -> Vec<f64> {
        let q = self.q();
        (0..=2 * q).map(|i| self.lam[(i as i64 - q as i64).unsigned_abs() as usize]).collect()
    }

    /// `sum_q lam(q) e^{2 pi i q z}` at a single point.
    pub fn series(&self, z: f64) -> f64 {
        let mut s = 1.0;
        for (q, l) in self.lam.iter().enumerate().skip(1) {
            s += 2.0 * l * (2.0 * PI * q as f64 * z).cos();
        }
        s
    }
}

/// Full linear convolution of two-sided sequences centred at their midpoints.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// `m`-fold self-convolution of `lam` as a two-sided sequence centred at its midpoint.
pub fn power_conv(lam: &SpectralCoeffs, m: usize) -> Vec<f64> {
    let base = lam.two_sided();
    let mut acc = vec![1.0];
    for _ in 0..m {
        acc = convolve(&acc, &base);
    }
    acc
}

/// `G^{(m)}_q(lam)` for `q >= 0`.
pub fn conv_sums(lam: &SpectralCoeffs, m: usize) -> Vec<f64> {
    let full = power_conv(lam, m);
    let c = (full.len() - 1) / 2;
    full[c..].to_vec()
}

/// One renormalization step; returns the new coefficients and `log G_0(lam)`.
pub fn rg_step(lam: &SpectralCoeffs, theta_k: f64, b: usize) -> Result<(SpectralCoeffs, f64)> {
    if !(theta_k > 0.0 && theta_k < 1.0) {
        return Err(invalid(format!("theta_k = {theta_k} outside (0,1)")));
    }
    if b < 2 {
        return Err(invalid("b must be >= 2"));
    }
    let g = conv_sums(lam, b);
    let g0 = g[0];
    if !(g0.is_finite() && g0 > 0.0) {
        return Err(Error::NumericalFailure(format!("convolution zero mode = {g0}")));
    }
    let lt = theta_k.ln();
    let raw: Vec<f64> =
        g.iter().enumerate().map(|(q, x)| x * (lt * (q * q) as f64).exp()).collect();
    Ok((SpectralCoeffs::from_unnormalized(&raw)?, g0.ln()))
}

/// `lam_0(q) = (a(q)/a(0)) theta_0^{q^2}` with the truncation auto-extended.
pub fn init_coeffs(config: &ModelConfig) -> Result<SpectralCoeffs> {
    seed_coeffs(&config.measure, config.theta_k(0), config.q_max)
}

pub fn seed_coeffs(
    measure: &crate::model::MeasureSpec,
    theta0: f64,
    q_max: usize,
) -> Result<SpectralCoeffs> {
    let a = fourier_coeffs(measure, Q_MAX_HARD + 1)?;
    if !(a[0] > 0.0) {
        return Err(Error::InvalidMeasure("a(0) = 0".into()));
    }
    let lt = theta0.ln();
    let val = |q: usize| a[q] / a[0] * (lt * (q * q) as f64).exp();
    let mut qm = q_max.min(Q_MAX_HARD);
    while qm < Q_MAX_HARD && val(qm) > EXTEND_THRESHOLD {
        qm += 1;
    }
    let raw: Vec<f64> = (0..=qm).map(val).collect();
    let mut s = SpectralCoeffs::from_unnormalized(&raw)?;
    if qm == Q_MAX_HARD {
        s.tail = s.tail.max(val(Q_MAX_HARD + 1));
    }
    Ok(s)
}

/// Per-level record of the flow.
#[derive(Debug, Clone, Serialize)]
pub struct FlowLevel {
    pub k: usize,
    pub lam: SpectralCoeffs,
    pub c_k: f64,
    /// `log a_k(0)`.
    pub log_a0: f64,
    /// `log G_0(lam_k)`, the normalizer increment towards level k+1.
    pub log_g0: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowTrace {
    pub b: usize,
    pub levels: Vec<FlowLevel>,
}

impl FlowTrace {
    pub fn lam(&self, k: usize) -> &SpectralCoeffs {
        &self.levels[k].lam
    }

    pub fn n(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["k", "lam1", "rho", "c_k", "log_a0", "lam1_sqrtk"])?;
        for l in &self.levels {
            let lam1 = l.lam.lam1();
            wr.write_record([
                l.k.to_string(),
                format!("{lam1:.17e}"),
                format!("{:.17e}", l.lam.rho()),
                format!("{:.17e}", l.c_k),
                format!("{:.17e}", l.log_a0),
                format!("{:.17e}", lam1 * (l.k as f64).sqrt()),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Applies `rg_step` with `theta_k = theta^{sigma_k^2}` for `k = 1..=n`.
pub fn run_flow(config: &ModelConfig) -> Result<FlowTrace> {
    config.validate()?;
    let lam0 = init_coeffs(config)?;
    let a = fourier_coeffs(&config.measure, 1)?;
    let log_a0 = 0.5 * (2.0 * PI * config.sigma_sq[0] / config.beta).ln() + a[0].ln();
    let mut levels = Vec::with_capacity(config.n + 1);
    let mut cur = FlowLevel { k: 0, c_k: lam0.sup_ratio(), lam: lam0, log_a0, log_g0: f64::NAN };
    for k in 1..=config.n {
        let (next, lg) = rg_step(&cur.lam, config.theta_k(k), config.b)?;
        cur.log_g0 = lg;
        let log_a0 = config.b as f64 * cur.log_a0 + lg;
        let prev = std::mem::replace(
            &mut cur,
            FlowLevel { k, c_k: next.sup_ratio(), lam: next, log_a0, log_g0: f64::NAN },
        );
        levels.push(prev);
    }
    levels.push(cur);
    Ok(FlowTrace { b: config.b, levels })
}

/// Grid samples of a 1-periodic function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodicFunction {
    pub values: Vec<f64>,
}

impl PeriodicFunction {
    pub fn zeros(n: usize) -> Self {
        PeriodicFunction { values: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn z(&self, j: usize) -> f64 {
        j as f64 / self.values.len() as f64
    }

    pub fn mean(&self) -> f64 {
        quad::mean(&self.values)
    }

    pub fn sup_dist(&self, other: &PeriodicFunction) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Grid values of `S = sum lam(q) e^{2 pi i q z}` and its first two derivatives.
pub fn series_on_grid(lam: &SpectralCoeffs, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ct, st) = quad::trig_table(n);
    let mut s = vec![1.0; n];
    let mut s1 = vec![0.0; n];
    let mut s2 = vec![0.0; n];
    for (q, &l) in lam.lam.iter().enumerate().skip(1) {
        let w = 2.0 * PI * q as f64;
        for j in 0..n {
            let m = (q * j) % n;
            s[j] += 2.0 * l * ct[m];
            s1[j] -= 2.0 * l * w * st[m];
            s2[j] -= 2.0 * l * w * w * ct[m];
        }
    }
    (s, s1, s2)
}

/// `v = -log sum lam(q) e^{2 pi i q z}` (additive constant omitted) with `v'`, `v''`.
pub fn potential_from_coeffs(
    lam: &SpectralCoeffs,
    grid_size: usize,
) -> Result<(PeriodicFunction, PeriodicFunction, PeriodicFunction)> {
    let (s, s1, s2) = series_on_grid(lam, grid_size);
    if let Some(j) = s.iter().position(|x| !(*x > 0.0)) {
        return Err(Error::Truncation(format!(
            "reconstructed density non-positive at z = {}",
            j as f64 / grid_size as f64
        )));
    }
    let mut v = Vec::with_capacity(grid_size);
    let mut v1 = Vec::with_capacity(grid_size);
    let mut v2 = Vec::with_capacity(grid_size);
    for j in 0..grid_size {
        let r1 = s1[j] / s[j];
        v.push(-s[j].ln());
        v1.push(-r1);
        v2.push(-s2[j] / s[j] + r1 * r1);
    }
    Ok((
        PeriodicFunction { values: v },
        PeriodicFunction { values: v1 },
        PeriodicFunction { values: v2 },
    ))
}

/// Pointwise evaluation of `(v, v', v'')` from the spectral series.
pub fn potential_at(lam: &SpectralCoeffs, z: f64) -> (f64, f64, f64) {
    let (mut s, mut s1, mut s2) = (1.0, 0.0, 0.0);
    for (q, &l) in lam.lam.iter().enumerate().skip(1) {
        let w = 2.0 * PI * q as f64;
        let (sn, cs) = (w * z).sin_cos();
        s += 2.0 * l * cs;
        s1 -= 2.0 * l * w * sn;
        s2 -= 2.0 * l * w * w * cs;
    }
    let r1 = s1 / s;
    (-s.ln(), -r1, -s2 / s + r1 * r1)
}

/// Contraction metric weight base `2 b^{3/2} sqrt(b theta - 1)`.
pub fn metric_base(b: usize, theta: f64) -> f64 {
    let bf = b as f64;
    2.0 * bf.powf(1.5) * (bf * theta - 1.0).max(0.0).sqrt()
}

/// `sum_{q>=1} base^{q-1} |lam(q) - lam'(q)|`.
pub fn weighted_distance(x: &SpectralCoeffs, y: &SpectralCoeffs, b: usize, theta: f64) -> f64 {
    let base = metric_base(b, theta);
    let m = x.lam.len().max(y.lam.len());
    let mut w = 1.0;
    let mut d = 0.0;
    for q in 1..m {
        d += w * (x.get(q as i64) - y.get(q as i64)).abs();
        w *= base;
    }
    d
}

/// Result of the fixed-point solve.
#[derive(Debug, Clone, Serialize)]
pub struct FixedPoint {
    pub lam: SpectralCoeffs,
    pub trivial: bool,
    pub iterations: usize,
    pub newton_steps: usize,
    /// `||F(lam) - lam||` in the weighted metric.
    pub residual: f64,
    /// `lam(q) <= theta^{q^2}` for all q.
    pub gaussian_bound_ok: bool,
    /// `lam(q) <= (2 sqrt(b) sqrt(b theta - 1))^q` for all q >= 1.
    pub power_bound_ok: bool,
}

pub const DEFAULT_MAX_ITERS: usize = 1_000_000;
const PLAIN_BUDGET: usize = 4000;

/// Fixed point of the flow with constant `theta`, seeded from the DG initialization.
pub fn fixed_point(b: usize, theta: f64, q_max: usize, tol: f64) -> Result<FixedPoint> {
    let seed = seed_coeffs(&crate::model::MeasureSpec::Dg, theta, q_max)?;
    fixed_point_from(seed, b, theta, tol, DEFAULT_MAX_ITERS)
}

/// Fixed point reached from an arbitrary seed.
pub fn fixed_point_from(
    seed: SpectralCoeffs,
    b: usize,
    theta: f64,
    tol: f64,
    max_iters: usize,
) -> Result<FixedPoint> {
    if b < 2 || !(theta > 0.0 && theta < 1.0) || !(tol > 0.0) {
        return Err(invalid("fixed_point requires b >= 2, theta in (0,1), tol > 0"));
    }
    let bt = b as f64 * theta;
    if bt <= 1.0 {
        return Ok(FixedPoint {
            lam: SpectralCoeffs::delta(),
            trivial: true,
            iterations: 0,
            newton_steps: 0,
            residual: 0.0,
            gaussian_bound_ok: true,
            power_bound_ok: true,
        });
    }
    let mut lam = seed;
    let mut iters = 0;
    let mut newton_steps = 0;
    let mut converged = false;
    while iters < max_iters {
        let (next, _) = rg_step(&lam, theta, b)?;
        iters += 1;
        let d = weighted_distance(&next, &lam, b, theta);
        lam = next;
        if d < tol {
            converged = true;
            break;
        }
        if iters >= PLAIN_BUDGET && iters % PLAIN_BUDGET == 0 {
            // Slow linear contraction near criticality: polish with Newton.
            if let Some((polished, steps)) = newton_polish(&lam, b, theta, tol)? {
                newton_steps += steps;
                lam = polished;
                let (next, _) = rg_step(&lam, theta, b)?;
                iters += 1;
                let d = weighted_distance(&next, &lam, b, theta);
                lam = next;
                if d < tol {
                    converged = true;
                    break;
                }
            }
        }
    }
    if lam.is_trivial() {
        return Err(Error::NumericalFailure(format!(
            "iteration collapsed to the trivial point at b theta = {bt}"
        )));
    }
    let (next, _) = rg_step(&lam, theta, b)?;
    let residual = weighted_distance(&next, &lam, b, theta);
    if !converged {
        return Err(Error::NumericalFailure(format!(
            "fixed point not reached after {iters} iterations (residual {residual:.3e})"
        )));
    }
    let lt = theta.ln();
    let pb = 2.0 * (b as f64).sqrt() * (bt - 1.0).sqrt();
    let gaussian_bound_ok = lam
        .lam
        .iter()
        .enumerate()
        .all(|(q, l)| *l <= (lt * (q * q) as f64).exp() * (1.0 + 1e-12));
    let power_bound_ok =
        lam.lam.iter().enumerate().skip(1).all(|(q, l)| *l <= pb.powi(q as i32) * (1.0 + 1e-12));
    Ok(FixedPoint {
        lam,
        trivial: false,
        iterations: iters,
        newton_steps,
        residual,
        gaussian_bound_ok,
        power_bound_ok,
    })
}

// F(lam) restricted to modes 1..=Q and its Jacobian.
fn map_and_jacobian(lam: &[f64], b: usize, theta: f64) -> (DVector<f64>, DMatrix<f64>) {
    let q = lam.len() - 1;
    let s = SpectralCoeffs { lam: lam.to_vec(), tail: 0.0 };
    let g = conv_sums(&s, b);
    let h = power_conv(&s, b - 1);
    let hc = (h.len() - 1) as i64 / 2;
    let hget = |m: i64| -> f64 {
        let i = m + hc;
        if i < 0 || i as usize >= h.len() {
            0.0
        } else {
            h[i as usize]
        }
    };
    let lt = theta.ln();
    let bf = b as f64;
    let g0 = g[0];
    let mut f = DVector::zeros(q);
    let mut jac = DMatrix::zeros(q, q);
    for qi in 1..=q {
        let th = (lt * (qi * qi) as f64).exp();
        let gq = g.get(qi).copied().unwrap_or(0.0);
        f[qi - 1] = gq * th / g0;
        for m in 1..=q {
            let (qi_, m_) = (qi as i64, m as i64);
            let dgq = bf * (hget(qi_ - m_) + hget(qi_ + m_));
            let dg0 = bf * 2.0 * hget(m_);
            jac[(qi - 1, m - 1)] = th * (dgq / g0 - gq * dg0 / (g0 * g0));
        }
    }
    (f, jac)
}

fn newton_polish(
    start: &SpectralCoeffs,
    b: usize,
    theta: f64,
    tol: f64,
) -> Result<Option<(SpectralCoeffs, usize)>> {
    let mut x = start.lam.clone();
    // keep a few spare modes so truncation does not bias the solve
    let extra = 4.min(Q_MAX_HARD + 1 - x.len().min(Q_MAX_HARD + 1));
    x.extend(std::iter::repeat_n(0.0, extra));
    let q = x.len() - 1;
    if q == 0 {
        return Ok(None);
    }
    let norm = |r: &DVector<f64>| {
        let base = metric_base(b, theta);
        let mut w = 1.0;
        let mut s = 0.0;
        for v in r.iter() {
            s += w * v.abs();
            w *= base;
        }
        s
    };
    let mut steps = 0;
    for _ in 0..60 {
        let (f, jac) = map_and_jacobian(&x, b, theta);
        let xv = DVector::from_column_slice(&x[1..]);
        let r = &f - &xv;
        let rn = norm(&r);
        if rn < 0.01 * tol {
            break;
        }
        let a = DMatrix::identity(q, q) - &jac;
        let Some(dx) = a.lu().solve(&r) else {
            return Ok(None);
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            // high modes sit below solver round-off; clamp them at zero
            let trial: Vec<f64> = std::iter::once(1.0)
                .chain((0..q).map(|i| (x[i + 1] + t * dx[i]).max(0.0)))
                .collect();
            if trial[1] > 0.0 {
                let (ft, _) = map_and_jacobian(&trial, b, theta);
                let rt = &ft - DVector::from_column_slice(&trial[1..]);
                if norm(&rt) < rn {
                    x = trial;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        steps += 1;
        if !accepted {
            break;
        }
    }
    let lam = SpectralCoeffs::from_unnormalized(&x)?;
    if lam.is_trivial() {
        return Ok(None);
    }
    Ok(Some((lam, steps)))
}

/// `v_star` together with the residual of the fixed-point integral identity.
#[derive(Debug, Clone, Serialize)]
pub struct VStar {
    pub v: PeriodicFunction,
    pub v1: PeriodicFunction,
    pub v2: PeriodicFunction,
    /// `e^{-v_star}` on the grid.
    pub exp_neg_v: PeriodicFunction,
    /// `G_0(lam_star)^{-1/(b-1)}`, the zero mode of `e^{-v_star}`.
    pub prefactor: f64,
    /// Sup-norm residual of `e^{-v*(z)} = int e^{-b v*(z+zeta)} mu_{1/beta}(dzeta)`.
    pub identity_residual: f64,
}

pub fn v_star(
    lam_star: &SpectralCoeffs,
    b: usize,
    theta: f64,
    grid_size: usize,
    tol: f64,
) -> Result<VStar> {
    let g0 = conv_sums(lam_star, b)[0];
    let pref = g0.powf(-1.0 / (b as f64 - 1.0));
    let (mut v, v1, v2) = potential_from_coeffs(lam_star, grid_size)?;
    let shift = -pref.ln();
    v.values.iter_mut().for_each(|x| *x += shift);
    let e: Vec<f64> = v.values.iter().map(|x| (-x).exp()).collect();
    let eb: Vec<f64> = v.values.iter().map(|x| (-(b as f64) * x).exp()).collect();
    let var = 1.0 / crate::model::beta_of_theta(theta);
    let row = quad::wrapped_gaussian_row(grid_size, var);
    let rhs = quad::circ_apply(&row, &eb);
    let identity_residual =
        e.iter().zip(&rhs).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
    if identity_residual > 100.0 * tol {
        return Err(Error::Inconsistency(format!(
            "fixed-point integral identity residual {identity_residual:.3e}"
        )));
    }
    Ok(VStar {
        v,
        v1,
        v2,
        exp_neg_v: PeriodicFunction { values: e },
        prefactor: pref,
        identity_residual,
    })
}
