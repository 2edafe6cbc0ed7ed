//! Model parameters, single-site measures, hierarchical geometry and
//! the conductance profile of the hierarchical Laplacian.

use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Hard cap on the number of stored Fourier modes.
pub const Q_MAX_HARD: usize = 64;

/// Modes below this fraction of the zero mode are dropped.
pub const DROP_THRESHOLD: f64 = 1e-16;

/// Initial truncation is extended while the last mode exceeds this.
pub const EXTEND_THRESHOLD: f64 = 1e-14;

const SERIES_MAX_TERMS: usize = 10_000;

/// Single-site measure `nu`, described through its Fourier coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MeasureSpec {
    /// Counting measure on the integers; `a(q) = 1`.
    Dg,
    /// `exp(-kappa (1 - cos 2 pi phi)) dphi`.
    SineGordon { kappa: f64 },
    /// `[1 + 2 kappa cos 2 pi phi] dphi`, kappa in [0, 1/2].
    HardCore { kappa: f64 },
    /// Explicit coefficients `a(0..)`.
    Custom { coeffs: Vec<f64> },
}

impl MeasureSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            MeasureSpec::Dg => Ok(()),
            MeasureSpec::SineGordon { kappa } => {
                if !(kappa.is_finite() && *kappa >= 0.0) {
                    return Err(Error::InvalidMeasure(format!("sine-Gordon kappa = {kappa}")));
                }
                Ok(())
            }
            MeasureSpec::HardCore { kappa } => {
                if !(0.0..=0.5).contains(kappa) {
                    return Err(Error::InvalidMeasure(format!(
                        "hard-core kappa = {kappa} outside [0, 1/2]"
                    )));
                }
                Ok(())
            }
            MeasureSpec::Custom { coeffs } => {
                if coeffs.is_empty() || coeffs[0] <= 0.0 {
                    return Err(Error::InvalidMeasure("custom a(0) must be positive".into()));
                }
                if coeffs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                    return Err(Error::InvalidMeasure("custom coefficients must be >= 0".into()));
                }
                Ok(())
            }
        }
    }

    /// True when the measure has zero Fourier modes, which strict positivity excludes.
    pub fn outside_strict_positivity(&self) -> bool {
        match self {
            MeasureSpec::HardCore { .. } => true,
            MeasureSpec::SineGordon { kappa } => *kappa == 0.0,
            MeasureSpec::Custom { coeffs } => coeffs.iter().any(|&c| c == 0.0),
            MeasureSpec::Dg => false,
        }
    }

    /// Density of `nu` with respect to Lebesgue measure, for continuous measures.
    pub fn density(&self, phi: f64) -> Option<f64> {
        let c = (2.0 * PI * phi).cos();
        match self {
            MeasureSpec::Dg => None,
            MeasureSpec::SineGordon { kappa } => Some((-kappa * (1.0 - c)).exp()),
            MeasureSpec::HardCore { kappa } => Some(1.0 + 2.0 * kappa * c),
            MeasureSpec::Custom { coeffs } => {
                let mut s = coeffs[0];
                for (q, a) in coeffs.iter().enumerate().skip(1) {
                    s += 2.0 * a * (2.0 * PI * q as f64 * phi).cos();
                }
                Some(s)
            }
        }
    }

    /// Upper bound of `density` over a period.
    pub fn density_max(&self) -> Option<f64> {
        match self {
            MeasureSpec::Dg => None,
            MeasureSpec::SineGordon { .. } => Some(1.0),
            MeasureSpec::HardCore { kappa } => Some(1.0 + 2.0 * kappa),
            MeasureSpec::Custom { coeffs } => {
                Some(coeffs[0] + 2.0 * coeffs.iter().skip(1).map(|a| a.abs()).sum::<f64>())
            }
        }
    }
}

/// Fourier coefficients `a(0..=q_max)` of the single-site measure.
pub fn fourier_coeffs(measure: &MeasureSpec, q_max: usize) -> Result<Vec<f64>> {
    if q_max < 1 {
        return Err(invalid("q_max must be >= 1"));
    }
    measure.validate()?;
    let mut a = vec![0.0; q_max + 1];
    match measure {
        MeasureSpec::Dg => a.iter_mut().for_each(|x| *x = 1.0),
        MeasureSpec::SineGordon { kappa } => {
            for (q, slot) in a.iter_mut().enumerate() {
                *slot = bessel_series(*kappa, q)?;
            }
        }
        MeasureSpec::HardCore { kappa } => {
            a[0] = 1.0;
            a[1] = *kappa;
        }
        MeasureSpec::Custom { coeffs } => {
            for (slot, c) in a.iter_mut().zip(coeffs) {
                *slot = *c;
            }
        }
    }
    Ok(a)
}

// sum_l (k/2)^{2l+q} / ((l+q)! l!)
fn bessel_series(kappa: f64, q: usize) -> Result<f64> {
    let h = 0.5 * kappa;
    let mut term = 1.0;
    for j in 1..=q {
        term *= h / j as f64;
    }
    if term == 0.0 {
        return Ok(0.0);
    }
    let mut sum = term;
    for l in 0..SERIES_MAX_TERMS {
        term *= h * h / ((l + 1) as f64 * (l + 1 + q) as f64);
        sum += term;
        if term < 1e-16 * sum {
            return Ok(sum);
        }
    }
    Err(Error::NumericalFailure(format!(
        "sine-Gordon series did not converge for kappa = {kappa}, q = {q}"
    )))
}

/// Critical inverse temperature `2 pi^2 / log b`.
pub fn beta_critical(b: usize) -> Result<f64> {
    if b < 2 {
        return Err(invalid(format!("branching b = {b} must be >= 2")));
    }
    Ok(2.0 * PI * PI / (b as f64).ln())
}

/// `exp(-2 pi^2 / beta)`.
pub fn theta_of_beta(beta: f64) -> f64 {
    (-2.0 * PI * PI / beta).exp()
}

/// Inverse of [`theta_of_beta`].
pub fn beta_of_theta(theta: f64) -> f64 {
    -2.0 * PI * PI / theta.ln()
}

/// Variance profile `sigma_k^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SigmaProfile {
    Constant,
    /// Massive hierarchical Laplacian with mass `m2`.
    Massive(f64),
    Custom(Vec<f64>),
}

impl SigmaProfile {
    pub fn build(&self, b: usize, n: usize) -> Result<Vec<f64>> {
        match self {
            SigmaProfile::Constant => Ok(vec![1.0; n + 1]),
            SigmaProfile::Massive(m2) => massive_profile(b, n, *m2),
            SigmaProfile::Custom(v) => {
                if v.len() != n + 1 {
                    return Err(invalid(format!(
                        "custom profile has {} entries, expected n+1 = {}",
                        v.len(),
                        n + 1
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

// Splits `name(args)` into the name and the comma-separated numbers inside.
fn parse_call(s: &str) -> Result<(String, Vec<f64>)> {
    let s = s.trim();
    let Some(open) = s.find('(') else {
        return Ok((s.to_ascii_lowercase(), Vec::new()));
    };
    if !s.ends_with(')') {
        return Err(Error::Config(format!("unbalanced parentheses in '{s}'")));
    }
    let name = s[..open].trim().to_ascii_lowercase();
    let inner = s[open + 1..s.len() - 1].trim().trim_start_matches('[').trim_end_matches(']');
    let args = inner
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| Error::Config(format!("bad number '{t}' in '{s}'"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((name, args))
}

fn single_arg(name: &str, args: &[f64]) -> Result<f64> {
    match args {
        [x] => Ok(*x),
        _ => Err(Error::Config(format!("{name} takes exactly one argument"))),
    }
}

/// Parses `constant`, `massive(m2)` or `custom(s0, s1, ...)`.
impl FromStr for SigmaProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = parse_call(s)?;
        match name.as_str() {
            "constant" if args.is_empty() => Ok(SigmaProfile::Constant),
            "massive" => Ok(SigmaProfile::Massive(single_arg("massive", &args)?)),
            "custom" if !args.is_empty() => Ok(SigmaProfile::Custom(args)),
            _ => Err(Error::Config(format!("unknown sigma_profile '{s}'"))),
        }
    }
}

/// Parses `dg`, `sine_gordon(kappa)`, `hard_core(kappa)` or `custom(a0, a1, ...)`.
impl FromStr for MeasureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = parse_call(s)?;
        let m = match name.as_str() {
            "dg" if args.is_empty() => MeasureSpec::Dg,
            "sine_gordon" => MeasureSpec::SineGordon { kappa: single_arg("sine_gordon", &args)? },
            "hard_core" => MeasureSpec::HardCore { kappa: single_arg("hard_core", &args)? },
            "custom" if !args.is_empty() => MeasureSpec::Custom { coeffs: args },
            _ => return Err(Error::Config(format!("unknown measure '{s}'"))),
        };
        m.validate()?;
        Ok(m)
    }
}

/// Massive preset: `1/u_k = m2 + b^{-k}` for `k < n` and `1/u_n = m2`.
pub fn massive_profile(b: usize, n: usize, m2: f64) -> Result<Vec<f64>> {
    if !(m2 > 0.0 && m2.is_finite()) {
        return Err(invalid(format!("mass m2 = {m2} must be positive")));
    }
    let bf = b as f64;
    let mut s = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let kf = k as i32;
        let v = if k == n && n > 0 {
            bf.powi(1 - 2 * kf) / (m2 * (m2 + bf.powi(1 - kf)))
        } else if k == 0 {
            if n == 0 {
                1.0 / m2
            } else {
                1.0 / (m2 + 1.0)
            }
        } else {
            bf.powi(-2 * kf) * (bf - 1.0) / ((m2 + bf.powi(-kf)) * (m2 + bf.powi(1 - kf)))
        };
        s.push(v);
    }
    Ok(s)
}

/// All model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub b: usize,
    pub beta: f64,
    pub n: usize,
    pub sigma_sq: Vec<f64>,
    pub measure: MeasureSpec,
    pub q_max: usize,
    pub grid_size: usize,
}

impl ModelConfig {
    pub fn new(
        b: usize,
        beta: f64,
        n: usize,
        profile: &SigmaProfile,
        measure: MeasureSpec,
    ) -> Result<Self> {
        let cfg = ModelConfig {
            b,
            beta,
            n,
            sigma_sq: profile.build(b, n)?,
            measure,
            q_max: 16,
            grid_size: 512,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Constant profile `sigma_k^2 = 1`.
    pub fn constant(b: usize, beta: f64, n: usize, measure: MeasureSpec) -> Result<Self> {
        Self::new(b, beta, n, &SigmaProfile::Constant, measure)
    }

    pub fn with_grid(mut self, grid_size: usize) -> Result<Self> {
        self.grid_size = grid_size;
        self.validate()?;
        Ok(self)
    }

    pub fn with_q_max(mut self, q_max: usize) -> Result<Self> {
        self.q_max = q_max;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.b < 2 {
            return Err(invalid(format!("branching b = {} must be >= 2", self.b)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(invalid(format!("beta = {} must be positive", self.beta)));
        }
        if self.sigma_sq.len() != self.n + 1 {
            return Err(invalid("sigma_sq must have n+1 entries"));
        }
        if self.sigma_sq.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(invalid("sigma_sq entries must be positive"));
        }
        if self.q_max < 4 || self.q_max > Q_MAX_HARD {
            return Err(invalid(format!("q_max = {} outside [4, {Q_MAX_HARD}]", self.q_max)));
        }
        if self.grid_size < 64 {
            return Err(invalid(format!("grid_size = {} must be >= 64", self.grid_size)));
        }
        self.measure.validate()
    }

    pub fn theta(&self) -> f64 {
        theta_of_beta(self.beta)
    }

    /// `theta^{sigma_k^2}`.
    pub fn theta_k(&self, k: usize) -> f64 {
        (-2.0 * PI * PI * self.sigma_sq[k] / self.beta).exp()
    }

    pub fn beta_c(&self) -> f64 {
        2.0 * PI * PI / (self.b as f64).ln()
    }

    pub fn is_supercritical(&self) -> bool {
        self.b as f64 * self.theta() > 1.0
    }
}

/// Conductances `c_1..c_{n+1}` of the hierarchical Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianProfile {
    pub b: usize,
    /// `conductances[k-1] = c_k` for `k = 1..=n+1`.
    pub conductances: Vec<f64>,
    /// Partial sums `u_k = sum_{j<=k} b^j sigma_j^2`.
    pub u: Vec<f64>,
}

impl LaplacianProfile {
    pub fn n(&self) -> usize {
        self.conductances.len() - 1
    }

    /// `c_k`, 1-based.
    pub fn c(&self, k: usize) -> f64 {
        self.conductances[k - 1]
    }

    /// Reconstruct `sigma_k^2` from the conductances alone.
    pub fn to_sigma_sq(&self) -> Vec<f64> {
        let n = self.n();
        let bf = self.b as f64;
        let mut inv_u = vec![0.0; n + 1];
        inv_u[n] = self.c(n + 1);
        for k in (1..=n).rev() {
            inv_u[k - 1] = inv_u[k] + bf.powi(k as i32) * self.c(k);
        }
        let u: Vec<f64> = inv_u.iter().map(|x| 1.0 / x).collect();
        let mut s = vec![u[0]; n + 1];
        for k in 1..=n {
            s[k] = (u[k] - u[k - 1]) / bf.powi(k as i32);
        }
        s
    }
}

pub fn build_profile_from(b: usize, sigma_sq: &[f64]) -> Result<LaplacianProfile> {
    if b < 2 || sigma_sq.is_empty() || sigma_sq.iter().any(|s| !(*s > 0.0)) {
        return Err(invalid("profile requires b >= 2 and positive sigma_sq"));
    }
    let n = sigma_sq.len() - 1;
    let bf = b as f64;
    let mut u = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    for (j, s) in sigma_sq.iter().enumerate() {
        acc += bf.powi(j as i32) * s;
        u.push(acc);
    }
    let mut c = Vec::with_capacity(n + 1);
    for k in 1..=n {
        c.push((1.0 / u[k - 1] - 1.0 / u[k]) / bf.powi(k as i32));
    }
    c.push(1.0 / u[n]);
    Ok(LaplacianProfile { b, conductances: c, u })
}

pub fn build_profile(config: &ModelConfig) -> Result<LaplacianProfile> {
    config.validate()?;
    build_profile_from(config.b, &config.sigma_sq)
}

/// Branch depth `k(x,y)`: n minus the length of the common leading digit prefix.
pub fn branch_depth(x: usize, y: usize, b: usize, n: usize) -> Result<usize> {
    let size = leaf_count(b, n)?;
    if x >= size || y >= size {
        return Err(invalid(format!("leaf index out of range [0, {size})")));
    }
    let (mut x, mut y, mut k) = (x, y, 0);
    while x != y {
        x /= b;
        y /= b;
        k += 1;
    }
    Ok(k)
}

/// Ultrametric distance `d(x,y) = b^{k/2}`, with `d(x,x) = 0`.
pub fn hier_distance(x: usize, y: usize, b: usize, n: usize) -> Result<(f64, usize)> {
    let k = branch_depth(x, y, b, n)?;
    let d = if k == 0 { 0.0 } else { (b as f64).powf(0.5 * k as f64) };
    Ok((d, k))
}

pub fn leaf_count(b: usize, n: usize) -> Result<usize> {
    if b < 2 {
        return Err(invalid("b must be >= 2"));
    }
    (0..n)
        .try_fold(1usize, |acc, _| acc.checked_mul(b))
        .ok_or_else(|| invalid("b^n overflows"))
}
