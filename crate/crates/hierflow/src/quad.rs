//! Periodic quadrature on the uniform grid `z_j = j/N` of [0,1).

use std::f64::consts::PI;

/// Trapezoid rule for a 1-periodic integrand.
pub fn mean(f: &[f64]) -> f64 {
    f.iter().sum::<f64>() / f.len() as f64
}

/// Trapezoid rule for the product `f * g`.
pub fn mean_prod(f: &[f64], g: &[f64]) -> f64 {
    f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / f.len() as f64
}

/// Number of periodic images so that the dropped Gaussian tail is below 1e-16.
pub fn image_count(sd: f64) -> usize {
    (9.0 * sd).ceil() as usize + 2
}

/// Density of the centred Gaussian with variance `var`, wrapped onto [0,1), at `d`.
pub fn wrapped_gaussian(d: f64, var: f64) -> f64 {
    let d = d - d.floor();
    if var >= 0.05 {
        // Dual (Fourier) representation converges fast for wide kernels.
        let mut s = 1.0;
        let mut q = 1.0;
        loop {
            let w = (-2.0 * PI * PI * q * q * var).exp();
            if w < 1e-17 {
                break;
            }
            s += 2.0 * w * (2.0 * PI * q * d).cos();
            q += 1.0;
        }
        s
    } else {
        let sd = var.sqrt();
        let jm = image_count(sd) as i64;
        let norm = 1.0 / (2.0 * PI * var).sqrt();
        let mut s = 0.0;
        for j in -jm..=jm {
            let x = d + j as f64;
            s += (-0.5 * x * x / var).exp();
        }
        s * norm
    }
}

/// Circulant row `g[m] = wrapped_gaussian(m/N, var)`.
pub fn wrapped_gaussian_row(n: usize, var: f64) -> Vec<f64> {
    (0..n).map(|m| wrapped_gaussian(m as f64 / n as f64, var)).collect()
}

/// `out[i] = (1/N) sum_j row[(i-j) mod N] f[j]`.
pub fn circ_apply(row: &[f64], f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let inv = 1.0 / n as f64;
    (0..n)
        .map(|i| {
            let mut s = 0.0;
            for (j, fj) in f.iter().enumerate() {
                let m = if i >= j { i - j } else { i + n - j };
                s += row[m] * fj;
            }
            s * inv
        })
        .collect()
}

/// `cos(2 pi m / N)` and `sin(2 pi m / N)` for `m = 0..N`.
pub fn trig_table(n: usize) -> (Vec<f64>, Vec<f64>) {
    let c = (0..n).map(|m| (2.0 * PI * m as f64 / n as f64).cos()).collect();
    let s = (0..n).map(|m| (2.0 * PI * m as f64 / n as f64).sin()).collect();
    (c, s)
}
