use std::f64::consts::PI;

use hierflow::chain::{
    chain_profile, chain_profile_with_flow, charge_correlation_exact, charge_weights_step,
    covariance_exact, propagate_density, propagate_density_level0, single_charge_exact, ChainOptions,
    ChargeWeights, MarginalDensity,
};
use hierflow::model::{beta_critical, beta_of_theta, MeasureSpec, ModelConfig, SigmaProfile};
use hierflow::observables::{c_bar, critical_amplitude_sq, kappa_with_star, tau_exponent, StarData};
use hierflow::oracle::{gibbs_brute, PairObservable};
use hierflow::rgflow::{potential_at, potential_from_coeffs, run_flow, PeriodicFunction, SpectralCoeffs};
use proptest::prelude::*;

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn fit_line(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

// Gaussian quadrature nodes on [-12 s, 12 s] with weights of N(0, s^2).
fn gaussian_nodes(s: f64) -> Vec<(f64, f64)> {
    let m = 4000;
    let h = 24.0 * s / m as f64;
    (0..=m)
        .map(|i| {
            let x = -12.0 * s + h * i as f64;
            (x, h * (-0.5 * x * x / (s * s)).exp() / (s * (2.0 * PI).sqrt()))
        })
        .collect()
}

#[test]
fn flat_kernel_limit_is_uniform() {
    let grid = 256;
    let rho = MarginalDensity::point_mass(grid, 3);
    // beta_k = beta / sigma^2 = 0.01.
    let out = propagate_density(&rho, &PeriodicFunction::zeros(grid), 1.0, 0.01, 2).unwrap();
    assert_eq!(out.level, 2);
    assert!(out.rho.iter().all(|x| (x - 1.0).abs() < 1e-3));
}

#[test]
fn uniform_is_stationary_for_flat_potential() {
    let grid = 128;
    for var in [1e-4, 0.01, 0.3, 5.0] {
        let out =
            propagate_density(&MarginalDensity::uniform(grid, 2), &PeriodicFunction::zeros(grid), var, 1.0, 3)
                .unwrap();
        assert!(out.rho.iter().all(|x| (x - 1.0).abs() < 1e-13), "var={var}");
    }
}

#[test]
fn propagation_preserves_mass_and_positivity() {
    let c = ModelConfig::constant(2, 32.0, 6, MeasureSpec::SineGordon { kappa: 1.0 }).unwrap();
    let flow = run_flow(&c).unwrap();
    let mut rho = MarginalDensity::point_mass(c.grid_size, c.n + 1);
    for k in (1..=c.n).rev() {
        let (v, _, _) = potential_from_coeffs(flow.lam(k - 1), c.grid_size).unwrap();
        rho = propagate_density(&rho, &v, 1.0, c.beta, 2).unwrap();
        assert!((rho.integral() - 1.0).abs() < 1e-10);
        assert!(rho.rho.iter().all(|x| *x > 0.0));
    }
    let r0 = propagate_density_level0(&rho, &c.measure, 1.0, c.beta).unwrap();
    assert!((r0.integral() - 1.0).abs() < 1e-10);
    assert!(r0.rho.iter().all(|x| *x > 0.0));
    assert!(propagate_density(&r0, &PeriodicFunction::zeros(c.grid_size), 1.0, 1.0, 2).is_err());
    let dg = propagate_density_level0(&rho, &MeasureSpec::Dg, 1.0, c.beta).unwrap();
    assert_eq!(dg, MarginalDensity::point_mass(c.grid_size, 0));
}

#[test]
fn nu_star_is_stationary() {
    for bt in [1.05, 1.4] {
        let theta = bt / 2.0;
        let star = StarData::new(2, theta, 16, 512).unwrap();
        let beta = beta_of_theta(theta);
        let nu = MarginalDensity { rho: star.nu_star.rho.clone(), level: 1 };
        let out = propagate_density(&nu, &star.vstar.v, 1.0, beta, 2).unwrap();
        let d = sup_diff(&out.rho, &nu.rho);
        assert!(d < 1e-8, "bt={bt}: {d}");
    }
}

#[test]
fn trivial_measure_gives_gaussian_ladder() {
    let sig = vec![0.7, 1.3, 0.4, 2.0, 1.1, 0.9];
    let c = ModelConfig::new(
        2,
        15.0,
        5,
        &SigmaProfile::Custom(sig.clone()),
        MeasureSpec::SineGordon { kappa: 0.0 },
    )
    .unwrap();
    let p = chain_profile(&c, &ChainOptions::default()).unwrap();
    assert_eq!(p.em2(6), 0.0);
    for k in 0..=5 {
        let ladder: f64 = sig[k..].iter().sum::<f64>() / 15.0;
        assert!((p.em2(k) - ladder).abs() < 1e-15, "k={k}");
        assert!((p.levels[k].increment - sig[k] / 15.0).abs() < 1e-16);
    }
}

#[test]
fn brute_force_match() {
    let c = ModelConfig::constant(2, 10.0, 2, MeasureSpec::Dg).unwrap();
    // Leaf 0 against leaves 0, 1, 2 gives branch depths 0, 1, 2.
    let mut obs = Vec::new();
    for y in 0..3 {
        for alpha in [0.1, 0.3] {
            obs.push(PairObservable { x: 0, y, alpha });
        }
    }
    let g = gibbs_brute(&c, 6, &obs).unwrap();
    assert!(g.truncation_sensitivity < 1e-8);
    for (i, o) in obs.iter().enumerate() {
        let k = o.y;
        let cov = covariance_exact(&c, k).unwrap();
        let ch = charge_correlation_exact(&c, o.alpha, k).unwrap();
        assert!((cov - g.covariance[i]).abs() < 1e-4, "k={k}: {cov} vs {}", g.covariance[i]);
        assert!((ch - g.charge[i]).abs() < 1e-4, "k={k} alpha={}: {ch} vs {}", o.alpha, g.charge[i]);
    }
}

#[test]
fn brute_force_match_sine_gordon_free_b3() {
    // n = 1 with b = 3 and the DG measure at a second temperature.
    let c = ModelConfig::constant(3, 6.0, 1, MeasureSpec::Dg).unwrap();
    let obs = [PairObservable { x: 0, y: 0, alpha: 0.2 }, PairObservable { x: 0, y: 1, alpha: 0.2 }];
    let g = gibbs_brute(&c, 8, &obs).unwrap();
    assert!(g.truncation_sensitivity < 1e-8);
    for (i, o) in obs.iter().enumerate() {
        let cov = covariance_exact(&c, o.y).unwrap();
        let ch = charge_correlation_exact(&c, 0.2, o.y).unwrap();
        assert!((cov - g.covariance[i]).abs() < 1e-8, "{cov} vs {}", g.covariance[i]);
        assert!((ch - g.charge[i]).abs() < 1e-8, "{ch} vs {}", g.charge[i]);
    }
}

#[test]
fn subcritical_increments() {
    let c = ModelConfig::constant(2, 20.0, 24, MeasureSpec::Dg).unwrap();
    let p = chain_profile(&c, &ChainOptions::default()).unwrap();
    for k in 10..=20 {
        let inc = p.levels[k].increment;
        assert!((inc - 0.05).abs() < 1e-3 * 0.05, "k={k}: {inc}");
    }
    assert!(covariance_exact(&c, 26).is_err());
}

#[test]
fn supercritical_increments_match_sigma2() {
    let beta = 35.0;
    let c = ModelConfig::constant(2, beta, 60, MeasureSpec::Dg).unwrap();
    let p = chain_profile(&c, &ChainOptions::default()).unwrap();
    let s2 = hierflow::observables::sigma2(&c).unwrap();
    for k in 38..=50 {
        assert!((p.levels[k].increment / s2 - 1.0).abs() < 1e-4, "k={k}");
    }
}

#[test]
fn charge_step_delta_alpha_zero() {
    let w = ChargeWeights { alpha: 0.0, level: 1, qmin: -3, w: vec![0.1, 0.4, 0.8, 1.0, 0.8, 0.4, 0.1], log_scale: 0.0 };
    let theta = 0.6;
    let next = charge_weights_step(&w, &SpectralCoeffs::delta(), theta, 2).unwrap();
    for q in -3i64..=3 {
        let expect = theta.powi((q * q) as i32) * w.w[(q + 3) as usize];
        assert!((next.get(q) - expect).abs() < 1e-15);
    }
    assert_eq!(next.level, 2);
}

#[test]
fn charge_init_dg() {
    let c = ModelConfig::constant(2, 25.0, 3, MeasureSpec::Dg).unwrap();
    let flow = run_flow(&c).unwrap();
    let alpha = 0.3;
    let w = ChargeWeights::initial(&c, flow.lam(0), alpha).unwrap();
    let t0 = c.theta_k(0);
    for q in w.qmin..w.qmin + w.w.len() as i64 {
        let expect = t0.powf((q as f64 + alpha).powi(2));
        assert!((w.get(q) / expect - 1.0).abs() < 1e-13, "q={q}");
        assert!(w.get(q) > 0.0);
    }
}

#[test]
fn charge_two_levels_by_enumeration() {
    let (theta, alpha) = (0.5f64, 0.25f64);
    let lam = SpectralCoeffs::from_unnormalized(&[1.0, 0.3]).unwrap();
    let w1: Vec<(i64, f64)> = (-4..=4).map(|q| (q, theta.powf((q as f64 + alpha).powi(2)))).collect();
    let w = ChargeWeights {
        alpha,
        level: 1,
        qmin: -4,
        w: w1.iter().map(|x| x.1).collect(),
        log_scale: 0.0,
    };
    let w2 = charge_weights_step(&w, &lam, theta, 2).unwrap();
    let w3 = charge_weights_step(&w2, &lam, theta, 2).unwrap();
    // Enumerate the pair (l1, l2) with l1 carrying the charge weight and l2 the coefficient.
    let g0: f64 = [0.3, 1.0, 0.3].iter().map(|x| x * x).sum();
    let l = |q: i64| if q == 0 { 1.0 } else if q.abs() == 1 { 0.3 } else { 0.0 };
    let step = |prev: &dyn Fn(i64) -> f64, q: i64| {
        let mut s = 0.0;
        for l1 in -12..=12 {
            for l2 in -1..=1 {
                if l1 + l2 == q {
                    s += prev(l1) * l(l2);
                }
            }
        }
        theta.powf((q as f64 + alpha).powi(2)) * s / g0
    };
    let first = |q: i64| if q.abs() <= 4 { theta.powf((q as f64 + alpha).powi(2)) } else { 0.0 };
    let second = |q: i64| step(&first, q);
    for q in -5..=5 {
        assert!((w2.get(q) - second(q)).abs() < 1e-15 * second(0), "level 2, q={q}");
        let third = step(&second, q);
        assert!((w3.get(q) - third).abs() < 1e-15 * second(0), "level 3, q={q}");
    }
}

#[test]
fn charge_alpha_zero_is_one() {
    for (beta, m) in [(20.0, MeasureSpec::Dg), (35.0, MeasureSpec::Dg), (30.0, MeasureSpec::SineGordon { kappa: 1.0 })] {
        let c = ModelConfig::constant(2, beta, 8, m).unwrap();
        let p = chain_profile(&c, &ChainOptions { alpha: Some(0.0), reference: None }).unwrap();
        for l in &p.levels {
            assert!((l.charge_corr.unwrap() - 1.0).abs() < 1e-12, "beta={beta} k={}", l.k);
        }
        assert!(p.log_single_charge.unwrap().abs() < 1e-12);
        assert!((single_charge_exact(&c, 0.0).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn subcritical_charge_ratio() {
    let c = ModelConfig::constant(2, 20.0, 24, MeasureSpec::Dg).unwrap();
    for alpha in [0.1, 0.3] {
        let p = chain_profile(&c, &ChainOptions { alpha: Some(alpha), reference: None }).unwrap();
        let target = alpha * alpha * c.theta().ln();
        for k in 12..=24 {
            let r = p.levels[k].w0_ratio.unwrap().ln();
            assert!((r - target).abs() < 1e-3, "alpha={alpha} k={k}: {r} vs {target}");
        }
        for k in 1..=24 {
            let cc = p.levels[k].charge_corr.unwrap();
            assert!(cc > 0.0 && cc <= 1.0);
        }
    }
}

#[test]
fn subcritical_single_charge_rate() {
    let c = ModelConfig::constant(2, 20.0, 200, MeasureSpec::Dg).unwrap().with_grid(128).unwrap();
    let alpha = 0.2;
    let f = single_charge_exact(&c, alpha).unwrap();
    let rate = f.ln() / c.n as f64;
    let target = alpha * alpha * c.theta().ln();
    assert!((rate / target - 1.0).abs() < 0.02, "{rate} vs {target}");
}

#[test]
fn supercritical_charge_ratio() {
    let bt = 1.05;
    let theta = bt / 2.0;
    let beta = beta_of_theta(theta);
    let alpha = 0.2;
    let star = StarData::new(2, theta, 16, 512).unwrap();
    let e = kappa_with_star(alpha, 2, beta, Some(&star)).unwrap();
    let target = e.t_star * theta.powf(alpha * alpha);
    let c = ModelConfig::constant(2, beta, 80, MeasureSpec::Dg).unwrap().with_grid(128).unwrap();
    let p = chain_profile(&c, &ChainOptions { alpha: Some(alpha), reference: None }).unwrap();
    for k in 50..=78 {
        let r = p.levels[k].w0_ratio.unwrap();
        assert!((r / target - 1.0).abs() < 1e-3, "k={k}: {r} vs {target}");
    }
}

#[test]
fn conditional_mean_identity() {
    let c = ModelConfig::constant(2, 30.0, 4, MeasureSpec::SineGordon { kappa: 1.5 }).unwrap();
    let flow = run_flow(&c).unwrap();
    let s2 = 1.0 / c.beta;
    let nodes = gaussian_nodes(s2.sqrt());
    for k in 1..=4 {
        let (lp, lk) = (flow.lam(k - 1), flow.lam(k));
        for j in 0..32 {
            let z = j as f64 / 32.0 + 0.003;
            let (mut num, mut num_v, mut den) = (0.0, 0.0, 0.0);
            for &(x, w) in &nodes {
                let (v, v1, _) = potential_at(lp, z + x);
                let e = w * (-2.0 * v).exp();
                num += e * (z + x);
                num_v += e * v1;
                den += e;
            }
            let (_, vk1, _) = potential_at(lk, z);
            let mean = num / den;
            assert!((mean - (z - s2 * vk1)).abs() < 1e-8, "k={k} z={z}");
            assert!((num_v / den - vk1 / 2.0).abs() < 1e-8, "k={k} z={z}");
        }
    }
}

#[test]
fn conditional_mean_identity_level_zero() {
    let beta = 26.0f64;
    let s2 = 1.0 / beta;
    let nodes = gaussian_nodes(s2.sqrt());
    for m in [MeasureSpec::SineGordon { kappa: 0.8 }, MeasureSpec::HardCore { kappa: 0.3 }] {
        let c = ModelConfig::constant(3, beta, 1, m.clone()).unwrap();
        let flow = run_flow(&c).unwrap();
        for j in 0..16 {
            let z = j as f64 / 16.0 + 0.01;
            let (mut num, mut den) = (0.0, 0.0);
            for &(x, w) in &nodes {
                let d = w * m.density(z + x).unwrap();
                num += d * (z + x);
                den += d;
            }
            let (_, v1, _) = potential_at(flow.lam(0), z);
            assert!((num / den - (z - s2 * v1)).abs() < 1e-8);
        }
    }
    // Discrete Gaussian: the integer sum plays the role of the measure.
    let c = ModelConfig::constant(2, beta, 1, MeasureSpec::Dg).unwrap();
    let flow = run_flow(&c).unwrap();
    for j in 0..16 {
        let z = j as f64 / 16.0 + 0.01;
        let (mut num, mut den) = (0.0, 0.0);
        for q in -20i64..=20 {
            let d = (-0.5 * (q as f64 - z).powi(2) / s2).exp();
            num += d * q as f64;
            den += d;
        }
        let (_, v1, _) = potential_at(flow.lam(0), z);
        assert!((num / den - (z - s2 * v1)).abs() < 1e-8);
    }
}

#[test]
fn gaussian_integration_identities() {
    // Unnormalized forms: int e^{-b v(z+x)} x mu = -s2 v_k' e^{-v_k} and
    // int e^{-b v(z+x)} v'(z+x) mu = v_k' e^{-v_k} / b, with e^{-v_k} the same integral.
    let c = ModelConfig::constant(3, 18.0, 3, MeasureSpec::Dg).unwrap();
    let flow = run_flow(&c).unwrap();
    let s2 = 1.0 / c.beta;
    let nodes = gaussian_nodes(s2.sqrt());
    for k in 1..=3 {
        let lp = flow.lam(k - 1);
        for j in 0..20 {
            let z = j as f64 / 20.0;
            let (mut e0, mut ex, mut ev, mut ev2) = (0.0, 0.0, 0.0, 0.0);
            for &(x, w) in &nodes {
                let (v, v1, v2) = potential_at(lp, z + x);
                let e = w * (-3.0 * v).exp();
                e0 += e;
                ex += e * x;
                ev += e * v1;
                ev2 += e * (v2 - 3.0 * v1 * v1);
            }
            let (_, vk1, vk2) = potential_at(flow.lam(k), z);
            assert!((ex / e0 + s2 * vk1).abs() < 1e-8);
            assert!((ev / e0 - vk1 / 3.0).abs() < 1e-8);
            // Differentiating the second identity once more in z.
            assert!((ev2 / e0 - (vk2 - vk1 * vk1) / 3.0).abs() < 1e-7, "k={k} z={z}");
        }
    }
}

#[test]
fn mixing_subcritical_to_uniform() {
    let c = ModelConfig::constant(2, 10.0, 40, MeasureSpec::Dg).unwrap();
    let u = MarginalDensity::uniform(c.grid_size, 0);
    let p = chain_profile(&c, &ChainOptions { alpha: None, reference: Some(&u) }).unwrap();
    for k in 12..=32 {
        assert!(p.levels[k].tv_to_nu_star.unwrap() < 1e-6, "k={k}");
    }
}

#[test]
fn mixing_supercritical_to_nu_star() {
    let theta = 0.7;
    let beta = beta_of_theta(theta);
    let star = StarData::new(2, theta, 16, 512).unwrap();
    let c = ModelConfig::constant(2, beta, 40, MeasureSpec::Dg).unwrap();
    let p = chain_profile(&c, &ChainOptions { alpha: None, reference: Some(&star.nu_star) }).unwrap();
    let tv: Vec<f64> = (1..=40).map(|k| p.levels[k].tv_to_nu_star.unwrap()).collect();
    for k in 20..=29 {
        assert!(tv[k - 1] < 1e-6, "k={k}: {}", tv[k - 1]);
    }
    // Decay in n - k near the top of the tree.
    assert!(tv[39] > tv[35] && tv[35] > tv[31]);
}

#[test]
fn critical_derivative_amplitude() {
    let c = ModelConfig::constant(2, beta_critical(2).unwrap(), 2000, MeasureSpec::Dg).unwrap();
    let flow = run_flow(&c).unwrap();
    let target = (4.0 * PI).powi(2) * critical_amplitude_sq(2) / 2.0;
    for k in [500, 1000, 1500, 2000] {
        let (_, v1, _) = potential_from_coeffs(flow.lam(k), 256).unwrap();
        let e = v1.values.iter().map(|x| x * x).sum::<f64>() / 256.0;
        let r = k as f64 * e / target;
        assert!((r - 1.0).abs() < 0.05, "k={k}: {r}");
    }
}

#[test]
fn critical_covariance_correction() {
    let bc = beta_critical(2).unwrap();
    let n = 2000;
    let c = ModelConfig::constant(2, bc, n, MeasureSpec::Dg).unwrap().with_grid(128).unwrap();
    let p = chain_profile(&c, &ChainOptions::default()).unwrap();
    let pts: Vec<(f64, f64)> = (100..=1000)
        .map(|k| ((n as f64 / k as f64).ln(), p.em2(k) - (n + 1 - k) as f64 / bc))
        .collect();
    let (slope, _) = fit_line(&pts);
    let cb = c_bar(2).unwrap();
    assert!((-slope / cb - 1.0).abs() < 0.1, "fitted {} vs {cb}", -slope);
}

#[test]
fn critical_charge_band() {
    let bc = beta_critical(2).unwrap();
    let alpha = 0.2;
    let c = ModelConfig::constant(2, bc, 2000, MeasureSpec::Dg).unwrap().with_grid(128).unwrap();
    let flow = run_flow(&c).unwrap();
    let p = chain_profile_with_flow(&c, &flow, &ChainOptions { alpha: Some(alpha), reference: None }).unwrap();
    let tau = tau_exponent(alpha, 2).unwrap();
    let lt = c.theta().ln();
    let log_r: Vec<f64> = (100..=2000)
        .map(|k| p.levels[k].log_w0.unwrap() - 0.5 * tau * (k as f64).ln() - alpha * alpha * k as f64 * lt)
        .collect();
    let max = log_r.iter().cloned().fold(f64::MIN, f64::max);
    let min = log_r.iter().cloned().fold(f64::MAX, f64::min);
    assert!((max - min).exp() < 3.0, "band ratio {}", (max - min).exp());
    // Increments decay along the band.
    let early = (log_r[100] - log_r[0]).abs();
    let late = (log_r[1900] - log_r[1800]).abs();
    assert!(late < early);
}

#[test]
fn chain_csv_columns() {
    let c = ModelConfig::constant(2, 20.0, 3, MeasureSpec::Dg).unwrap();
    let p = chain_profile(&c, &ChainOptions { alpha: Some(0.2), reference: None }).unwrap();
    let mut buf = Vec::new();
    p.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "k,EM2,increment,w0,w0_ratio,tv_to_nu_star,log_w0,charge_corr");
    assert_eq!(lines.count(), 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn covariance_decreasing_in_depth(beta in 5.0f64..45.0, kappa in 0.0f64..3.0) {
        let c = ModelConfig::constant(2, beta, 6, MeasureSpec::SineGordon { kappa }).unwrap()
            .with_grid(128).unwrap();
        let p = chain_profile(&c, &ChainOptions::default()).unwrap();
        for k in 0..=6 {
            prop_assert!(p.em2(k) > p.em2(k + 1));
        }
    }

    #[test]
    fn charge_weights_positive(alpha in -0.45f64..0.45, beta in 10.0f64..40.0) {
        let c = ModelConfig::constant(2, beta, 10, MeasureSpec::Dg).unwrap();
        let flow = run_flow(&c).unwrap();
        let mut w = ChargeWeights::initial(&c, flow.lam(0), alpha).unwrap();
        for k in 1..=10 {
            prop_assert!(w.w.iter().all(|x| *x > 0.0));
            w = charge_weights_step(&w, flow.lam(k - 1), c.theta_k(k), 2).unwrap();
        }
    }
}
