use std::f64::consts::PI;

use hierflow::model::{
    beta_critical, branch_depth, build_profile, build_profile_from, fourier_coeffs, hier_distance,
    leaf_count, massive_profile, theta_of_beta, MeasureSpec, ModelConfig, SigmaProfile,
};
use hierflow::Error;
use proptest::prelude::*;

// Trapezoid quadrature of the sine-Gordon density against cos(2 pi q z).
fn sg_coeff_quadrature(kappa: f64, q: usize) -> f64 {
    let n = 4096;
    (0..n)
        .map(|j| {
            let z = j as f64 / n as f64;
            (-kappa * (1.0 - (2.0 * PI * z).cos())).exp() * (2.0 * PI * q as f64 * z).cos()
        })
        .sum::<f64>()
        / n as f64
}

#[test]
fn beta_critical_values() {
    assert!((beta_critical(2).unwrap() - 28.477).abs() < 1e-3);
    let b4 = beta_critical(4).unwrap();
    assert!((b4 - 2.0 * PI * PI / 4f64.ln()).abs() < 1e-12);
    assert!((b4 - 14.238_829_324_987_504).abs() < 1e-9);
    assert!(matches!(beta_critical(1), Err(Error::InvalidParameter(_))));
    assert!(matches!(beta_critical(0), Err(Error::InvalidParameter(_))));
}

#[test]
fn theta_round_trip() {
    for beta in [1.0, 10.0, 28.0, 100.0] {
        let t = theta_of_beta(beta);
        assert!(t > 0.0 && t < 1.0);
        assert!((hierflow::model::beta_of_theta(t) - beta).abs() < 1e-10 * beta);
    }
}

#[test]
fn fourier_coeffs_dg() {
    assert_eq!(fourier_coeffs(&MeasureSpec::Dg, 3).unwrap(), vec![1.0; 4]);
}

#[test]
fn fourier_coeffs_sine_gordon_zero_is_delta() {
    let a = fourier_coeffs(&MeasureSpec::SineGordon { kappa: 0.0 }, 5).unwrap();
    assert_eq!(a[0], 1.0);
    assert!(a[1..].iter().all(|x| *x == 0.0));
}

#[test]
fn fourier_coeffs_sine_gordon_matches_quadrature() {
    // The series omits the constant e^{-kappa}; compare after restoring it.
    for kappa in [0.3, 1.0, 2.5] {
        let a = fourier_coeffs(&MeasureSpec::SineGordon { kappa }, 4).unwrap();
        for q in 0..=4 {
            let quad = sg_coeff_quadrature(kappa, q) * kappa.exp();
            assert!((a[q] - quad).abs() < 1e-13 * a[0], "kappa={kappa} q={q}: {} vs {quad}", a[q]);
        }
    }
}

#[test]
fn fourier_coeffs_hard_core() {
    let a = fourier_coeffs(&MeasureSpec::HardCore { kappa: 0.3 }, 4).unwrap();
    assert_eq!(a, vec![1.0, 0.3, 0.0, 0.0, 0.0]);
    assert!(MeasureSpec::HardCore { kappa: 0.3 }.outside_strict_positivity());
    assert!(matches!(
        fourier_coeffs(&MeasureSpec::HardCore { kappa: 0.6 }, 4),
        Err(Error::InvalidMeasure(_))
    ));
    assert!(fourier_coeffs(&MeasureSpec::Dg, 0).is_err());
}

#[test]
fn custom_measure_validation() {
    assert!(MeasureSpec::Custom { coeffs: vec![1.0, 0.5] }.validate().is_ok());
    assert!(MeasureSpec::Custom { coeffs: vec![0.0, 0.5] }.validate().is_err());
    assert!(MeasureSpec::Custom { coeffs: vec![1.0, -0.1] }.validate().is_err());
    let a = fourier_coeffs(&MeasureSpec::Custom { coeffs: vec![2.0, 1.0] }, 3).unwrap();
    assert_eq!(a, vec![2.0, 1.0, 0.0, 0.0]);
}

#[test]
fn measure_and_profile_parsing() {
    assert_eq!("dg".parse::<MeasureSpec>().unwrap(), MeasureSpec::Dg);
    assert_eq!(
        "sine_gordon(1.5)".parse::<MeasureSpec>().unwrap(),
        MeasureSpec::SineGordon { kappa: 1.5 }
    );
    assert_eq!(
        "hard_core(0.25)".parse::<MeasureSpec>().unwrap(),
        MeasureSpec::HardCore { kappa: 0.25 }
    );
    assert_eq!(
        "custom([1, 0.5, 0.1])".parse::<MeasureSpec>().unwrap(),
        MeasureSpec::Custom { coeffs: vec![1.0, 0.5, 0.1] }
    );
    assert!("villain".parse::<MeasureSpec>().is_err());
    assert!("hard_core(0.9)".parse::<MeasureSpec>().is_err());
    assert!("sine_gordon(1".parse::<MeasureSpec>().is_err());
    assert_eq!("constant".parse::<SigmaProfile>().unwrap(), SigmaProfile::Constant);
    assert_eq!("massive(0.01)".parse::<SigmaProfile>().unwrap(), SigmaProfile::Massive(0.01));
    assert_eq!(
        "custom(1,2,3)".parse::<SigmaProfile>().unwrap(),
        SigmaProfile::Custom(vec![1.0, 2.0, 3.0])
    );
    assert!("massive(1,2)".parse::<SigmaProfile>().is_err());
}

#[test]
fn config_validation() {
    assert!(ModelConfig::constant(1, 10.0, 3, MeasureSpec::Dg).is_err());
    assert!(ModelConfig::constant(2, -1.0, 3, MeasureSpec::Dg).is_err());
    assert!(ModelConfig::constant(2, 10.0, 0, MeasureSpec::Dg).is_ok());
    let c = ModelConfig::constant(2, 10.0, 3, MeasureSpec::Dg).unwrap();
    assert!(c.clone().with_q_max(3).is_err());
    assert!(c.clone().with_grid(32).is_err());
    assert!(ModelConfig::new(2, 10.0, 2, &SigmaProfile::Custom(vec![1.0, -1.0, 1.0]), MeasureSpec::Dg).is_err());
    assert!(ModelConfig::new(2, 10.0, 2, &SigmaProfile::Custom(vec![1.0, 1.0]), MeasureSpec::Dg).is_err());
    let t = c.theta();
    assert!((c.theta_k(1) - t).abs() < 1e-15);
}

#[test]
fn constant_profile_closed_form() {
    let c = ModelConfig::constant(2, 10.0, 2, MeasureSpec::Dg).unwrap();
    let p = build_profile(&c).unwrap();
    let u: Vec<f64> = (0..=2).map(|k| 2f64.powi(k + 1) - 1.0).collect();
    for (k, uk) in u.iter().enumerate() {
        assert!((p.u[k] - uk).abs() < 1e-14);
    }
    assert!((p.c(3) - 1.0 / 7.0).abs() < 1e-15);
    for k in 1..=2 {
        let expect = 2f64.powi(-(k as i32)) * (1.0 / u[k - 1] - 1.0 / u[k]);
        assert!((p.c(k) - expect).abs() < 1e-15);
    }
}

#[test]
fn profile_hand_case_n1() {
    let p = build_profile_from(2, &[1.0, 1.0]).unwrap();
    assert!((p.c(1) - 1.0 / 3.0).abs() < 1e-15);
    assert!((p.c(2) - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn massive_preset_bottom_variance() {
    for (b, n) in [(2usize, 6usize), (4, 4), (3, 8)] {
        let bf = b as f64;
        let m2 = bf.powi(-(n as i32));
        let s = massive_profile(b, n, m2).unwrap();
        assert!((s[0] - 1.0).abs() < 2.0 * m2, "b={b} n={n}: {}", s[0]);
        assert!(s.iter().all(|x| *x > 0.0));
    }
    assert!(massive_profile(2, 3, 0.0).is_err());
}

#[test]
fn branch_depth_examples() {
    assert_eq!(branch_depth(5, 5, 2, 3).unwrap(), 0);
    assert_eq!(hier_distance(5, 5, 2, 3).unwrap(), (0.0, 0));
    assert_eq!(branch_depth(0b000, 0b001, 2, 3).unwrap(), 1);
    let (d, k) = hier_distance(0b000, 0b001, 2, 3).unwrap();
    assert_eq!(k, 1);
    assert!((d - 2f64.sqrt()).abs() < 1e-15);
    let (d, k) = hier_distance(0b000, 0b100, 2, 3).unwrap();
    assert_eq!(k, 3);
    assert!((d - 2f64.powf(1.5)).abs() < 1e-14);
    assert!(matches!(branch_depth(8, 0, 2, 3), Err(Error::InvalidParameter(_))));
    assert_eq!(leaf_count(3, 4).unwrap(), 81);
}

// Digit-by-digit prefix comparison, most significant digit first.
fn depth_by_digits(x: usize, y: usize, b: usize, n: usize) -> usize {
    let digits = |mut v: usize| {
        let mut d = vec![0; n];
        for slot in d.iter_mut().rev() {
            *slot = v % b;
            v /= b;
        }
        d
    };
    let (dx, dy) = (digits(x), digits(y));
    let common = dx.iter().zip(&dy).take_while(|(a, c)| a == c).count();
    n - common
}

#[test]
fn branch_depth_matches_digit_prefix() {
    for (b, n) in [(2, 4), (3, 3)] {
        let size = leaf_count(b, n).unwrap();
        for x in 0..size {
            for y in 0..size {
                assert_eq!(branch_depth(x, y, b, n).unwrap(), depth_by_digits(x, y, b, n));
            }
        }
    }
}

#[test]
fn hier_distance_is_ultrametric() {
    for n in 1..=4 {
        let size = leaf_count(2, n).unwrap();
        let d = |x, y| hier_distance(x, y, 2, n).unwrap().0;
        for x in 0..size {
            for y in 0..size {
                assert_eq!(d(x, y), d(y, x));
                for z in 0..size {
                    assert!(d(x, z) <= d(x, y).max(d(y, z)));
                }
            }
        }
    }
}

#[test]
fn supercritical_iff_b_theta_above_one() {
    for b in 2..=6usize {
        let bc = beta_critical(b).unwrap();
        for i in -20..=20 {
            let beta = bc + 0.37 * i as f64 + 0.01;
            if beta <= 0.0 {
                continue;
            }
            let c = ModelConfig::constant(b, beta, 2, MeasureSpec::Dg).unwrap();
            assert_eq!(c.is_supercritical(), beta > bc);
            assert_eq!(b as f64 * c.theta() > 1.0, beta > bc);
        }
    }
}

#[test]
fn sine_gordon_log_concave() {
    for kappa in [0.01, 0.1, 0.5, 1.0, 2.0, 3.5, 5.0] {
        let a = fourier_coeffs(&MeasureSpec::SineGordon { kappa }, 16).unwrap();
        assert!(a.iter().all(|x| *x > 0.0), "kappa={kappa}");
        let r: Vec<f64> = a.windows(2).map(|w| w[1] / w[0]).collect();
        for w in r.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "kappa={kappa}");
        }
    }
}

proptest! {
    #[test]
    fn profile_round_trip(b in 2usize..6, sig in prop::collection::vec(0.05f64..20.0, 1..9)) {
        let p = build_profile_from(b, &sig).unwrap();
        prop_assert!(p.conductances.iter().all(|c| *c > 0.0));
        prop_assert!(p.u.windows(2).all(|w| w[1] > w[0]));
        let back = p.to_sigma_sq();
        for (x, y) in sig.iter().zip(&back) {
            prop_assert!((x - y).abs() <= 1e-12 * x, "{x} vs {y}");
        }
    }

    #[test]
    fn massive_round_trip(b in 2usize..5, n in 1usize..7, m2 in 1e-3f64..10.0) {
        let s = massive_profile(b, n, m2).unwrap();
        let p = build_profile_from(b, &s).unwrap();
        let back = p.to_sigma_sq();
        // sigma^2_k is recovered as (u_k - u_{k-1}) / b^k, so round-off scales with u_k / b^k.
        for (k, (x, y)) in s.iter().zip(&back).enumerate() {
            let scale = p.u[k] / (b as f64).powi(k as i32);
            prop_assert!((x - y).abs() <= 1e-13 * scale, "k={} x={} y={}", k, x, y);
        }
    }
}
