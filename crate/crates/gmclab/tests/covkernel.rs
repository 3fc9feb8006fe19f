use gmclab::covkernel::*;
use gmclab::fieldsim::GridSpec;
use gmclab::potential::nondegeneracy_check;
use proptest::prelude::*;

fn spec() -> CovarianceSpec {
    CovarianceSpec::new(1.0, 0.5)
}

fn bump(x: f64) -> f64 {
    if x.abs() >= 0.5 {
        0.0
    } else {
        (-1.0 / (1.0 - 4.0 * x * x)).exp()
    }
}

/// θ_ε is the law of ε(A1 + A2) with A_i iid ∝ bump, so the covariance at lag d
/// is E[log 1/|d - ε(A1+A2) - ε'(B1+B2)|]; midpoint rule in four dimensions.
fn brute_force_cov(d: f64, eps: f64, eps2: f64) -> f64 {
    let n = 80;
    let nodes: Vec<f64> = (0..n).map(|i| -0.5 + (i as f64 + 0.5) / n as f64).collect();
    let w: Vec<f64> = nodes.iter().map(|&x| bump(x)).collect();
    let z: f64 = w.iter().sum();
    let mut acc = 0.0;
    for (i, &a1) in nodes.iter().enumerate() {
        for (j, &a2) in nodes.iter().enumerate() {
            for (k, &b1) in nodes.iter().enumerate() {
                for (l, &b2) in nodes.iter().enumerate() {
                    let u = d - eps * (a1 + a2) - eps2 * (b1 + b2);
                    acc += w[i] * w[j] * w[k] * w[l] * -u.abs().ln();
                }
            }
        }
    }
    acc / z.powi(4)
}

#[test]
fn exact_kernel_off_diagonal_is_log_inverse_distance() {
    let c = cov_exact(0.25, 0.75, &spec()).unwrap();
    assert!((c.finite().unwrap() - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn exact_kernel_is_infinite_on_diagonal() {
    assert_eq!(cov_exact(0.3, 0.3, &spec()).unwrap(), Cov::Infinite);
}

#[test]
fn exact_kernel_adds_tabulated_perturbation() {
    let amp = 0.05 / (0.5 * (1.0 + (std::f64::consts::PI * 0.1).cos()));
    let h = |u: f64| amp * 0.5 * (1.0 + (std::f64::consts::PI * u).cos());
    let table = PerturbationTable::from_fn(1.0, 4097, h).unwrap();
    let s = spec().with_h(Perturbation::Table(table));
    let v = cov_exact(0.1, 0.2, &s).unwrap().finite().unwrap();
    assert!((v - (10f64.ln() + 0.05)).abs() < 1e-6, "{v}");
}

#[test]
fn exact_kernel_rejects_points_outside_domain() {
    assert!(cov_exact(-0.1, 0.5, &spec()).is_err());
    assert!(cov_exact(0.5, 1.5, &spec()).is_err());
}

#[test]
fn mollified_covariance_matches_brute_force_quadrature() {
    for (d, e1, e2) in [(0.3, 0.02, 0.01), (0.07, 0.02, 0.02), (0.5, 0.05, 0.01)] {
        let fast = cov_mollified(0.1 + d, 0.1, e1, e2, &spec()).unwrap().value;
        let slow = brute_force_cov(d, e1, e2);
        assert!((fast - slow).abs() < 1e-8, "d={d}: {fast} vs {slow}");
    }
}

#[test]
fn mollified_covariance_approaches_exact_off_diagonal() {
    let v = cov_mollified(0.25, 0.75, 1e-4, 1e-4, &spec()).unwrap().value;
    assert!((v - 2f64.ln()).abs() < 1e-3, "{v}");
}

#[test]
fn diagonal_mollified_covariance_is_variance() {
    let s = spec();
    let c = cov_mollified(0.5, 0.5, 0.01, 0.01, &s).unwrap().value;
    assert_eq!(c, var_mollified(0.01, &s).unwrap());
}

#[test]
fn variance_grows_as_smoothing_shrinks() {
    let s = spec();
    let coarse = var_mollified(0.01, &s).unwrap();
    let fine = var_mollified(0.001, &s).unwrap();
    assert!(fine > coarse);
    // σ_ε² = log(1/ε) + const
    assert!(((fine - coarse) - 10f64.ln()).abs() < 1e-6, "{}", fine - coarse);
}

#[test]
fn variance_does_not_depend_on_location() {
    let s = spec();
    let v: Vec<f64> = [0.3, 0.5, 0.7]
        .iter()
        .map(|&z| cov_mollified(z, z, 0.01, 0.01, &s).unwrap().value)
        .collect();
    assert!((v[0] - v[1]).abs() < 1e-8 && (v[1] - v[2]).abs() < 1e-8);
}

#[test]
fn coarse_variance_is_finite_and_positive() {
    let v = var_mollified(0.05, &spec()).unwrap();
    assert!(v.is_finite() && v > 0.0);
}

#[test]
fn nonpositive_smoothing_is_rejected() {
    assert!(var_mollified(0.0, &spec()).is_err());
    assert!(cov_mollified(0.2, 0.4, -0.01, 0.01, &spec()).is_err());
}

#[test]
fn spec_violations_are_reported() {
    let bad = CovarianceSpec::new(-1.0, 1.2);
    assert_eq!(bad.violations().len(), 2);
    let short = PerturbationTable::from_fn(0.5, 2048, |_| 0.0).unwrap();
    assert!(spec().with_h(Perturbation::Table(short)).validate().is_err());
}

#[test]
fn short_perturbation_tables_are_rejected() {
    assert!(PerturbationTable::from_fn(1.0, MIN_H_NODES - 1, |_| 0.0).is_err());
}

fn naive_min_spectrum(samples: &[f64], dx: f64) -> f64 {
    let n = samples.len();
    let mut lo = f64::INFINITY;
    for m in 0..=n / 2 {
        let w = 2.0 * std::f64::consts::PI * m as f64 / n as f64;
        let s: f64 = samples.iter().enumerate().map(|(j, v)| v * (w * j as f64).cos()).sum();
        lo = lo.min(s * dx);
    }
    lo
}

fn radial_bump(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - x * x)).exp()
    }
}

#[test]
fn raw_cutoff_log_spectrum_dips_negative() {
    let (_, dx) = spectral_box(1.0);
    assert!(naive_min_spectrum(&cutoff_log_samples(1.0), dx) < 0.0);
}

#[test]
fn constructed_perturbation_makes_spectrum_nonnegative() {
    let r_cut = 1.0;
    let b = build_nondegenerate_h(r_cut, &spec()).unwrap();
    assert!(b.raw_margin < 0.0);
    assert!(b.spectral_margin >= 0.0);
    // The continuous transform of h is the bump itself; add it to the direct DFT
    // of the cut-off logarithm.
    let (period, dx) = spectral_box(r_cut);
    let base = cutoff_log_samples(r_cut);
    let n = base.len();
    let mut lo = f64::INFINITY;
    for m in 0..=n / 2 {
        let w = 2.0 * std::f64::consts::PI * m as f64 / n as f64;
        let s: f64 = base.iter().enumerate().map(|(j, v)| v * (w * j as f64).cos()).sum();
        let xi = m as f64 / period;
        lo = lo.min(s * dx + b.bump_height * radial_bump(xi / b.bump_radius));
    }
    assert!(lo >= -1e-9, "{lo}");
    assert!(matches!(b.spec.h, Perturbation::Table(_)));
}

#[test]
fn cutoff_radius_below_horizon_is_rejected() {
    assert!(build_nondegenerate_h(0.5, &spec()).is_err());
}

#[test]
fn constructed_spec_is_nondegenerate() {
    let b = build_nondegenerate_h(2.0, &spec()).unwrap();
    let grid = GridSpec::with_cells(1.0, 64).unwrap();
    let r = nondegeneracy_check(&b.spec, 0.5, &grid, 3).unwrap();
    assert!(r.c0 > 0.0, "{}", r.c0);
}

#[test]
fn mollifier_profiles_are_normalized() {
    assert!(MollifierFamily::Bump.normalization_error() < 1e-10);
    assert!(MollifierFamily::TruncatedGaussian { width: 0.2 }.normalization_error() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mollified_covariance_is_symmetric(x in 0.0..1.0f64, y in 0.0..1.0f64, e1 in 0.005..0.05f64, e2 in 0.005..0.05f64) {
        let s = spec();
        let a = cov_mollified(x, y, e1, e2, &s).unwrap().value;
        let b = cov_mollified(y, x, e2, e1, &s).unwrap().value;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn spec_text_round_trips(t in 0.1..10.0f64, beta in 0.01..0.99f64, width in proptest::option::of(0.05..0.5f64)) {
        let m = width.map_or(MollifierFamily::Bump, |w| MollifierFamily::TruncatedGaussian { width: w });
        let s = CovarianceSpec::new(t, beta).with_mollifier(m);
        let back = CovarianceSpec::from_text(&s.to_text()).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.hash(), s.hash());
    }
}
