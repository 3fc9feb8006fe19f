use gmclab::covkernel::{build_nondegenerate_h, CovarianceSpec, Perturbation, PerturbationTable};
use gmclab::fieldsim::GridSpec;
use gmclab::potential::*;
use gmclab::Error;
use proptest::prelude::*;

fn spec() -> CovarianceSpec {
    CovarianceSpec::new(1.0, 0.5)
}

/// Composite Simpson rule.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn smooth(grid: &GridSpec) -> Vec<f64> {
    grid.midpoints().iter().map(|x| (3.0 * x).sin() + 0.5 * (x - 0.4).powi(2)).collect()
}

#[test]
fn off_diagonal_entries_match_cell_quadrature() {
    let grid = GridSpec::with_cells(1.0, 16).unwrap();
    let alpha = 0.36;
    let op = build_g(alpha, &grid, &spec()).unwrap();
    let d = grid.delta();
    for (i, j) in [(0, 1), (3, 9), (15, 0), (7, 8)] {
        let z = grid.midpoint(i);
        let want = simpson(|y| (z - y).abs().powf(-alpha), j as f64 * d, (j + 1) as f64 * d, 2000);
        assert!((op.matrix[(i, j)] - want).abs() < 1e-9, "({i},{j})");
    }
    let diag = 2.0 * (0.5 * d).powf(1.0 - alpha) / (1.0 - alpha);
    assert!((op.matrix[(4, 4)] - diag).abs() < 1e-14);
}

#[test]
fn row_sums_match_riesz_potential_of_one() {
    let grid = GridSpec::with_cells(1.0, 100).unwrap();
    let op = build_g(0.25, &grid, &spec()).unwrap();
    for (i, v) in op.apply(&vec![1.0; 100]).iter().enumerate() {
        let z = grid.midpoint(i);
        let closed = (z.powf(0.75) + (1.0 - z).powf(0.75)) / 0.75;
        assert!((v - closed).abs() < 1e-6);
        assert!((v - riesz_indicator_exact(0.25, 1.0, z, 1.0).unwrap()).abs() < 1e-6);
    }
}

#[test]
fn unperturbed_operator_is_exactly_symmetric() {
    let grid = GridSpec::with_cells(1.0, 40).unwrap();
    let op = build_g(0.49, &grid, &spec()).unwrap();
    assert_eq!((&op.matrix - op.matrix.transpose()).abs().max(), 0.0);
}

#[test]
fn small_alpha_operator_is_nearly_cell_width() {
    let grid = GridSpec::with_cells(1.0, 32).unwrap();
    let op = build_g(1e-9, &grid, &spec()).unwrap();
    for v in op.matrix.iter() {
        assert!((v - grid.delta()).abs() < 1e-9);
    }
    assert!(op.condition_estimate > 1e6);
}

#[test]
fn identity_like_operator_inverts_by_division() {
    // The α → 0 limit of a point kernel is Δ I.
    let grid = GridSpec::with_cells(1.0, 8).unwrap();
    let cov = nalgebra::DMatrix::from_fn(8, 8, |i, j| if i == j { 0.0 } else { -1e6 });
    let op = build_g_from_covariance(1e-3, &grid, &cov, "diag").unwrap();
    let rhs: Vec<f64> = (0..8).map(|i| i as f64).collect();
    let inv = invert_g(&op, &rhs).unwrap();
    for (x, r) in inv.solution.iter().zip(&rhs) {
        assert!((x - r / grid.delta()).abs() < 1e-9);
    }
}

#[test]
fn riesz_indicator_examples() {
    assert!((riesz_indicator_exact(0.5, 1.0, 0.5, 1.0).unwrap() - 2.0 * 2f64.sqrt()).abs() < 1e-14);
    for z in [0.0, 0.3, 1.0] {
        assert_eq!(riesz_indicator_exact(0.4, 0.0, z, 1.0).unwrap(), 0.0);
    }
    let t = 0.37;
    let left = riesz_indicator_exact(0.3, t, t - 1e-12, 1.0).unwrap();
    let right = riesz_indicator_exact(0.3, t, t + 1e-12, 1.0).unwrap();
    let at = riesz_indicator_exact(0.3, t, t, 1.0).unwrap();
    assert!((left - at).abs() < 1e-7 && (right - at).abs() < 1e-7);
    assert!((at - t.powf(0.7) / 0.7).abs() < 1e-14);
    assert!(matches!(riesz_indicator_exact(1.0, 0.5, 0.2, 1.0), Err(Error::NonIntegrable(_))));
    assert!(riesz_indicator_exact(0.5, 1.5, 0.2, 1.0).is_err());
}

#[test]
fn inversion_round_trip_recovers_smooth_function() {
    let grid = GridSpec::with_cells(1.0, 128).unwrap();
    let op = build_g(0.25, &grid, &spec()).unwrap();
    let phi = smooth(&grid);
    let back = invert_g(&op, &op.apply(&phi)).unwrap();
    assert!(!back.regularized);
    for (a, b) in back.solution.iter().zip(&phi).skip(4).take(120) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-3), "{a} vs {b}");
    }
}

#[test]
fn inverting_riesz_profile_recovers_indicator() {
    let grid = GridSpec::with_cells(1.0, 128).unwrap();
    let op = build_g(0.3, &grid, &spec()).unwrap();
    let t = 0.5;
    let rhs: Vec<f64> = grid.midpoints().iter().map(|&z| riesz_indicator_exact(0.3, t, z, 1.0).unwrap()).collect();
    let inv = invert_g(&op, &rhs).unwrap();
    let image = op.apply(&inv.solution);
    for (a, b) in image.iter().zip(&rhs) {
        assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
    }
    // Away from the jump the recovered values average to the indicator.
    for (lo, hi, want) in [(8, 48, 1.0), (80, 120, 0.0)] {
        let avg: f64 = inv.solution[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        assert!((avg - want).abs() < 0.05, "cells {lo}..{hi}: {avg}");
    }
}

#[test]
fn mismatched_rhs_is_rejected() {
    let grid = GridSpec::with_cells(1.0, 8).unwrap();
    let op = build_g(0.25, &grid, &spec()).unwrap();
    assert!(invert_g(&op, &[1.0; 7]).is_err());
    assert!(matches!(build_g(1.0, &grid, &spec()), Err(Error::NonIntegrable(_))));
}

#[test]
fn operator_text_round_trip() {
    let grid = GridSpec::with_cells(1.0, 12).unwrap();
    let op = build_g(0.3, &grid, &spec()).unwrap();
    let mut buf = Vec::new();
    op.write_text(&mut buf).unwrap();
    let back = PotentialOperator::read_text(std::str::from_utf8(&buf).unwrap()).unwrap();
    assert_eq!(back.matrix, op.matrix);
    assert_eq!(back.alpha, op.alpha);
    assert_eq!(back.spec_hash, op.spec_hash);
    assert!(PotentialOperator::read_text("").is_err());
}

#[test]
fn sobolev_norm_of_zero_is_zero() {
    let grid = GridSpec::with_cells(1.0, 64).unwrap();
    for s in [-0.4, 0.0, 0.3, 0.7] {
        assert_eq!(sobolev_norm(&grid, &[0.0; 64], s).unwrap(), 0.0);
    }
    assert!(sobolev_norm(&grid, &[0.0; 64], 1.0).is_err());
}

#[test]
fn sobolev_norm_of_sine_is_grid_stable() {
    let norm = |cells: usize| {
        let g = GridSpec::with_cells(1.0, cells).unwrap();
        let f: Vec<f64> = g.midpoints().iter().map(|x| (2.0 * std::f64::consts::PI * x).sin()).collect();
        sobolev_norm(&g, &f, 0.5).unwrap()
    };
    let (a, b) = (norm(1024), norm(2048));
    assert!(a.is_finite() && ((a - b) / b).abs() < 0.01, "{a} vs {b}");
}

#[test]
fn indicator_is_sobolev_only_below_one_half() {
    let norms = |s: f64| -> Vec<f64> {
        [256, 1024, 4096]
            .iter()
            .map(|&n| {
                let g = GridSpec::with_cells(1.0, n).unwrap();
                let f: Vec<f64> = g.midpoints().iter().map(|&x| if x < 0.5 { 1.0 } else { 0.0 }).collect();
                sobolev_norm(&g, &f, s).unwrap()
            })
            .collect()
    };
    // Squared norms change by ~c·Δ^{1-2s} per refinement: shrinking increments
    // (a finite limit) below one half, growing ones above.
    let inc = |v: &[f64]| [v[1] * v[1] - v[0] * v[0], v[2] * v[2] - v[1] * v[1]];
    let low = inc(&norms(0.4));
    let high = inc(&norms(0.6));
    assert!(low[1] < 0.8 * low[0], "{low:?}");
    assert!(high[1] > 1.2 * high[0], "{high:?}");
}

#[test]
fn constructed_spec_is_nondegenerate_for_several_betas() {
    let b = build_nondegenerate_h(2.0, &spec()).unwrap();
    let grid = GridSpec::with_cells(1.0, 64).unwrap();
    for beta in [0.5, 0.7] {
        let r = nondegeneracy_check(&b.spec, beta, &grid, 1).unwrap();
        assert!(r.c0 > 0.0, "beta {beta}: {}", r.c0);
        assert!((r.s - 0.5 * (1.0 - beta * beta)).abs() < 1e-15);
    }
}

#[test]
fn negative_spectrum_is_reported_with_witness() {
    // Subtracting a strong cosine at frequency 4 makes the kernel's spectrum dip there.
    let h = PerturbationTable::from_fn(1.0, 4097, |u| -3.0 * (8.0 * std::f64::consts::PI * u).cos()).unwrap();
    let s = spec().with_h(Perturbation::Table(h));
    let grid = GridSpec::with_cells(1.0, 64).unwrap();
    match nondegeneracy_check(&s, 0.5, &grid, 1) {
        Err(Error::NonDegeneracy { quotient, witness }) => {
            assert!(quotient < 0.0);
            assert_eq!(witness.len(), 64);
            // Independent check of the quotient sign: ⟨ψ, Gψ⟩ < 0.
            let op = build_g(0.25, &grid, &s).unwrap();
            assert!(op.pairing(&witness, &witness) < 0.0);
        }
        other => panic!("expected a violation, got {other:?}"),
    }
}

#[test]
fn holder_exponent_of_square_root_cusp() {
    let grid = GridSpec::with_cells(1.0, 1024).unwrap();
    let c = grid.midpoint(512);
    let g: Vec<f64> = grid.midpoints().iter().map(|x| (x - c).abs().sqrt()).collect();
    let eta = holder_exponent(&grid, &g).unwrap();
    assert!((eta - 0.5).abs() < 0.02, "{eta}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn operator_is_symmetric_and_positive(alpha in 0.05..0.95f64, cells in 2usize..40) {
        let grid = GridSpec::with_cells(1.0, cells).unwrap();
        let op = build_g(alpha, &grid, &spec()).unwrap();
        prop_assert_eq!((&op.matrix - op.matrix.transpose()).abs().max(), 0.0);
        prop_assert!(op.smallest_eigenvalue() > 0.0);
    }
}
