use gmclab::covkernel::{var_mollified, CovarianceSpec};
use gmclab::exec::Execution;
use gmclab::fieldsim::{build_joint_covariance, FieldSample, FieldSampler, GridSpec};
use gmclab::gmc::*;

fn spec() -> CovarianceSpec {
    CovarianceSpec::new(1.0, 0.5)
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn constant_sample(grid: &GridSpec, eps: f64, c: f64) -> FieldSample {
    FieldSample {
        grid: *grid,
        eps_levels: vec![eps],
        values: vec![vec![c; grid.n_cells()]],
        seed: 0,
        replicate: 0,
        jitter_used: 0.0,
    }
}

#[test]
fn vanishing_beta_gives_lebesgue_masses() {
    let grid = GridSpec::with_cells(2.0, 50).unwrap();
    let s = constant_sample(&grid, 0.1, 1.7);
    let m = gmc_from_field(&s, 0, 1e-12, &spec()).unwrap();
    for &c in &m.cell_mass {
        assert!((c - grid.delta()).abs() < 1e-12);
    }
    assert!((m.total_mass() - 2.0).abs() < 1e-10);
}

#[test]
fn constant_path_has_closed_form_mass() {
    let grid = GridSpec::with_cells(1.0, 40).unwrap();
    let (beta, c, eps) = (0.6, 0.8, 0.05);
    let s2 = var_mollified(eps, &spec()).unwrap();
    let m = gmc_from_field(&constant_sample(&grid, eps, c), 0, beta, &spec()).unwrap();
    let oracle = (beta * c - 0.5 * beta * beta * s2).exp();
    assert!((m.total_mass() - oracle).abs() < 1e-13 * oracle);
}

#[test]
fn beta_outside_unit_interval_is_rejected() {
    let grid = GridSpec::with_cells(1.0, 4).unwrap();
    let s = constant_sample(&grid, 0.1, 0.0);
    assert!(gmc_from_field(&s, 0, 1.0, &spec()).is_err());
    assert!(gmc_from_field(&s, 0, 0.0, &spec()).is_err());
    assert!(gmc_from_field(&s, 1, 0.5, &spec()).is_err());
}

#[test]
fn mean_total_mass_is_domain_length() {
    let grid = GridSpec::with_cells(1.0, 128).unwrap();
    let sampler = FieldSampler::new(&grid, &[0.02], &spec()).unwrap();
    let masses = simulate_total_masses(&sampler, &spec(), &[(0, 0.5)], 10_000, 3, Execution::Parallel).unwrap();
    let (m, se) = mean_se(&masses[0]);
    assert!((m - 1.0).abs() < 3.0 * se, "{m} (se {se})");
    let rec = moment_of_masses(&masses[0], 1.0, 0.5, 0.02, 3).unwrap();
    assert!(rec.ci_low <= 1.0 && 1.0 <= rec.ci_high, "{rec:?}");
    assert_eq!(rec.n_replicates, 10_000);
}

#[test]
fn second_moment_matches_discrete_exponential_covariance_sum() {
    // E[M²] = Δ² Σ_ij exp(β² C_ij) for the discretized measure.
    let (beta, eps) = (0.5, 0.04);
    let grid = GridSpec::with_cells(1.0, 64).unwrap();
    let c = build_joint_covariance(&grid, &[eps], &spec()).unwrap();
    let d = grid.delta();
    let oracle: f64 = c.iter().map(|v| (beta * beta * v).exp()).sum::<f64>() * d * d;
    let sampler = FieldSampler::from_covariance(&grid, &[eps], &c).unwrap();
    let masses = simulate_total_masses(&sampler, &spec(), &[(0, beta)], 20_000, 8, Execution::Parallel).unwrap();
    let sq: Vec<f64> = masses[0].iter().map(|m| m * m).collect();
    let (m, se) = mean_se(&sq);
    assert!((m - oracle).abs() < 4.0 * se, "{m} vs {oracle} (se {se})");
}

#[test]
fn negative_moment_is_finite_and_stable_across_levels() {
    let grid = GridSpec::with_cells(1.0, 256).unwrap();
    let r = kahane_negative_moment_check(&spec(), &grid, 0.02, 0.01, -1.0, 4000, 21, Execution::Parallel).unwrap();
    for rec in [&r.coarse, &r.fine] {
        assert!(rec.estimate.is_finite() && rec.estimate > 1.0);
    }
    assert!(r.coarse.ci_low <= r.fine.ci_high && r.fine.ci_low <= r.coarse.ci_high);
}

#[test]
fn equal_levels_give_equal_estimates() {
    let grid = GridSpec::with_cells(1.0, 64).unwrap();
    let r = kahane_negative_moment_check(&spec(), &grid, 0.05, 0.05, -2.0, 500, 4, Execution::Parallel).unwrap();
    assert_eq!(r.coarse.estimate, r.fine.estimate);
    assert!(kahane_negative_moment_check(&spec(), &grid, 0.05, 0.05, 1.0, 10, 4, Execution::Parallel).is_err());
}

#[test]
fn moment_beyond_threshold_warns() {
    let rec = moment_of_masses(&[1.0, 2.0, 0.5], 9.0, 0.5, 0.01, 1).unwrap();
    assert!(rec.warning.is_some());
    assert!(moment_of_masses(&[1.0], 0.0, 0.5, 0.01, 1).is_err());
    assert!(total_mass_moment(&[], 1.0, 1).is_err());
}

#[test]
fn lebesgue_measure_has_unit_holder_exponent() {
    let grid = GridSpec::with_cells(1.0, 512).unwrap();
    let ms = vec![GmcMeasure::lebesgue(&grid); 100];
    let fit = holder_modulus_fit(&ms).unwrap();
    assert!((fit.eta - 1.0).abs() < 0.05, "{}", fit.eta);
}

#[test]
fn holder_fit_needs_enough_measures() {
    let grid = GridSpec::with_cells(1.0, 64).unwrap();
    assert!(holder_modulus_fit(&vec![GmcMeasure::lebesgue(&grid); 10]).is_err());
}

#[test]
fn small_beta_measure_is_holder_regular() {
    let grid = GridSpec::with_cells(1.0, 256).unwrap();
    let sampler = FieldSampler::new(&grid, &[0.01], &spec()).unwrap();
    let s2 = var_mollified(0.01, &spec()).unwrap();
    let ms = sampler.map_replicates(2, 100, Execution::Parallel, |s| {
        GmcMeasure::from_field_values(&grid, 0.3, 0.01, &s.values[0], s2)
    });
    let fit = holder_modulus_fit(&ms).unwrap();
    assert!(fit.eta > 0.0 && fit.eta < 1.0, "{}", fit.eta);
}

#[test]
fn cumulative_mass_ends_at_total() {
    let grid = GridSpec::with_cells(1.0, 8).unwrap();
    let m = GmcMeasure::from_values(&grid, 0.5, 0.1, &[0.1, -0.2, 0.3, 0.0, 1.0, -1.0, 0.5, 0.2], &[0.5; 8]);
    let cum = m.cumulative();
    assert_eq!(cum[0], 0.0);
    assert!((cum[8] - m.total_mass()).abs() < 1e-15);
    assert!((m.integrate(&[1.0; 8]) - m.total_mass()).abs() < 1e-15);
}
