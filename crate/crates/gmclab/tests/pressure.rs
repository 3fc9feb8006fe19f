use gmclab::chaos::{wick_exp, GaussianPoint};
use gmclab::covkernel::{var_mollified, CovarianceSpec, MollifierFamily};
use gmclab::exec::Execution;
use gmclab::fieldsim::{build_joint_covariance, principal_loadings, FieldSampler, GridSpec, Loadings};
use gmclab::gmc::GmcMeasure;
use gmclab::pressure::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn spec(beta: f64) -> CovarianceSpec {
    CovarianceSpec::new(1.0, beta)
}

fn sine(t_len: f64) -> ForcingSpec {
    ForcingSpec::sine(t_len, 1.0, 1)
}

fn gmc_draws(grid: &GridSpec, eps: f64, beta: f64, count: usize, seed: u64) -> Vec<(Vec<f64>, GmcMeasure)> {
    let s = spec(beta);
    let sampler = FieldSampler::new(grid, &[eps], &s).unwrap();
    let s2 = var_mollified(eps, &s).unwrap();
    sampler.map_replicates(seed, count, Execution::Parallel, |f| {
        let mu = GmcMeasure::from_field_values(grid, beta, eps, &f.values[0], s2);
        (f.values[0].clone(), mu)
    })
}

fn three_factor_loadings(grid: &GridSpec) -> Loadings {
    let c = build_joint_covariance(grid, &[0.5], &spec(0.4)).unwrap();
    principal_loadings(&c, 3, 0.0)
}

#[test]
fn lebesgue_ivp_without_forcing_is_affine() {
    let grid = GridSpec::with_cells(1.0, 50).unwrap();
    let u = solve_pathwise(&GmcMeasure::lebesgue(&grid), &ForcingSpec::constant(1.0, 0.0), &BoundaryData::new(BcKind::Ivp, 1.0, 2.0)).unwrap();
    for (k, t) in grid.nodes().into_iter().enumerate() {
        assert!((u.values[k] - (1.0 + 2.0 * t)).abs() < 1e-14);
    }
}

#[test]
fn ivp_without_forcing_follows_cumulative_mass() {
    let grid = GridSpec::with_cells(1.0, 128).unwrap();
    let bc = BoundaryData::new(BcKind::Ivp, 1.0, 2.0);
    for (_, mu) in gmc_draws(&grid, 0.02, 0.5, 5, 1) {
        let u = solve_pathwise(&mu, &ForcingSpec::constant(1.0, 0.0), &bc).unwrap();
        for (v, m) in u.values.iter().zip(mu.cumulative()) {
            assert!((v - (1.0 + 2.0 * m)).abs() < 1e-13);
        }
    }
}

#[test]
fn lebesgue_dirichlet_matches_closed_form() {
    // -U'' = c, U(0) = a, U(T) = b: U = a + (b-a) t/T + c t (T-t)/2.
    let (t_len, a, b, c) = (2.0, 0.5, -1.0, 3.0);
    let grid = GridSpec::with_cells(t_len, 40).unwrap();
    let u = solve_pathwise(&GmcMeasure::lebesgue(&grid), &ForcingSpec::constant(t_len, c), &BoundaryData::new(BcKind::Dirichlet, a, b)).unwrap();
    for (k, t) in grid.nodes().into_iter().enumerate() {
        let want = a + (b - a) * t / t_len + 0.5 * c * t * (t_len - t);
        assert!((u.values[k] - want).abs() < 1e-13, "t={t}");
    }
}

#[test]
fn dirichlet_endpoint_is_reproduced() {
    let grid = GridSpec::with_cells(1.0, 128).unwrap();
    let bc = BoundaryData::new(BcKind::Dirichlet, 0.3, -1.4);
    for (_, mu) in gmc_draws(&grid, 0.02, 0.6, 20, 2) {
        let u = solve_pathwise(&mu, &ForcingSpec::constant(1.0, 0.0), &bc).unwrap();
        assert_eq!(u.values[0], 0.3);
        assert!((u.values[128] + 1.4).abs() <= 1e-12);
    }
}

#[test]
fn dirichlet_kappa_is_bounded_by_forcing_mass() {
    let grid = GridSpec::with_cells(1.0, 128).unwrap();
    let f = ForcingSpec::sine(1.0, std::f64::consts::FRAC_PI_2, 1);
    assert!((f.abs_total() - 1.0).abs() < 1e-15);
    let bc = BoundaryData::new(BcKind::Dirichlet, 0.7, 0.7);
    for (_, mu) in gmc_draws(&grid, 0.02, 0.7, 200, 3) {
        let u = solve_pathwise(&mu, &f, &bc).unwrap();
        assert!(u.kappa.abs() <= 1.0, "{}", u.kappa);
    }
}

#[test]
fn neumann_flux_is_reproduced() {
    let grid = GridSpec::with_cells(1.0, 256).unwrap();
    let f = sine(1.0);
    let bc = BoundaryData::new(BcKind::Neumann, 0.7, 0.7);
    let s = spec(0.5);
    let sampler = FieldSampler::new(&grid, &[0.02], &s).unwrap();
    let s2 = var_mollified(0.02, &s).unwrap();
    for r in 0..5 {
        let field = sampler.sample(4, r);
        let mu = GmcMeasure::from_field_values(&grid, 0.5, 0.02, &field.values[0], s2);
        let u = solve_pathwise(&mu, &f, &bc).unwrap();
        let rep = verify_pathwise_ode(&u, &field, 0, 0.5, &f, &s).unwrap();
        assert!((rep.flux_left - 0.7).abs() < grid.delta(), "{}", rep.flux_left);
        assert!((rep.flux_right - 0.7).abs() < grid.delta(), "{}", rep.flux_right);
    }
}

#[test]
fn periodic_solution_closes_up() {
    let grid = GridSpec::with_cells(1.0, 128).unwrap();
    let bc = BoundaryData::new(BcKind::Periodic, 0.0, 0.0);
    for (_, mu) in gmc_draws(&grid, 0.02, 0.5, 10, 5) {
        let u = solve_pathwise(&mu, &sine(1.0), &bc).unwrap();
        assert!((u.values[128] - u.values[0]).abs() < 1e-12);
    }
}

#[test]
fn incompatible_boundary_data_is_rejected() {
    let grid = GridSpec::with_cells(1.0, 8).unwrap();
    let mu = GmcMeasure::lebesgue(&grid);
    let c = ForcingSpec::constant(1.0, 1.0);
    let err = solve_pathwise(&mu, &c, &BoundaryData::new(BcKind::Periodic, 0.0, 0.0)).unwrap_err();
    assert!(err.to_string().contains("mean-zero"), "{err}");
    assert!(solve_pathwise(&mu, &c, &BoundaryData::new(BcKind::Neumann, 0.0, 0.0)).is_err());
    assert!(solve_pathwise(&mu, &c, &BoundaryData::new(BcKind::Neumann, 1.0, 0.0)).is_ok());
}

#[test]
fn residual_is_small_and_shrinks_with_the_grid() {
    let s = spec(0.5);
    let study = residual_study(&s, 0.02, &[256, 512, 1024], &sine(1.0), &BoundaryData::new(BcKind::Dirichlet, 0.0, 1.0), 3, 6, Execution::Parallel).unwrap();
    assert!(study.max_residual.windows(2).all(|w| w[1] < w[0]), "{:?}", study.max_residual);
    assert!(study.orders.iter().all(|&o| o > 1.0), "{:?}", study.orders);
}

#[test]
fn vanishing_beta_residual_is_the_deterministic_discretization_error() {
    let grid = GridSpec::with_cells(1.0, 64).unwrap();
    let f = sine(1.0);
    let bc = BoundaryData::new(BcKind::Dirichlet, 0.0, 0.0);
    let u = solve_pathwise(&GmcMeasure::lebesgue(&grid), &f, &bc).unwrap();
    let zeros = vec![0.0; 64];
    let rep = residual_with_variances(&u, &zeros, &zeros, 0.0, &f);
    // Staggered differences of the exact flux: the error is Δ²/24 |f''| at most.
    let bound = grid.delta().powi(2) / 24.0 * (2.0 * std::f64::consts::PI).powi(2) * 1.01;
    assert!(rep.max_residual <= bound && rep.max_residual > 0.0, "{} vs {bound}", rep.max_residual);
}

#[test]
fn zero_test_point_gives_deterministic_problem() {
    let grid = GridSpec::with_cells(1.0, 64).unwrap();
    let f = ForcingSpec::constant(1.0, 2.0);
    let bc = BoundaryData::new(BcKind::Dirichlet, 1.0, 0.0);
    let u = solve_wick_s_side(&grid, &[0.0; 64], &f, &bc).unwrap();
    for (k, t) in grid.nodes().into_iter().enumerate() {
        let want = 1.0 - t + t * (1.0 - t);
        assert!((u.values[k] - want).abs() < 1e-13);
    }
    assert_eq!(u.values[64], 0.0);
}

#[test]
fn chaos_solution_evaluated_pathwise_matches_direct_solve() {
    let grid = GridSpec::with_cells(1.0, 64).unwrap();
    let l = three_factor_loadings(&grid);
    let f = ForcingSpec::constant(1.0, 0.0);
    let bc = BoundaryData::new(BcKind::Ivp, 1.0, 2.0);
    let sol = solve_wick_chaos(&grid, &l, 0.4, &f, &bc, 14).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let xi: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let direct = solve_pathwise_reduced(&grid, &l, 0.4, &xi, &f, &bc).unwrap();
        let chaos = sol.evaluate(&xi).unwrap();
        for (a, b) in chaos.iter().zip(&direct.values) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}

#[test]
fn s_transform_of_chaos_solution_matches_deterministic_solver() {
    let grid = GridSpec::with_cells(1.0, 64).unwrap();
    let l = three_factor_loadings(&grid);
    let f = sine(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for kind in [BcKind::Ivp, BcKind::Dirichlet] {
        let bc = BoundaryData::new(kind, 0.5, 1.5);
        let sol = solve_wick_chaos(&grid, &l, 0.4, &f, &bc, 12).unwrap();
        for _ in 0..20 {
            let c: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let pt = GaussianPoint::new(c, 0.2);
            let det = solve_wick_s_side(&grid, &s_side_profile(&l, 0.4, &pt), &f, &bc).unwrap();
            let st = sol.s_transform(&pt).unwrap();
            for (a, b) in st.iter().zip(&det.values) {
                assert!((a - b).abs() <= sol.truncation_loss + 1e-9, "{kind:?}: {a} vs {b}");
            }
            if kind == BcKind::Dirichlet {
                assert!((det.values[64] - 1.5).abs() <= 1e-14);
            }
        }
    }
}

#[test]
fn constant_field_dirichlet_kappa_is_a_wick_exponential() {
    // X = σξ on every cell: ∫e^{◇βX} = T e^{◇βσξ}, so κ = ((U₂-U₁)/T) e^{◇(-βσξ)}.
    let (sigma, beta, cap) = (0.8, 0.5, 12);
    let grid = GridSpec::with_cells(1.0, 16).unwrap();
    let l = Loadings { matrix: nalgebra::DMatrix::from_element(16, 1, sigma), eigenvalues: vec![16.0 * sigma * sigma], discarded_fraction: 0.0 };
    let bc = BoundaryData::new(BcKind::Dirichlet, 1.0, 3.0);
    let sol = solve_wick_chaos(&grid, &l, beta, &ForcingSpec::constant(1.0, 0.0), &bc, cap).unwrap();
    let neg = wick_exp(&GaussianPoint::new(vec![-sigma], beta), cap).unwrap().value.scale(2.0);
    for (a, b) in sol.kappa.coeffs().iter().zip(neg.coeffs()) {
        assert!((a - b).abs() < 1e-13, "{a} vs {b}");
    }
    // e^{◇(-X)} = 1 / (e^{E[X²]} e^{◇X}) pointwise.
    let pos = wick_exp(&GaussianPoint::new(vec![sigma], beta), cap).unwrap().value;
    let var = (beta * sigma).powi(2);
    for x in [-1.0, 0.0, 0.5, 1.5] {
        let lhs = sol.kappa.evaluate(&[x]).unwrap() / 2.0;
        let rhs = 1.0 / (var.exp() * pos.evaluate(&[x]).unwrap());
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }
}

#[test]
fn vanishing_beta_convergence_distances_collapse() {
    let grid = GridSpec::with_cells(1.0, 64).unwrap();
    let s = spec(1e-6);
    let sampler = FieldSampler::new(&grid, &[0.08, 0.04, 0.02], &s).unwrap();
    let r = convergence_study(&sampler, &s, &sine(1.0), &BoundaryData::new(BcKind::Dirichlet, 0.0, 1.0), 50, 1, Execution::Parallel).unwrap();
    assert!(r.ky_fan.iter().all(|&k| k < 1e-4), "{:?}", r.ky_fan);
}

#[test]
fn convergence_study_distances_decrease() {
    let grid = GridSpec::with_cells(1.0, 256).unwrap();
    let s = spec(0.5);
    let sampler = FieldSampler::new(&grid, &[0.04, 0.02, 0.01], &s).unwrap();
    let r = convergence_study(&sampler, &s, &sine(1.0), &BoundaryData::new(BcKind::Dirichlet, 0.0, 1.0), 400, 2, Execution::Parallel).unwrap();
    assert!(r.strictly_decreasing, "{:?}", r.ky_fan);
    assert_eq!(r.ky_fan.len(), 2);
}

#[test]
fn same_mollifier_family_is_not_distinguished() {
    let grid = GridSpec::with_cells(1.0, 128).unwrap();
    let a = spec(0.5);
    let b = spec(0.5).with_mollifier(MollifierFamily::TruncatedGaussian { width: 0.15 });
    let f = sine(1.0);
    let bc = BoundaryData::new(BcKind::Dirichlet, 0.0, 1.0);
    let r = mollifier_swap_test(&grid, 0.01, &a, &b, &f, &bc, 1000, 3, Execution::Parallel).unwrap();
    assert!(!r.rejected, "{r:?}");
}
