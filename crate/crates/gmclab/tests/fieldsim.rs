use gmclab::covkernel::{cov_exact, cov_mollified, var_mollified, CovarianceSpec};
use gmclab::exec::Execution;
use gmclab::fieldsim::*;
use proptest::prelude::*;

fn spec() -> CovarianceSpec {
    CovarianceSpec::new(1.0, 0.5)
}

/// Mean and standard error of `values`.
fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn two_point_covariance_is_close_to_log_two() {
    let grid = GridSpec::new(1.0, 3).unwrap();
    assert_eq!(grid.midpoints(), vec![0.25, 0.75]);
    let c = build_joint_covariance(&grid, &[0.01], &spec()).unwrap();
    assert_eq!(c.shape(), (2, 2));
    let exact = cov_exact(0.25, 0.75, &spec()).unwrap().finite().unwrap();
    assert!((c[(0, 1)] - exact).abs() < 1e-2, "{}", c[(0, 1)]);
}

#[test]
fn identical_levels_have_identical_blocks() {
    let grid = GridSpec::with_cells(1.0, 16).unwrap();
    let c = build_joint_covariance(&grid, &[0.05, 0.05], &spec()).unwrap();
    let n = 16;
    for i in 0..n {
        for j in 0..n {
            assert_eq!(c[(i, j)], c[(n + i, n + j)]);
            assert_eq!(c[(i, j)], c[(i, n + j)]);
        }
    }
}

#[test]
fn joint_covariance_is_exactly_symmetric() {
    let grid = GridSpec::with_cells(1.0, 24).unwrap();
    let c = build_joint_covariance(&grid, &[0.08, 0.04], &spec()).unwrap();
    assert_eq!((&c - c.transpose()).abs().max(), 0.0);
}

#[test]
fn oversized_covariance_is_refused() {
    let grid = GridSpec::with_cells(1.0, 64).unwrap();
    let r = build_joint_covariance_capped(&grid, &[0.1, 0.05], &spec(), 100, Execution::Sequential);
    assert!(matches!(r, Err(gmclab::Error::Size { dim: 128, cap: 100 })));
}

#[test]
fn empty_or_nonpositive_levels_are_refused() {
    let grid = GridSpec::with_cells(1.0, 8).unwrap();
    assert!(build_joint_covariance(&grid, &[], &spec()).is_err());
    assert!(build_joint_covariance(&grid, &[0.1, 0.0], &spec()).is_err());
}

#[test]
fn same_seed_gives_identical_samples() {
    let grid = GridSpec::with_cells(1.0, 32).unwrap();
    let a = sample_fields(&grid, &[0.05], &spec(), 42, 20).unwrap();
    let b = sample_fields(&grid, &[0.05], &spec(), 42, 20).unwrap();
    assert_eq!(a, b);
    let c = sample_fields(&grid, &[0.05], &spec(), 43, 20).unwrap();
    assert_ne!(a[0].values, c[0].values);
}

#[test]
fn parallel_and_sequential_replicates_agree() {
    let grid = GridSpec::with_cells(1.0, 32).unwrap();
    let s = FieldSampler::new(&grid, &[0.05, 0.025], &spec()).unwrap();
    let par = s.map_replicates(9, 50, Execution::Parallel, |x| x.values);
    let seq = s.map_replicates(9, 50, Execution::Sequential, |x| x.values);
    assert_eq!(par, seq);
    assert_eq!(s.sample(9, 17).values, par[17]);
}

#[test]
fn midpoint_variance_matches_mollified_variance() {
    let eps = 0.02;
    let grid = GridSpec::with_cells(1.0, 64).unwrap();
    let s = FieldSampler::new(&grid, &[eps], &spec()).unwrap();
    let sq = s.map_replicates(11, 10_000, Execution::Parallel, |x| x.values[0][32].powi(2));
    let (m, se) = mean_se(&sq);
    let oracle = var_mollified(eps, &spec()).unwrap();
    assert!((m - oracle).abs() < 3.0 * se, "{m} vs {oracle} (se {se})");
}

#[test]
fn cross_level_covariance_matches_mollified_covariance() {
    // Lag-only dependence: cells 2 and 5 are 0.3 apart like (0.3, 0.6).
    let grid = GridSpec::with_cells(1.0, 10).unwrap();
    let s = FieldSampler::new(&grid, &[0.02, 0.01], &spec()).unwrap();
    let prod = s.map_replicates(5, 10_000, Execution::Parallel, |x| x.values[0][2] * x.values[1][5]);
    let (m, se) = mean_se(&prod);
    let oracle = cov_mollified(0.3, 0.6, 0.02, 0.01, &spec()).unwrap().value;
    assert!((m - oracle).abs() < 3.0 * se, "{m} vs {oracle} (se {se})");
}

#[test]
fn principal_loadings_reproduce_kept_variance() {
    let grid = GridSpec::with_cells(1.0, 32).unwrap();
    let c = build_joint_covariance(&grid, &[0.1], &spec()).unwrap();
    let l = principal_loadings(&c, 32, 0.0);
    let back = &l.matrix * l.matrix.transpose();
    assert!((back - &c).abs().max() < 1e-9);
    let few = principal_loadings(&c, 3, 0.0);
    assert_eq!(few.n_factors(), 3);
    assert!(few.discarded_fraction > 0.0 && few.discarded_fraction < 1.0);
}

#[test]
fn indefinite_matrix_reports_factorization_failure() {
    let c = nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(matches!(factor_with_jitter(&c), Err(gmclab::Error::Factorization { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn csv_round_trip_is_exact(cells in 2usize..20, seed in any::<u64>(), count in 1usize..4) {
        let grid = GridSpec::with_cells(1.0, cells).unwrap();
        let samples = sample_fields(&grid, &[0.2, 0.1], &spec(), seed, count).unwrap();
        let mut buf = Vec::new();
        write_fields_csv(&mut buf, &samples).unwrap();
        let back = read_fields_csv(buf.as_slice(), 1.0).unwrap();
        prop_assert_eq!(back, samples);
    }

    #[test]
    fn grid_nodes_bracket_midpoints(t in 0.1..10.0f64, cells in 1usize..200) {
        let g = GridSpec::with_cells(t, cells).unwrap();
        let nodes = g.nodes();
        prop_assert_eq!(nodes.len(), cells + 1);
        prop_assert_eq!(nodes[cells], t);
        for (i, m) in g.midpoints().iter().enumerate() {
            prop_assert!(nodes[i] < *m && *m < nodes[i + 1]);
        }
    }
}
