//! Projections of pressure-equation solutions onto GMC subspaces: kernel
//! transport `G_{ββ'}φ = G_{β'²}φ'`, the deterministic projected problems
//! `ũ_z` and kernel recovery `φ(t,·) = G_{β'²}^{-1}[ũ_·(t)]`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::covkernel::{var_mollified, CovarianceSpec};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::fieldsim::{FieldSampler, GridSpec, Loadings};
use crate::gmc::GmcMeasure;
use crate::potential::{
    build_g, build_g_from_covariance, build_g_mollified, dictionary, invert_g, DualNorm, PotentialOperator,
};
use crate::pressure::{solve_with_masses, BcKind, BoundaryData, ForcingSpec};
use crate::stats::McStats;

pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Which kernel `e^{αR}` the operators use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "kebab-case")]
pub enum ProjectionKernel {
    /// Exact log kernel with cell product-integration.
    Exact,
    /// Mollified covariance at level `eps`, sampled at midpoints.
    Mollified { eps: f64 },
}

pub fn build_operator(
    alpha: f64,
    grid: &GridSpec,
    spec: &CovarianceSpec,
    kernel: &ProjectionKernel,
    exec: Execution,
) -> Result<PotentialOperator> {
    match kernel {
        ProjectionKernel::Exact => build_g(alpha, grid, spec),
        ProjectionKernel::Mollified { eps } => build_g_mollified(alpha, *eps, grid, spec, exec),
    }
}

/// `φ_{β'} = G_{β'²}^{-1} G_{ββ'} φ`.
pub fn project_kernel(phi: &[f64], g_cross: &PotentialOperator, g_target: &PotentialOperator) -> Result<Vec<f64>> {
    if g_cross.grid != g_target.grid {
        return Err(Error::Argument("operators live on different grids".into()));
    }
    Ok(invert_g(g_target, &g_cross.apply(phi))?.solution)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedSolution {
    pub beta: f64,
    pub beta_prime: f64,
    pub grid: GridSpec,
    pub bc: BoundaryData,
    /// `u_tilde[k][i] = ũ_{z_i}(t_k)`, `t_k` nodes, `z_i` midpoints.
    pub u_tilde: Vec<Vec<f64>>,
    /// `e^{-ββ'R(z_i,0)} ũ'_{z_i}(0)` per z.
    pub flux0: Vec<f64>,
}

impl ProjectedSolution {
    pub fn z_grid(&self) -> Vec<f64> {
        self.grid.midpoints()
    }

    pub fn t_grid(&self) -> Vec<f64> {
        self.grid.nodes()
    }

    /// `z ↦ ũ_z(t_k)`.
    pub fn at_time(&self, k: usize) -> &[f64] {
        &self.u_tilde[k]
    }
}

/// Closed-form `ũ_z(t) = ũ_z(0) + K_z (G I_{[0,t]})(z) + (G[F I_{[0,t]}])(z)`
/// with `G = G_{ββ'}` and the constants fixed by the boundary data.
pub fn solve_projected_bvp(
    beta: f64,
    beta_prime: f64,
    g_cross: &PotentialOperator,
    forcing: &ForcingSpec,
    bc: &BoundaryData,
) -> Result<ProjectedSolution> {
    if !(beta > 0.0 && beta < 1.0 && beta_prime >= beta && beta_prime < 1.0) {
        return Err(Error::Precondition(format!("need 0 < beta <= beta' < 1, got {beta}, {beta_prime}")));
    }
    if (g_cross.alpha - beta * beta_prime).abs() > 1e-15 {
        return Err(Error::Argument(format!(
            "operator has alpha = {}, expected beta*beta' = {}",
            g_cross.alpha,
            beta * beta_prime
        )));
    }
    bc.validate(forcing)?;
    let grid = g_cross.grid;
    let n = grid.n_cells();
    let big_f = forcing.big_f_at_midpoints(&grid);
    let mut cols = Vec::with_capacity(n);
    let mut flux0 = Vec::with_capacity(n);
    for i in 0..n {
        let w: Vec<f64> = g_cross.matrix.row(i).iter().cloned().collect();
        if bc.kind == BcKind::Dirichlet || bc.kind == BcKind::Periodic {
            let den: f64 = w.iter().sum();
            if den < DENOMINATOR_FLOOR {
                return Err(Error::DegenerateMeasure(den));
            }
        }
        let u = solve_with_masses(&grid, &w, &big_f, bc, forcing, 0.0)?;
        flux0.push(u.kappa);
        cols.push(u.values);
    }
    let u_tilde = (0..=n).map(|k| cols.iter().map(|c| c[k]).collect()).collect();
    Ok(ProjectedSolution { beta, beta_prime, grid, bc: *bc, u_tilde, flux0 })
}

/// Residual of `-(a_z ũ_z')' = f` with the cell-averaged coefficient
/// `a_z = Δ / G_{z,j}`, maximized over interior nodes and all z.
pub fn projected_residual(sol: &ProjectedSolution, g_cross: &PotentialOperator, forcing: &ForcingSpec) -> f64 {
    let n = sol.grid.n_cells();
    let d = sol.grid.delta();
    let mut worst = 0.0f64;
    for i in 0..n {
        let flux: Vec<f64> = (0..n).map(|j| (sol.u_tilde[j + 1][i] - sol.u_tilde[j][i]) / g_cross.matrix[(i, j)]).collect();
        for k in 1..n {
            let r = -(flux[k] - flux[k - 1]) / d - forcing.f(sol.grid.node(k));
            worst = worst.max(r.abs());
        }
    }
    worst
}

/// Worst violation of the transformed boundary conditions over z.
pub fn boundary_defect(sol: &ProjectedSolution, g_cross: &PotentialOperator, forcing: &ForcingSpec) -> f64 {
    let n = sol.grid.n_cells();
    let last = &sol.u_tilde[n];
    let first = &sol.u_tilde[0];
    let bc = sol.bc;
    (0..n)
        .map(|i| match bc.kind {
            BcKind::Ivp => (first[i] - bc.u1).abs().max((sol.flux0[i] - bc.u2).abs()),
            BcKind::Dirichlet => (first[i] - bc.u1).abs().max((last[i] - bc.u2).abs() / bc.u2.abs().max(1.0)),
            BcKind::Neumann => {
                // Outgoing flux: K + F(T).
                let out = sol.flux0[i] + forcing.big_f(sol.grid.t_len);
                (sol.flux0[i] - bc.u1).abs().max((out - bc.u2).abs())
            }
            BcKind::Periodic => {
                let scale = g_cross.matrix.row(i).iter().sum::<f64>().max(1.0);
                (last[i] - first[i]).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelRecovery {
    /// `phi[k][a] = φ(t_k, m_a)`.
    pub phi: Vec<Vec<f64>>,
    /// Relative inversion residual per time.
    pub residuals: Vec<f64>,
    /// `‖φ(t,·)‖` at order `-(1-β'²)/2`.
    pub dual_norms: Vec<f64>,
    pub condition_estimate: f64,
    pub warnings: Vec<String>,
}

pub fn recover_kernel(sol: &ProjectedSolution, g_target: &PotentialOperator, exec: Execution) -> Result<KernelRecovery> {
    let bp = sol.beta_prime;
    if (g_target.alpha - bp * bp).abs() > 1e-15 || g_target.grid != sol.grid {
        return Err(Error::Argument("target operator must be G_{beta'^2} on the solution grid".into()));
    }
    let dual = DualNorm::new(&sol.grid, 0.5 * (1.0 - bp * bp))?;
    let rows = map_indexed(exec, sol.u_tilde.len(), |k| invert_g(g_target, &sol.u_tilde[k]));
    let mut phi = Vec::with_capacity(rows.len());
    let mut residuals = Vec::with_capacity(rows.len());
    let mut warnings = Vec::new();
    for r in rows {
        let r = r?;
        if let Some(w) = r.warning {
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
        residuals.push(r.residual);
        phi.push(r.solution);
    }
    let dual_norms = phi.iter().map(|p| dual.norm(p)).collect();
    Ok(KernelRecovery { phi, residuals, dual_norms, condition_estimate: g_target.condition_estimate, warnings })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McComparison {
    pub mc_estimate: f64,
    pub std_error: f64,
    pub deterministic: f64,
    pub within_4se: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedMcReport {
    pub t_index: usize,
    pub replicates: usize,
    pub comparisons: Vec<McComparison>,
    pub max_abs_discrepancy: f64,
    pub all_within_4se: bool,
}

/// Monte Carlo `E[(∫φ(t,·)dμ_{β'})(∫ψ dμ_{β'})]` against `Δ Σ ψ(z) ũ_z(t)` for
/// the given test functions. The operators must use the mollified kernel at the
/// sampler's level for the identity to be exact in expectation.
#[allow(clippy::too_many_arguments)]
pub fn projected_mc_check(
    sol: &ProjectedSolution,
    recovery: &KernelRecovery,
    t_index: usize,
    tests: &[Vec<f64>],
    sampler: &FieldSampler,
    spec: &CovarianceSpec,
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<ProjectedMcReport> {
    let eps = sampler.eps_levels()[0];
    let grid = *sampler.grid();
    if grid != sol.grid {
        return Err(Error::Argument("sampler grid differs from the solution grid".into()));
    }
    let s2 = var_mollified(eps, spec)?;
    let bp = sol.beta_prime;
    let phi = &recovery.phi[t_index];
    let per_rep = sampler.map_replicates(seed, replicates, exec, |s| {
        let mu = GmcMeasure::from_field_values(&grid, bp, eps, &s.values[0], s2);
        let z = mu.integrate(phi);
        tests.iter().map(|psi| z * mu.integrate(psi)).collect::<Vec<f64>>()
    });
    let d = grid.delta();
    let u = sol.at_time(t_index);
    let mut comparisons = Vec::with_capacity(tests.len());
    for (k, psi) in tests.iter().enumerate() {
        let mut st = McStats::new();
        per_rep.iter().for_each(|r| st.push(r[k]));
        let deterministic = d * psi.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
        let mc_estimate = st.mean()?;
        let std_error = st.std_error()?;
        let within_4se = (mc_estimate - deterministic).abs() <= 4.0 * std_error + 1e-12 * deterministic.abs().max(1.0);
        comparisons.push(McComparison { mc_estimate, std_error, deterministic, within_4se });
    }
    let max_abs_discrepancy = comparisons.iter().map(|c| (c.mc_estimate - c.deterministic).abs()).fold(0.0, f64::max);
    let all_within_4se = comparisons.iter().all(|c| c.within_4se);
    Ok(ProjectedMcReport { t_index, replicates, comparisons, max_abs_discrepancy, all_within_4se })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossMomentReport {
    pub beta: f64,
    pub beta_prime: f64,
    /// `⟨ψ, G_{ββ'}φ⟩` and `⟨ψ, G_{β'²}φ'⟩` per test function.
    pub quadrature: Vec<(f64, f64)>,
    pub max_quadrature_gap: f64,
    /// Paired Monte Carlo difference `E[ZV] - E[Z'V]` with its standard error.
    pub mc_difference: Vec<(f64, f64)>,
    pub mc_within_4se: bool,
    pub replicates: usize,
}

/// `E[ZV] = E[Z_{β'}V]` for `Z = ∫φ dμ_β`, `Z_{β'} = ∫φ' dμ_{β'}`, `V = ∫ψ dμ_{β'}`,
/// by deterministic pairing and by coupled Monte Carlo at the sampler's level.
#[allow(clippy::too_many_arguments)]
pub fn cross_moment_check(
    beta: f64,
    beta_prime: f64,
    phi: &[f64],
    tests: &[Vec<f64>],
    g_cross: &PotentialOperator,
    g_target: &PotentialOperator,
    sampler: &FieldSampler,
    spec: &CovarianceSpec,
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<CrossMomentReport> {
    let phi_p = project_kernel(phi, g_cross, g_target)?;
    let quadrature: Vec<(f64, f64)> =
        tests.iter().map(|psi| (g_cross.pairing(psi, phi), g_target.pairing(psi, &phi_p))).collect();
    let max_quadrature_gap = quadrature.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let eps = sampler.eps_levels()[0];
    let grid = *sampler.grid();
    let s2 = var_mollified(eps, spec)?;
    let per_rep = sampler.map_replicates(seed, replicates, exec, |s| {
        let mb = GmcMeasure::from_field_values(&grid, beta, eps, &s.values[0], s2);
        let mp = GmcMeasure::from_field_values(&grid, beta_prime, eps, &s.values[0], s2);
        let z = mb.integrate(phi);
        let zp = mp.integrate(&phi_p);
        tests.iter().map(|psi| (z - zp) * mp.integrate(psi)).collect::<Vec<f64>>()
    });
    let mut mc_difference = Vec::with_capacity(tests.len());
    for k in 0..tests.len() {
        let mut st = McStats::new();
        per_rep.iter().for_each(|r| st.push(r[k]));
        mc_difference.push((st.mean()?, st.std_error()?));
    }
    let mc_within_4se = mc_difference.iter().all(|(m, se)| m.abs() <= 4.0 * se);
    Ok(CrossMomentReport {
        beta,
        beta_prime,
        quadrature,
        max_quadrature_gap,
        mc_difference,
        mc_within_4se,
        replicates,
    })
}

/// First `count` cosine dictionary functions as test functions.
pub fn test_functions(grid: &GridSpec, count: usize) -> Vec<Vec<f64>> {
    let psi = dictionary(grid, count);
    (0..count).map(|k| psi.column(k).iter().cloned().collect()).collect()
}

/// `ψ - (⟨ψ,Gφ⟩/⟨φ,Gφ⟩) φ`, orthogonal to `φ` in the `G` pairing.
pub fn g_orthogonalize(psi: &[f64], phi: &[f64], g: &PotentialOperator) -> Vec<f64> {
    let c = g.pairing(psi, phi) / g.pairing(phi, phi);
    psi.iter().zip(phi).map(|(a, b)| a - c * b).collect()
}

/// Operator with kernel `Δ e^{α (LLᵀ)_ij}` for a reduced field `X = Lξ`.
pub fn operator_for_loadings(alpha: f64, grid: &GridSpec, loadings: &Loadings) -> Result<PotentialOperator> {
    let c = &loadings.matrix * loadings.matrix.transpose();
    build_g_from_covariance(alpha, grid, &c, "reduced-field")
}

fn write_matrix_csv<W: Write>(w: W, header: &[String], rows: &[Vec<f64>], lead: &[f64]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header)?;
    for (r, t) in rows.iter().zip(lead) {
        let mut rec = vec![t.to_string()];
        rec.extend(r.iter().map(|v| v.to_string()));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// `ũ` as CSV: one row per time node, one column per z.
pub fn write_u_tilde_csv<W: Write>(w: W, sol: &ProjectedSolution) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(sol.z_grid().iter().map(|z| format!("z={z}")));
    write_matrix_csv(w, &header, &sol.u_tilde, &sol.t_grid())
}

/// `φ` as CSV: one row per time node, one column per midpoint `a`.
pub fn write_phi_csv<W: Write>(w: W, sol: &ProjectedSolution, rec: &KernelRecovery) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(sol.z_grid().iter().map(|a| format!("a={a}")));
    write_matrix_csv(w, &header, &rec.phi, &sol.t_grid())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionManifest {
    pub beta: f64,
    pub beta_prime: f64,
    pub bc: BoundaryData,
    pub kernel: ProjectionKernel,
    pub z_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub dual_norms: Vec<f64>,
    pub max_recovery_residual: f64,
    pub condition_estimate: f64,
    pub warnings: Vec<String>,
}

pub fn manifest(sol: &ProjectedSolution, rec: &KernelRecovery, kernel: &ProjectionKernel) -> ProjectionManifest {
    ProjectionManifest {
        beta: sol.beta,
        beta_prime: sol.beta_prime,
        bc: sol.bc,
        kernel: kernel.clone(),
        z_grid: sol.z_grid(),
        t_grid: sol.t_grid(),
        dual_norms: rec.dual_norms.clone(),
        max_recovery_residual: rec.residuals.iter().cloned().fold(0.0, f64::max),
        condition_estimate: rec.condition_estimate,
        warnings: rec.warnings.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ivp_without_forcing_uses_indicator_potential() {
        let g = GridSpec::with_cells(1.0, 16).unwrap();
        let spec = CovarianceSpec::new(1.0, 0.5);
        let op = build_g(0.25, &g, &spec).unwrap();
        let f = ForcingSpec::constant(1.0, 0.0);
        let sol = solve_projected_bvp(0.5, 0.5, &op, &f, &BoundaryData::new(BcKind::Ivp, 1.0, 2.0)).unwrap();
        for k in 0..=16 {
            for i in 0..16 {
                let gi: f64 = (0..k).map(|j| op.matrix[(i, j)]).sum();
                assert!((sol.u_tilde[k][i] - (1.0 + 2.0 * gi)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn beta_prime_below_beta_is_rejected() {
        let g = GridSpec::with_cells(1.0, 8).unwrap();
        let op = build_g(0.12, &g, &CovarianceSpec::new(1.0, 0.4)).unwrap();
        let f = ForcingSpec::constant(1.0, 0.0);
        let r = solve_projected_bvp(0.4, 0.3, &op, &f, &BoundaryData::new(BcKind::Ivp, 0.0, 1.0));
        assert!(matches!(r, Err(Error::Precondition(_))));
    }
}
