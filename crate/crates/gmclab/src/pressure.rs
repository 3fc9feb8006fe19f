//! The 1D pressure equation `-(e^{◇(-X)} × U')' = f` with the four boundary
//! families: pathwise solutions against GMC measures, S-transform solutions at
//! Gaussian test points, chaos-valued Wick solutions, and ε→0 studies.

use serde::{Deserialize, Serialize};

use crate::chaos::{self, wick_exp, wick_inverse, wick_mul, ChaosExpansion, GaussianPoint};
use crate::covkernel::{var_mollified, CovarianceSpec};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fieldsim::{FieldSample, FieldSampler, GridSpec, Loadings};
use crate::gmc::GmcMeasure;
use crate::stats::{ks_critical, ks_statistic, ky_fan, median, ExactSum};

pub const COMPAT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ForcingFamily {
    /// `f ≡ value`.
    Constant { value: f64 },
    /// `f(t) = amplitude · sin(2π frequency t / T)`.
    Sine { amplitude: f64, frequency: u32 },
    /// Piecewise constant: `values[j]` on `[breaks[j], breaks[j+1])`, with
    /// `breaks` running from 0 to T.
    Piecewise { breaks: Vec<f64>, values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcingSpec {
    pub t_len: f64,
    pub family: ForcingFamily,
}

impl ForcingSpec {
    pub fn constant(t_len: f64, value: f64) -> Self {
        ForcingSpec { t_len, family: ForcingFamily::Constant { value } }
    }

    pub fn sine(t_len: f64, amplitude: f64, frequency: u32) -> Self {
        ForcingSpec { t_len, family: ForcingFamily::Sine { amplitude, frequency } }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.t_len > 0.0 && self.t_len.is_finite()) {
            v.push(format!("forcing domain length must be positive, got {}", self.t_len));
        }
        match &self.family {
            ForcingFamily::Constant { value } if !value.is_finite() => v.push("constant forcing is not finite".into()),
            ForcingFamily::Sine { amplitude, frequency } => {
                if !amplitude.is_finite() {
                    v.push("sine amplitude is not finite".into());
                }
                if *frequency == 0 {
                    v.push("sine frequency must be at least 1".into());
                }
            }
            ForcingFamily::Piecewise { breaks, values } => {
                if breaks.len() != values.len() + 1 || values.is_empty() {
                    v.push("piecewise forcing needs len(breaks) = len(values) + 1 >= 2".into());
                } else {
                    if breaks[0] != 0.0 || (breaks[breaks.len() - 1] - self.t_len).abs() > 1e-12 {
                        v.push("piecewise breaks must run from 0 to T".into());
                    }
                    if breaks.windows(2).any(|w| !(w[1] > w[0])) {
                        v.push("piecewise breaks must increase".into());
                    }
                }
            }
            _ => {}
        }
        v
    }

    pub fn f(&self, t: f64) -> f64 {
        match &self.family {
            ForcingFamily::Constant { value } => *value,
            ForcingFamily::Sine { amplitude, frequency } => {
                amplitude * (2.0 * std::f64::consts::PI * *frequency as f64 * t / self.t_len).sin()
            }
            ForcingFamily::Piecewise { breaks, values } => {
                let j = breaks.partition_point(|&b| b <= t).saturating_sub(1).min(values.len() - 1);
                values[j]
            }
        }
    }

    /// `∫₀ᵗ f`.
    pub fn cumulative(&self, t: f64) -> f64 {
        match &self.family {
            ForcingFamily::Constant { value } => value * t,
            ForcingFamily::Sine { amplitude, frequency } => {
                let w = 2.0 * std::f64::consts::PI * *frequency as f64 / self.t_len;
                amplitude / w * (1.0 - (w * t).cos())
            }
            ForcingFamily::Piecewise { breaks, values } => {
                let mut acc = 0.0;
                for (j, &v) in values.iter().enumerate() {
                    let (a, b) = (breaks[j], breaks[j + 1]);
                    if t <= a {
                        break;
                    }
                    acc += v * (t.min(b) - a);
                }
                acc
            }
        }
    }

    /// `F(t) = -∫₀ᵗ f`.
    pub fn big_f(&self, t: f64) -> f64 {
        -self.cumulative(t)
    }

    pub fn total(&self) -> f64 {
        match &self.family {
            ForcingFamily::Sine { .. } => 0.0,
            _ => self.cumulative(self.t_len),
        }
    }

    /// `∫₀ᵀ |f|`.
    pub fn abs_total(&self) -> f64 {
        match &self.family {
            ForcingFamily::Constant { value } => value.abs() * self.t_len,
            ForcingFamily::Sine { amplitude, .. } => 2.0 * amplitude.abs() * self.t_len / std::f64::consts::PI,
            ForcingFamily::Piecewise { breaks, values } => {
                values.iter().enumerate().map(|(j, v)| v.abs() * (breaks[j + 1] - breaks[j])).sum()
            }
        }
    }

    pub fn big_f_at_midpoints(&self, grid: &GridSpec) -> Vec<f64> {
        grid.midpoints().into_iter().map(|m| self.big_f(m)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BcKind {
    Ivp,
    Dirichlet,
    Neumann,
    Periodic,
}

/// Boundary data: IVP `(U(0), flux)`, Dirichlet `(U(0), U(T))`, Neumann
/// `(flux(0), flux(T))`; periodic uses neither.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryData {
    pub kind: BcKind,
    #[serde(default)]
    pub u1: f64,
    #[serde(default)]
    pub u2: f64,
}

impl BoundaryData {
    pub fn new(kind: BcKind, u1: f64, u2: f64) -> Self {
        BoundaryData { kind, u1, u2 }
    }

    pub fn violations(&self, forcing: &ForcingSpec) -> Vec<String> {
        let mut v = Vec::new();
        if !self.u1.is_finite() || !self.u2.is_finite() {
            v.push("boundary values must be finite".into());
        }
        match self.kind {
            BcKind::Periodic if forcing.total().abs() > COMPAT_TOL => v.push(format!(
                "periodic boundary conditions need mean-zero forcing, but the integral of f is {}",
                forcing.total()
            )),
            BcKind::Neumann if (self.u2 - self.u1 + forcing.total()).abs() > COMPAT_TOL => v.push(format!(
                "Neumann data must satisfy U2 - U1 = -(integral of f): U2 - U1 = {}, integral = {}",
                self.u2 - self.u1,
                forcing.total()
            )),
            _ => {}
        }
        v
    }

    pub fn validate(&self, forcing: &ForcingSpec) -> Result<()> {
        let v = self.violations(forcing);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Precondition(v.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionPath {
    pub grid: GridSpec,
    /// `U(t_k)` at the grid nodes.
    pub values: Vec<f64>,
    pub kappa: f64,
    pub bc: BoundaryData,
    pub eps: f64,
    pub total_mass: f64,
}

/// `U(t_k) = U(0) + Σ_{i<k} (κ + F_i) w_i` for cell weights `w`.
pub fn solve_with_masses(
    grid: &GridSpec,
    masses: &[f64],
    big_f: &[f64],
    bc: &BoundaryData,
    forcing: &ForcingSpec,
    eps: f64,
) -> Result<SolutionPath> {
    bc.validate(forcing)?;
    let total = exact_dot(masses.iter().copied());
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateMeasure(total));
    }
    let ifm = exact_dot(big_f.iter().zip(masses).map(|(f, m)| f * m));
    let (u0, kappa) = match bc.kind {
        BcKind::Ivp => (bc.u1, bc.u2),
        BcKind::Dirichlet => (bc.u1, (bc.u2 - bc.u1 - ifm) / total),
        BcKind::Neumann => (0.0, bc.u1),
        BcKind::Periodic => (0.0, -ifm / total),
    };
    let mut acc = ExactSum::new();
    acc.add(u0);
    let mut values = Vec::with_capacity(masses.len() + 1);
    values.push(u0);
    for (f, m) in big_f.iter().zip(masses) {
        acc.add(kappa * m);
        acc.add(f * m);
        values.push(acc.value());
    }
    Ok(SolutionPath { grid: *grid, values, kappa, bc: *bc, eps, total_mass: total })
}

fn exact_dot(terms: impl Iterator<Item = f64>) -> f64 {
    let mut s = ExactSum::new();
    terms.for_each(|t| s.add(t));
    s.value()
}

pub fn solve_pathwise(mu: &GmcMeasure, forcing: &ForcingSpec, bc: &BoundaryData) -> Result<SolutionPath> {
    let big_f = forcing.big_f_at_midpoints(&mu.grid);
    solve_with_masses(&mu.grid, &mu.cell_mass, &big_f, bc, forcing, mu.eps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub max_residual: f64,
    /// `e^{β²σ²} e^{◇(-βX)} U'` on the first and last cells.
    pub flux_left: f64,
    pub flux_right: f64,
}

/// Residual of `-e^{β²σ²} D[e^{-βX - β²σ²/2} D U] - f` on the staggered grid:
/// `D U` and the coefficient live on cells, the outer difference on interior nodes.
pub fn verify_pathwise_ode(
    u: &SolutionPath,
    field: &FieldSample,
    level: usize,
    beta: f64,
    forcing: &ForcingSpec,
    spec: &CovarianceSpec,
) -> Result<ResidualReport> {
    let eps = *field.eps_levels.get(level).ok_or_else(|| Error::Argument(format!("level {level} not in sample")))?;
    if field.grid != u.grid || (eps - u.eps).abs() > 0.0 {
        return Err(Error::Argument("solution and field come from different grids or levels".into()));
    }
    let sigma2 = var_mollified(eps, spec)?;
    let variances = vec![sigma2; field.values[level].len()];
    Ok(residual_with_variances(u, &field.values[level], &variances, beta, forcing))
}

pub fn residual_with_variances(
    u: &SolutionPath,
    x: &[f64],
    variances: &[f64],
    beta: f64,
    forcing: &ForcingSpec,
) -> ResidualReport {
    let g = &u.grid;
    let d = g.delta();
    let n = g.n_cells();
    let flux: Vec<f64> = (0..n)
        .map(|i| {
            let du = (u.values[i + 1] - u.values[i]) / d;
            (-beta * x[i] - 0.5 * beta * beta * variances[i]).exp() * du * (beta * beta * variances[i]).exp()
        })
        .collect();
    let max_residual = (1..n)
        .map(|k| (-(flux[k] - flux[k - 1]) / d - forcing.f(g.node(k))).abs())
        .fold(0.0, f64::max);
    ResidualReport { max_residual, flux_left: flux[0], flux_right: flux[n - 1] }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualStudy {
    pub cells: Vec<usize>,
    /// Worst residual over realizations at each grid size.
    pub max_residual: Vec<f64>,
    /// `log2` of consecutive residual ratios.
    pub orders: Vec<f64>,
}

/// Refinement study of [`verify_pathwise_ode`] at fixed ε.
#[allow(clippy::too_many_arguments)]
pub fn residual_study(
    spec: &CovarianceSpec,
    eps: f64,
    cells: &[usize],
    forcing: &ForcingSpec,
    bc: &BoundaryData,
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<ResidualStudy> {
    let mut max_residual = Vec::new();
    let sigma2 = var_mollified(eps, spec)?;
    for &n in cells {
        let grid = GridSpec::with_cells(spec.t_len, n)?;
        let sampler = FieldSampler::new(&grid, &[eps], spec)?;
        let res = sampler.map_replicates(seed, replicates, exec, |s| -> Result<f64> {
            let mu = GmcMeasure::from_field_values(&grid, spec.beta, eps, &s.values[0], sigma2);
            let u = solve_pathwise(&mu, forcing, bc)?;
            Ok(verify_pathwise_ode(&u, &s, 0, spec.beta, forcing, spec)?.max_residual)
        });
        let worst = res.into_iter().collect::<Result<Vec<f64>>>()?.into_iter().fold(0.0, f64::max);
        max_residual.push(worst);
    }
    let orders = max_residual.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    Ok(ResidualStudy { cells: cells.to_vec(), max_residual, orders })
}

/// Deterministic solution `u_h` against `e^{c(y)} dy`, with `c` sampled at midpoints.
pub fn solve_wick_s_side(
    grid: &GridSpec,
    c_profile: &[f64],
    forcing: &ForcingSpec,
    bc: &BoundaryData,
) -> Result<SolutionPath> {
    if c_profile.len() != grid.n_cells() {
        return Err(Error::Argument(format!("profile has {} entries, grid has {} cells", c_profile.len(), grid.n_cells())));
    }
    let d = grid.delta();
    let w: Vec<f64> = c_profile.iter().map(|c| c.exp() * d).collect();
    solve_with_masses(grid, &w, &forcing.big_f_at_midpoints(grid), bc, forcing, 0.0)
}

/// `c(m_i) = E[h · βX(m_i)]` for `X = L ξ`.
pub fn s_side_profile(loadings: &Loadings, beta: f64, pt: &GaussianPoint) -> Vec<f64> {
    let lc = pt.scaled();
    (0..loadings.matrix.nrows())
        .map(|i| beta * (0..lc.len()).map(|k| loadings.matrix[(i, k)] * lc[k]).sum::<f64>())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct WickSolution {
    pub grid: GridSpec,
    pub values: Vec<ChaosExpansion>,
    pub kappa: ChaosExpansion,
    /// `∫₀ᵀ e^{◇βX}` as an expansion.
    pub total_mass: ChaosExpansion,
    pub bc: BoundaryData,
    pub truncation_loss: f64,
    pub warnings: Vec<String>,
}

pub const TRUNCATION_WARN: f64 = 1e-6;

/// Chaos-valued Wick solution for the field `X = L ξ` on the midpoints.
pub fn solve_wick_chaos(
    grid: &GridSpec,
    loadings: &Loadings,
    beta: f64,
    forcing: &ForcingSpec,
    bc: &BoundaryData,
    cap: usize,
) -> Result<WickSolution> {
    bc.validate(forcing)?;
    let n = loadings.n_factors();
    let cells = grid.n_cells();
    if loadings.matrix.nrows() != cells {
        return Err(Error::Argument("loadings do not match the grid".into()));
    }
    let d = grid.delta();
    let big_f = forcing.big_f_at_midpoints(grid);
    let mut cum_m = Vec::with_capacity(cells + 1);
    let mut cum_fm = Vec::with_capacity(cells + 1);
    let mut m = ChaosExpansion::zero(n, cap)?;
    let mut fm = ChaosExpansion::zero(n, cap)?;
    cum_m.push(m.clone());
    cum_fm.push(fm.clone());
    let mut exp_tail = 0.0;
    for (i, &fi) in big_f.iter().enumerate().take(cells) {
        let e = wick_exp(&GaussianPoint::new(loadings.row(i), beta), cap)?;
        exp_tail += e.truncation_loss.sqrt() * d;
        m.axpy(d, &e.value)?;
        fm.axpy(d * fi, &e.value)?;
        cum_m.push(m.clone());
        cum_fm.push(fm.clone());
    }
    let mut loss = exp_tail * exp_tail;
    let one = ChaosExpansion::constant(n, cap, 1.0)?;
    let (u0, kappa) = match bc.kind {
        BcKind::Ivp => (bc.u1, one.scale(bc.u2)),
        BcKind::Neumann => (0.0, one.scale(bc.u1)),
        BcKind::Dirichlet | BcKind::Periodic => {
            let inv = wick_inverse(&m, cap)?.value;
            let num = if bc.kind == BcKind::Dirichlet {
                one.scale(bc.u2 - bc.u1).sub(&fm)?
            } else {
                fm.scale(-1.0)
            };
            let k = wick_mul(&num, &inv, cap)?;
            loss = loss.max(k.truncation_loss);
            let u0 = if bc.kind == BcKind::Dirichlet { bc.u1 } else { 0.0 };
            (u0, k.value)
        }
    };
    let scalar_kappa = matches!(bc.kind, BcKind::Ivp | BcKind::Neumann);
    let mut values = Vec::with_capacity(cells + 1);
    for k in 0..=cells {
        let km = if scalar_kappa {
            cum_m[k].scale(kappa.mean())
        } else {
            let p = wick_mul(&kappa, &cum_m[k], cap)?;
            loss = loss.max(p.truncation_loss);
            p.value.with_cap(cap)?.value
        };
        let mut u = km.add(&cum_fm[k])?;
        u.axpy(u0, &one)?;
        values.push(u);
    }
    let mut warnings = Vec::new();
    if loss > TRUNCATION_WARN {
        warnings.push(format!("chaos truncation loss {loss:.3e} exceeds {TRUNCATION_WARN:e}"));
    }
    Ok(WickSolution { grid: *grid, values, kappa, total_mass: m, bc: *bc, truncation_loss: loss, warnings })
}

impl WickSolution {
    /// Realization at `ξ`.
    pub fn evaluate(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.values.iter().map(|v| v.evaluate(xi)).collect()
    }

    pub fn s_transform(&self, pt: &GaussianPoint) -> Result<Vec<f64>> {
        self.values.iter().map(|v| chaos::s_transform(v, pt)).collect()
    }
}

/// Pathwise solution for the field `L ξ`, Wick-normalized with the per-cell
/// variance of the reduced field.
pub fn solve_pathwise_reduced(
    grid: &GridSpec,
    loadings: &Loadings,
    beta: f64,
    xi: &[f64],
    forcing: &ForcingSpec,
    bc: &BoundaryData,
) -> Result<SolutionPath> {
    let x = loadings.realize(xi);
    let var: Vec<f64> = (0..x.len()).map(|i| loadings.row(i).iter().map(|l| l * l).sum()).collect();
    let mu = GmcMeasure::from_values(grid, beta, 0.0, &x, &var);
    solve_pathwise(&mu, forcing, bc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub eps: Vec<f64>,
    pub bc: BoundaryData,
    pub replicates: usize,
    /// Ky Fan distance between consecutive levels.
    pub ky_fan: Vec<f64>,
    pub median_sup_distance: Vec<f64>,
    pub strictly_decreasing: bool,
}

/// Sup-distance of solutions at consecutive ε levels under the exact coupling.
pub fn convergence_study(
    sampler: &FieldSampler,
    spec: &CovarianceSpec,
    forcing: &ForcingSpec,
    bc: &BoundaryData,
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<ConvergenceReport> {
    bc.validate(forcing)?;
    let eps = sampler.eps_levels().to_vec();
    if eps.len() < 2 {
        return Err(Error::Argument("a convergence study needs at least two levels".into()));
    }
    let sig: Vec<f64> = eps.iter().map(|&e| var_mollified(e, spec)).collect::<Result<_>>()?;
    let grid = *sampler.grid();
    let big_f = forcing.big_f_at_midpoints(&grid);
    let per_rep = sampler.map_replicates(seed, replicates, exec, |s| -> Result<Vec<f64>> {
        let sols = (0..eps.len())
            .map(|l| {
                let mu = GmcMeasure::from_field_values(&grid, spec.beta, eps[l], &s.values[l], sig[l]);
                solve_with_masses(&grid, &mu.cell_mass, &big_f, bc, forcing, eps[l])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(sols
            .windows(2)
            .map(|w| w[0].values.iter().zip(&w[1].values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .collect())
    });
    let per_rep = per_rep.into_iter().collect::<Result<Vec<_>>>()?;
    let pairs = eps.len() - 1;
    let mut ky = Vec::with_capacity(pairs);
    let mut med = Vec::with_capacity(pairs);
    for p in 0..pairs {
        let d: Vec<f64> = per_rep.iter().map(|r| r[p]).collect();
        ky.push(ky_fan(&d)?);
        med.push(median(&d));
    }
    let strictly_decreasing = ky.windows(2).all(|w| w[1] < w[0]);
    Ok(ConvergenceReport {
        eps,
        bc: *bc,
        replicates,
        ky_fan: ky,
        median_sup_distance: med,
        strictly_decreasing,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollifierSwapReport {
    pub eps: f64,
    pub statistic: f64,
    pub critical: f64,
    pub alpha: f64,
    pub rejected: bool,
}

/// Two-sample KS test on `U(T/2)` for two covariance specs (typically the
/// two mollifier families) with independent draws.
#[allow(clippy::too_many_arguments)]
pub fn mollifier_swap_test(
    grid: &GridSpec,
    eps: f64,
    spec_a: &CovarianceSpec,
    spec_b: &CovarianceSpec,
    forcing: &ForcingSpec,
    bc: &BoundaryData,
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<MollifierSwapReport> {
    let mid = grid.n_cells() / 2;
    let big_f = forcing.big_f_at_midpoints(grid);
    let draw = |spec: &CovarianceSpec, seed: u64| -> Result<Vec<f64>> {
        let sampler = FieldSampler::new(grid, &[eps], spec)?;
        let s2 = var_mollified(eps, spec)?;
        sampler
            .map_replicates(seed, replicates, exec, |s| {
                let mu = GmcMeasure::from_field_values(grid, spec.beta, eps, &s.values[0], s2);
                solve_with_masses(grid, &mu.cell_mass, &big_f, bc, forcing, eps).map(|u| u.values[mid])
            })
            .into_iter()
            .collect()
    };
    let a = draw(spec_a, seed)?;
    let b = draw(spec_b, seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?;
    let alpha = 0.01;
    let statistic = ks_statistic(&a, &b)?;
    let critical = ks_critical(a.len(), b.len(), alpha);
    Ok(MollifierSwapReport { eps, statistic, critical, alpha, rejected: statistic > critical })
}

/// Per-realization pathwise solutions for every replicate of a sampler level.
pub fn solve_replicates(
    sampler: &FieldSampler,
    level: usize,
    spec: &CovarianceSpec,
    forcing: &ForcingSpec,
    bc: &BoundaryData,
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<SolutionPath>> {
    let eps = sampler.eps_levels()[level];
    let s2 = var_mollified(eps, spec)?;
    let grid = *sampler.grid();
    let out = sampler.map_replicates(seed, replicates, exec, |s| {
        let mu = GmcMeasure::from_field_values(&grid, spec.beta, eps, &s.values[level], s2);
        solve_pathwise(&mu, forcing, bc)
    });
    out.into_iter().collect()
}
