//! Approximating GMC measures `exp(βX_ε - β²σ_ε²/2) dy` and their statistics.

use serde::{Deserialize, Serialize};

use crate::covkernel::{var_mollified, CovarianceSpec};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fieldsim::{FieldSample, FieldSampler, GridSpec};
use crate::stats::{bootstrap_mean_ci, linear_fit, McStats};

pub const BOOTSTRAP_RESAMPLES: usize = 2000;

#[derive(Clone, Debug, PartialEq)]
pub struct GmcMeasure {
    pub grid: GridSpec,
    pub beta: f64,
    pub eps: f64,
    pub cell_mass: Vec<f64>,
}

impl GmcMeasure {
    /// Midpoint rule with a per-cell Wick variance.
    pub fn from_values(grid: &GridSpec, beta: f64, eps: f64, values: &[f64], variances: &[f64]) -> Self {
        let d = grid.delta();
        let cell_mass = values
            .iter()
            .zip(variances)
            .map(|(x, s2)| (beta * x - 0.5 * beta * beta * s2).exp() * d)
            .collect();
        GmcMeasure { grid: *grid, beta, eps, cell_mass }
    }

    /// Midpoint rule with the constant variance σ_ε².
    pub fn from_field_values(grid: &GridSpec, beta: f64, eps: f64, values: &[f64], sigma2: f64) -> Self {
        let d = grid.delta();
        let shift = 0.5 * beta * beta * sigma2;
        let cell_mass = values.iter().map(|x| (beta * x - shift).exp() * d).collect();
        GmcMeasure { grid: *grid, beta, eps, cell_mass }
    }

    /// Lebesgue measure on the grid (the β → 0 limit).
    pub fn lebesgue(grid: &GridSpec) -> Self {
        GmcMeasure { grid: *grid, beta: 0.0, eps: 0.0, cell_mass: vec![grid.delta(); grid.n_cells()] }
    }

    pub fn total_mass(&self) -> f64 {
        self.cell_mass.iter().sum()
    }

    /// `∫ f dμ` with `f` sampled at cell midpoints.
    pub fn integrate(&self, f_mid: &[f64]) -> f64 {
        self.cell_mass.iter().zip(f_mid).map(|(m, f)| m * f).sum()
    }

    /// `μ([0, t_k])` for every node k.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.cell_mass.len() + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for m in &self.cell_mass {
            acc += m;
            out.push(acc);
        }
        out
    }
}

pub fn gmc_from_field(
    sample: &FieldSample,
    level: usize,
    beta: f64,
    spec: &CovarianceSpec,
) -> Result<GmcMeasure> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Precondition(format!("beta must lie in (0,1), got {beta}")));
    }
    let eps = *sample
        .eps_levels
        .get(level)
        .ok_or_else(|| Error::Argument(format!("level {level} not in sample")))?;
    let sigma2 = var_mollified(eps, spec)?;
    Ok(GmcMeasure::from_field_values(&sample.grid, beta, eps, &sample.values[level], sigma2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRecord {
    pub beta: f64,
    pub eps: f64,
    pub p: f64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_replicates: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
}

impl MomentRecord {
    pub fn ci_width(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

/// p-th moment of total masses with a bootstrap 95% interval.
pub fn moment_of_masses(
    masses: &[f64],
    p: f64,
    beta: f64,
    eps: f64,
    seed: u64,
) -> Result<MomentRecord> {
    if masses.is_empty() {
        return Err(Error::Argument("no measures given".into()));
    }
    if p == 0.0 {
        return Err(Error::Argument("moment order p must be nonzero".into()));
    }
    let powered: Vec<f64> = masses.iter().map(|m| m.powf(p)).collect();
    let estimate = McStats::from_values(&powered).mean()?;
    let (ci_low, ci_high) = bootstrap_mean_ci(&powered, BOOTSTRAP_RESAMPLES, 0.95, seed ^ 0x5eed_b007)?;
    let warning = (beta > 0.0 && p >= 2.0 / (beta * beta)).then(|| {
        format!("p = {p} is at or beyond the moment threshold 2/beta^2 = {}", 2.0 / (beta * beta))
    });
    Ok(MomentRecord {
        beta,
        eps,
        p,
        estimate,
        ci_low,
        ci_high,
        n_replicates: masses.len(),
        seed,
        warning,
    })
}

pub fn total_mass_moment(measures: &[GmcMeasure], p: f64, seed: u64) -> Result<MomentRecord> {
    let first = measures.first().ok_or_else(|| Error::Argument("no measures given".into()))?;
    let masses: Vec<f64> = measures.iter().map(GmcMeasure::total_mass).collect();
    moment_of_masses(&masses, p, first.beta, first.eps, seed)
}

/// Total masses of `replicates` draws at each `(level, beta)` pair.
pub fn simulate_total_masses(
    sampler: &FieldSampler,
    spec: &CovarianceSpec,
    jobs: &[(usize, f64)],
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    let sig: Vec<f64> = jobs
        .iter()
        .map(|&(l, _)| var_mollified(sampler.eps_levels()[l], spec))
        .collect::<Result<_>>()?;
    let grid = *sampler.grid();
    let per_rep = sampler.map_replicates(seed, replicates, exec, |s| {
        jobs.iter()
            .zip(&sig)
            .map(|(&(l, b), &s2)| {
                GmcMeasure::from_field_values(&grid, b, s.eps_levels[l], &s.values[l], s2).total_mass()
            })
            .collect::<Vec<f64>>()
    });
    Ok((0..jobs.len()).map(|j| per_rep.iter().map(|r| r[j]).collect()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    pub eta: f64,
    pub r2: f64,
    pub window_lengths: Vec<f64>,
    pub mean_log_max_mass: Vec<f64>,
}

/// Smallest window used by the fit: the first dyadic cell count covering ε.
fn first_window(m: &GmcMeasure) -> usize {
    let mut k = 1;
    while (k as f64) * m.grid.delta() < m.eps && k < m.cell_mass.len() {
        k *= 2;
    }
    k
}

/// Log-log regression of `E log max_s μ([s, s+δ])` against `δ` over dyadic windows
/// from the mollification scale up to a quarter of the domain.
pub fn holder_modulus_fit(measures: &[GmcMeasure]) -> Result<HolderFit> {
    if measures.len() < 100 {
        return Err(Error::Argument(format!("need at least 100 measures, got {}", measures.len())));
    }
    let n = measures[0].cell_mass.len();
    let d = measures[0].grid.delta();
    let mut windows = Vec::new();
    let mut k = first_window(&measures[0]);
    while k <= n / 4 {
        windows.push(k);
        k *= 2;
    }
    if windows.len() < 3 {
        return Err(Error::Numerical(format!("only {} dyadic scales available", windows.len())));
    }
    let mut sums = vec![0.0; windows.len()];
    for m in measures {
        let mut pre = vec![0.0; n + 1];
        for i in 0..n {
            pre[i + 1] = pre[i] + m.cell_mass[i];
        }
        for (w, &k) in windows.iter().enumerate() {
            let best = (0..=n - k).map(|s| pre[s + k] - pre[s]).fold(0.0, f64::max);
            sums[w] += best.ln();
        }
    }
    let x: Vec<f64> = windows.iter().map(|&k| (k as f64 * d).ln()).collect();
    let y: Vec<f64> = sums.iter().map(|s| s / measures.len() as f64).collect();
    let (_, eta, r2) = linear_fit(&x, &y)?;
    if !eta.is_finite() {
        return Err(Error::Numerical("non-finite Hölder exponent".into()));
    }
    Ok(HolderFit {
        eta,
        r2,
        window_lengths: windows.iter().map(|&k| k as f64 * d).collect(),
        mean_log_max_mass: y,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KahaneReport {
    pub coarse: MomentRecord,
    pub fine: MomentRecord,
    pub ordering_holds: bool,
}

/// Compares `E[μ([0,T])^p]`, `p < 0`, at a coarse and a fine level. Only
/// expectations enter, so each level is drawn from its own marginal covariance;
/// equal levels reuse one sample set so the estimates coincide.
pub fn kahane_negative_moment_check(
    spec: &CovarianceSpec,
    grid: &GridSpec,
    eps_coarse: f64,
    eps_fine: f64,
    p: f64,
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<KahaneReport> {
    if !(p < 0.0) {
        return Err(Error::Precondition(format!("p must be negative, got {p}")));
    }
    if !(eps_coarse >= eps_fine && eps_fine > 0.0) {
        return Err(Error::Precondition("need eps_coarse >= eps_fine > 0".into()));
    }
    let level = |eps: f64| -> Result<MomentRecord> {
        let sampler = FieldSampler::new(grid, &[eps], spec)?;
        let masses = simulate_total_masses(&sampler, spec, &[(0, spec.beta)], replicates, seed, exec)?;
        moment_of_masses(&masses[0], p, spec.beta, eps, seed)
    };
    let fine = level(eps_fine)?;
    let coarse = if eps_coarse == eps_fine { fine.clone() } else { level(eps_coarse)? };
    let slack = 0.5 * (coarse.ci_width() + fine.ci_width());
    let ordering_holds = coarse.estimate <= fine.estimate + slack;
    Ok(KahaneReport { coarse, fine, ordering_holds })
}
