//! Exact and mollified covariance kernels of the log-correlated field
//! `R(x, y) = log(1/|x - y|) + h(x - y)`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::interp::UniformTable;
use crate::quad::{integrate, integrate_endpoint_singular, Integral, Tolerance};

/// Knot intervals used for the mollifier profile and pair densities.
const PROFILE_INTERVALS: usize = 4096;
/// Minimum number of nodes in an h table.
pub const MIN_H_NODES: usize = 1024;
/// Largest quadrature error bound accepted for a covariance entry.
pub const COV_ERROR_BOUND: f64 = 1e-9;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MollifierFamily {
    #[default]
    /// Self-convolution of the smooth bump `exp(-1/(1-4x^2))` on (-1/2, 1/2).
    Bump,
    /// Self-convolution of a Gaussian of standard deviation `width`, truncated
    /// to (-1/2, 1/2) and renormalized.
    TruncatedGaussian { width: f64 },
}

impl MollifierFamily {
    fn key(&self) -> (u8, u64) {
        match self {
            MollifierFamily::Bump => (0, 0),
            MollifierFamily::TruncatedGaussian { width } => (1, width.to_bits()),
        }
    }

    fn base(&self, x: f64) -> f64 {
        if x.abs() >= 0.5 {
            return 0.0;
        }
        match self {
            MollifierFamily::Bump => (-1.0 / (1.0 - 4.0 * x * x)).exp(),
            MollifierFamily::TruncatedGaussian { width } => (-0.5 * (x / width).powi(2)).exp(),
        }
    }

    /// The unit-scale density θ supported on [-1, 1].
    pub fn profile(&self) -> Arc<UniformTable> {
        type Cache = Mutex<HashMap<(u8, u64), Arc<UniformTable>>>;
        static CACHE: OnceLock<Cache> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let mut guard = cache.lock().unwrap_or_else(|p| p.into_inner());
        guard
            .entry(self.key())
            .or_insert_with(|| Arc::new(self.build_profile()))
            .clone()
    }

    fn build_profile(&self) -> UniformTable {
        let tol = Tolerance { abs: 1e-15, rel: 1e-14, max_intervals: 2000 };
        let n = PROFILE_INTERVALS;
        let values: Vec<f64> = (0..=n)
            .map(|i| {
                let x = -1.0 + 2.0 * i as f64 / n as f64;
                let lo = (-0.5f64).max(x - 0.5);
                let hi = 0.5f64.min(x + 0.5);
                if hi <= lo {
                    return 0.0;
                }
                integrate(|s| self.base(s) * self.base(x - s), lo, hi, tol)
                    .map(|r| r.value)
                    .unwrap_or(0.0)
            })
            .collect();
        let mut table = UniformTable::new(-1.0, 1.0, values);
        let mass = table.integral();
        table.scale(1.0 / mass);
        table
    }

    /// `|∫θ - 1|` measured by adaptive quadrature of the tabulated density.
    pub fn normalization_error(&self) -> f64 {
        let p = self.profile();
        let tol = Tolerance { abs: 1e-14, rel: 1e-14, max_intervals: 20000 };
        integrate(|x| p.eval(x), -1.0, 1.0, tol).map(|r| (r.value - 1.0).abs()).unwrap_or(f64::INFINITY)
    }

    /// Scaled density θ_ε(a) = θ(a/ε)/ε.
    pub fn density(&self, eps: f64, a: f64) -> f64 {
        self.profile().eval(a / eps) / eps
    }
}

/// Tabulated even perturbation h, zero outside `[-half_width, half_width]`.
#[derive(Clone, Debug)]
pub struct PerturbationTable {
    half_width: f64,
    table: UniformTable,
}

impl PartialEq for PerturbationTable {
    fn eq(&self, other: &Self) -> bool {
        self.half_width == other.half_width && self.table.values() == other.table.values()
    }
}

impl PerturbationTable {
    /// Builds a table from node values on a uniform grid over
    /// `[-half_width, half_width]`; evenness is enforced by averaging mirrored nodes.
    pub fn new(half_width: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < MIN_H_NODES {
            return Err(Error::Argument(format!(
                "h table needs at least {MIN_H_NODES} nodes, got {}",
                values.len()
            )));
        }
        if !(half_width > 0.0) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("h table must be finite with positive half width".into()));
        }
        let n = values.len();
        let sym: Vec<f64> = (0..n).map(|i| 0.5 * (values[i] + values[n - 1 - i])).collect();
        Ok(PerturbationTable { half_width, table: UniformTable::new(-half_width, half_width, sym) })
    }

    pub fn from_fn(half_width: f64, nodes: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let vals = (0..nodes)
            .map(|i| f(-half_width + 2.0 * half_width * i as f64 / (nodes - 1) as f64))
            .collect();
        Self::new(half_width, vals)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn values(&self) -> &[f64] {
        self.table.values()
    }

    pub fn eval(&self, u: f64) -> f64 {
        self.table.eval(u)
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub enum Perturbation {
    #[default]
    Zero,
    Table(PerturbationTable),
}

impl Perturbation {
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Perturbation::Zero => 0.0,
            Perturbation::Table(t) => t.eval(u),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Perturbation::Zero)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceSpec {
    pub t_len: f64,
    pub beta: f64,
    pub h: Perturbation,
    pub mollifier: MollifierFamily,
}

/// Value of the exact kernel, which is infinite on the diagonal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cov {
    Finite(f64),
    Infinite,
}

impl Cov {
    pub fn finite(self) -> Option<f64> {
        match self {
            Cov::Finite(v) => Some(v),
            Cov::Infinite => None,
        }
    }
}

/// A quadrature value with its error bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelValue {
    pub value: f64,
    pub error: f64,
}

impl CovarianceSpec {
    pub fn new(t_len: f64, beta: f64) -> Self {
        CovarianceSpec { t_len, beta, h: Perturbation::Zero, mollifier: MollifierFamily::Bump }
    }

    pub fn with_mollifier(mut self, m: MollifierFamily) -> Self {
        self.mollifier = m;
        self
    }

    pub fn with_h(mut self, h: Perturbation) -> Self {
        self.h = h;
        self
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.t_len > 0.0 && self.t_len.is_finite()) {
            v.push(format!("T must be positive and finite, got {}", self.t_len));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            v.push(format!("beta must lie in (0,1), got {}", self.beta));
        }
        if let MollifierFamily::TruncatedGaussian { width } = self.mollifier {
            if !(width > 0.0 && width.is_finite()) {
                v.push(format!("truncated Gaussian width must be positive, got {width}"));
            }
        }
        if let Perturbation::Table(t) = &self.h {
            if t.half_width() < self.t_len {
                v.push(format!(
                    "h table half width {} must cover lags up to T = {}",
                    t.half_width(),
                    self.t_len
                ));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// `log(1/|u|) + h(u)` for `u != 0`.
    pub fn kernel(&self, u: f64) -> f64 {
        -u.abs().ln() + self.h.eval(u)
    }

    /// Key-value text form with round-trip exact decimals.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# gmclab covariance spec\n");
        let _ = writeln!(s, "T = {}", self.t_len);
        let _ = writeln!(s, "beta = {}", self.beta);
        match &self.mollifier {
            MollifierFamily::Bump => s.push_str("mollifier = bump\n"),
            MollifierFamily::TruncatedGaussian { width } => {
                s.push_str("mollifier = truncated_gaussian\n");
                let _ = writeln!(s, "mollifier_width = {width}");
            }
        }
        match &self.h {
            Perturbation::Zero => s.push_str("h = zero\n"),
            Perturbation::Table(t) => {
                s.push_str("h = table\n");
                let _ = writeln!(s, "h_half_width = {}", t.half_width());
                let vals: Vec<String> = t.values().iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "h_values = {}", vals.join(" "));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", no + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let num = |k: &str| -> Result<f64> {
            map.get(k)
                .ok_or_else(|| Error::Parse(format!("missing key `{k}`")))?
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("`{k}`: {e}")))
        };
        let mollifier = match map.get("mollifier").map(String::as_str).unwrap_or("bump") {
            "bump" => MollifierFamily::Bump,
            "truncated_gaussian" => {
                MollifierFamily::TruncatedGaussian { width: num("mollifier_width")? }
            }
            other => return Err(Error::Parse(format!("unknown mollifier `{other}`"))),
        };
        let h = match map.get("h").map(String::as_str).unwrap_or("zero") {
            "zero" => Perturbation::Zero,
            "table" => {
                let vals = map
                    .get("h_values")
                    .ok_or_else(|| Error::Parse("missing key `h_values`".into()))?
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("h_values: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                Perturbation::Table(PerturbationTable::new(num("h_half_width")?, vals)?)
            }
            other => return Err(Error::Parse(format!("unknown h kind `{other}`"))),
        };
        Ok(CovarianceSpec { t_len: num("T")?, beta: num("beta")?, h, mollifier })
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

fn check_domain(x: f64, spec: &CovarianceSpec) -> Result<()> {
    if !(0.0..=spec.t_len).contains(&x) {
        return Err(Error::Domain(format!("{x} not in [0, {}]", spec.t_len)));
    }
    Ok(())
}

pub fn cov_exact(x: f64, y: f64, spec: &CovarianceSpec) -> Result<Cov> {
    check_domain(x, spec)?;
    check_domain(y, spec)?;
    if x == y {
        return Ok(Cov::Infinite);
    }
    Ok(Cov::Finite(spec.kernel(x - y)))
}

/// Density of `a + b` with `a ~ θ_ε`, `b ~ θ_ε'` (equal to that of `a - b`).
fn pair_density(m: &MollifierFamily, e1: f64, e2: f64) -> Arc<UniformTable> {
    type Key = ((u8, u64), u64, u64);
    static CACHE: OnceLock<Mutex<HashMap<Key, Arc<UniformTable>>>> = OnceLock::new();
    let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
    let key = (m.key(), lo.to_bits(), hi.to_bits());
    let cache = CACHE.get_or_init(Default::default);
    if let Some(t) = cache.lock().unwrap_or_else(|p| p.into_inner()).get(&key) {
        return t.clone();
    }
    let theta = m.profile();
    let l = lo + hi;
    let n = PROFILE_INTERVALS;
    let tol = Tolerance { abs: 1e-13 / l, rel: 1e-12, max_intervals: 4000 };
    let values: Vec<f64> = (0..=n)
        .map(|i| {
            let w = -l + 2.0 * l * i as f64 / n as f64;
            let a0 = (-lo).max(w - hi);
            let a1 = lo.min(w + hi);
            if a1 <= a0 {
                return 0.0;
            }
            integrate(|a| theta.eval(a / lo) * theta.eval((w - a) / hi), a0, a1, tol)
                .map(|r| r.value / (lo * hi))
                .unwrap_or(0.0)
        })
        .collect();
    let mut table = UniformTable::new(-l, l, values);
    let mass = table.integral();
    table.scale(1.0 / mass);
    let table = Arc::new(table);
    cache.lock().unwrap_or_else(|p| p.into_inner()).insert(key, table.clone());
    table
}

/// Covariance of `X_ε(x)` and `X_ε'(y)` as a function of the lag `d = x - y`.
pub fn mollified_lag(d: f64, eps: f64, eps2: f64, spec: &CovarianceSpec) -> Result<KernelValue> {
    if !(eps > 0.0 && eps2 > 0.0) {
        return Err(Error::Argument(format!("smoothing levels must be positive: {eps}, {eps2}")));
    }
    let rho = pair_density(&spec.mollifier, eps, eps2);
    let l = eps + eps2;
    let d = d.abs();
    let tol = Tolerance { abs: 1e-10, rel: 0.0, max_intervals: 4000 };
    let sing = |s: f64| -s.ln() + spec.h.eval(s);
    let parts: Vec<Integral> = if d < l {
        vec![
            integrate_endpoint_singular(|s| rho.eval(d - s) * sing(s), d + l, tol)?,
            integrate_endpoint_singular(|s| rho.eval(d + s) * sing(s), l - d, tol)?,
        ]
    } else if d < 3.0 * l {
        // Singularity just beyond the support edge: cluster nodes near w = l.
        vec![integrate_endpoint_singular(|s| rho.eval(l - s) * sing(d - l + s), 2.0 * l, tol)?]
    } else {
        vec![integrate(|w| rho.eval(w) * spec.kernel(d - w), -l, l, tol)?]
    };
    let value = parts.iter().map(|p| p.value).sum();
    let error: f64 = parts.iter().map(|p| p.error).sum();
    if error > COV_ERROR_BOUND {
        return Err(Error::Quadrature { achieved: error, requested: COV_ERROR_BOUND });
    }
    Ok(KernelValue { value, error })
}

pub fn cov_mollified(
    x: f64,
    y: f64,
    eps: f64,
    eps2: f64,
    spec: &CovarianceSpec,
) -> Result<KernelValue> {
    mollified_lag(x - y, eps, eps2, spec)
}

pub fn var_mollified(eps: f64, spec: &CovarianceSpec) -> Result<f64> {
    Ok(mollified_lag(0.0, eps, eps, spec)?.value)
}

/// Result of [`build_nondegenerate_h`].
#[derive(Clone, Debug)]
pub struct NondegenerateBuild {
    pub spec: CovarianceSpec,
    /// Minimum of the DFT of the assembled kernel over the frequency grid.
    pub spectral_margin: f64,
    /// Minimum of the DFT of the cut-off log kernel alone (the r = 0 candidate).
    pub raw_margin: f64,
    pub bump_radius: f64,
    pub bump_height: f64,
}

/// Frequency grid size used by [`build_nondegenerate_h`].
pub const SPECTRAL_POINTS: usize = 1 << 12;

fn smooth_step(x: f64) -> f64 {
    let phi = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        phi(x) / (phi(x) + phi(1.0 - x))
    }
}

/// Cut-off ψ0: one on [-4R, 4R], smoothly decaying to zero at |u| = 6R.
pub fn cutoff(u: f64, r_cut: f64) -> f64 {
    1.0 - smooth_step((u.abs() - 4.0 * r_cut) / (2.0 * r_cut))
}

fn radial_bump(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - x * x)).exp()
    }
}

/// Periodic sampling box used for the spectral test: `(period, dx)`.
pub fn spectral_box(r_cut: f64) -> (f64, f64) {
    let period = 32.0 * r_cut;
    (period, period / SPECTRAL_POINTS as f64)
}

/// Samples of `ψ0·log(1/|·|)` on the periodic box (index j ↔ u = j·dx, wrapped).
/// The singular sample is the exact cell average of the logarithm.
pub fn cutoff_log_samples(r_cut: f64) -> Vec<f64> {
    let (period, dx) = spectral_box(r_cut);
    (0..SPECTRAL_POINTS)
        .map(|j| {
            if j == 0 {
                return 1.0 - (0.5 * dx).ln();
            }
            let u = if (j as f64) * dx < 0.5 * period { j as f64 * dx } else { j as f64 * dx - period };
            cutoff(u, r_cut) * -u.abs().ln()
        })
        .collect()
}

/// Real part of `dx · DFT(samples)` (the samples are even, so this is the spectrum).
pub fn sampled_spectrum(samples: &[f64], dx: f64) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf.iter().map(|c| c.re * dx).collect()
}

fn inverse_ft_bump(u: f64, radius: f64, height: f64) -> f64 {
    let tol = Tolerance { abs: 1e-13, rel: 1e-13, max_intervals: 4000 };
    integrate(
        |xi| radial_bump(xi / radius) * (2.0 * std::f64::consts::PI * xi * u).cos(),
        0.0,
        radius,
        tol,
    )
    .map(|r| 2.0 * height * r.value)
    .unwrap_or(f64::NAN)
}

/// Constructs h = F^{-1} r with r a compactly supported smooth bump in frequency,
/// so that the sampled spectrum of `ψ0·log(1/|·|) + h` is nonnegative.
pub fn build_nondegenerate_h(r_cut: f64, skeleton: &CovarianceSpec) -> Result<NondegenerateBuild> {
    if r_cut < skeleton.t_len {
        return Err(Error::Argument(format!("R_cut = {r_cut} must be at least T = {}", skeleton.t_len)));
    }
    let (period, dx) = spectral_box(r_cut);
    let n = SPECTRAL_POINTS;
    let base = cutoff_log_samples(r_cut);
    let spec0 = sampled_spectrum(&base, dx);
    let freq = |m: usize| if m <= n / 2 { m as f64 / period } else { (n - m) as f64 / period };
    let raw_margin = spec0.iter().cloned().fold(f64::INFINITY, f64::min);
    if raw_margin >= 0.0 {
        return Ok(NondegenerateBuild {
            spec: skeleton.clone().with_h(Perturbation::Zero),
            spectral_margin: raw_margin,
            raw_margin,
            bump_radius: 0.0,
            bump_height: 0.0,
        });
    }
    let neg: Vec<usize> = (0..n).filter(|&m| spec0[m] < 0.0).collect();
    let max_neg_freq = neg.iter().map(|&m| freq(m)).fold(0.0, f64::max);
    let worst = neg.iter().cloned().fold(0, |a, m| if spec0[m] < spec0[a] { m } else { a });
    let mut last_margin = raw_margin;
    for factor in [1.5, 2.0, 3.0, 4.0, 6.0] {
        let radius = (max_neg_freq + 1.0 / period) * factor;
        let height = neg
            .iter()
            .map(|&m| -spec0[m] / radial_bump(freq(m) / radius))
            .fold(0.0, f64::max)
            * 1.25;
        let samples: Vec<f64> = (0..n)
            .map(|j| {
                let u = if (j as f64) * dx < 0.5 * period { j as f64 * dx } else { j as f64 * dx - period };
                base[j] + inverse_ft_bump(u, radius, height)
            })
            .collect();
        let margin = sampled_spectrum(&samples, dx).into_iter().fold(f64::INFINITY, f64::min);
        last_margin = margin;
        if margin >= 0.0 {
            let half = 2.0 * skeleton.t_len;
            let table =
                PerturbationTable::from_fn(half, 2049, |u| inverse_ft_bump(u, radius, height))?;
            return Ok(NondegenerateBuild {
                spec: skeleton.clone().with_h(Perturbation::Table(table)),
                spectral_margin: margin,
                raw_margin,
                bump_radius: radius,
                bump_height: height,
            });
        }
    }
    Err(Error::Construction(format!(
        "spectrum stays negative (last margin {last_margin:.3e}); most negative frequency {}",
        freq(worst)
    )))
}
