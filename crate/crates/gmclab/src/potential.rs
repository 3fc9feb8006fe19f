//! The potential operator `G_α φ(z) = ∫ |z-y|^{-α} e^{α h(z-y)} φ(y) dy` on
//! cell midpoints, its inverse, fractional Sobolev norms and a numerical
//! non-degeneracy certificate.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covkernel::{mollified_lag, CovarianceSpec};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::fieldsim::GridSpec;

pub const ILL_CONDITIONED: f64 = 1e12;
pub const DICTIONARY_SIZE: usize = 64;
pub const RANDOM_PROBES: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    /// Exact cell integrals of `|z-y|^{-α}`, `e^{αh}` at the lag.
    Exact,
    /// `Δ e^{α C_ε(z-y)}` with the mollified covariance.
    Mollified,
    /// `Δ e^{α C_ij}` from a supplied covariance matrix.
    Matrix,
}

#[derive(Clone, Debug)]
pub struct PotentialOperator {
    pub alpha: f64,
    pub grid: GridSpec,
    pub kind: KernelKind,
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub condition_estimate: f64,
    pub spec_hash: String,
}

#[derive(Serialize, Deserialize)]
struct OperatorHeader {
    alpha: f64,
    kind: KernelKind,
    grid: GridSpec,
    spec_hash: String,
    condition_estimate: f64,
}

/// `∫_a^b |u|^{-α} du` in closed form.
fn power_integral(a: f64, b: f64, alpha: f64) -> f64 {
    let anti = |u: f64| u.signum() * u.abs().powf(1.0 - alpha) / (1.0 - alpha);
    anti(b) - anti(a)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha >= 1.0 {
        return Err(Error::NonIntegrable(alpha));
    }
    if !(alpha > 0.0) {
        return Err(Error::Argument(format!("alpha must lie in (0,1), got {alpha}")));
    }
    Ok(())
}

impl PotentialOperator {
    fn from_lags(alpha: f64, grid: &GridSpec, kind: KernelKind, lag: &[f64], spec_hash: String) -> Result<Self> {
        let n = grid.n_cells();
        let matrix = DMatrix::from_fn(n, n, |i, j| lag[i.abs_diff(j)]);
        Self::from_matrix_parts(alpha, grid, kind, matrix, spec_hash)
    }

    fn from_matrix_parts(
        alpha: f64,
        grid: &GridSpec,
        kind: KernelKind,
        matrix: DMatrix<f64>,
        spec_hash: String,
    ) -> Result<Self> {
        let eig = SymmetricEigen::new(matrix.clone());
        let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        eigenvalues.sort_by(f64::total_cmp);
        let lo = eigenvalues[0];
        let hi = eigenvalues[eigenvalues.len() - 1];
        let condition_estimate = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        Ok(PotentialOperator { alpha, grid: *grid, kind, matrix, eigenvalues, condition_estimate, spec_hash })
    }

    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        let v = &self.matrix * DVector::from_column_slice(phi);
        v.iter().cloned().collect()
    }

    /// `Δ Σ ψ_i (Gφ)_i`.
    pub fn pairing(&self, psi: &[f64], phi: &[f64]) -> f64 {
        let g = self.apply(phi);
        self.grid.delta() * psi.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn smallest_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Text export: one JSON header line, then one whitespace-separated row per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let header = OperatorHeader {
            alpha: self.alpha,
            kind: self.kind,
            grid: self.grid,
            spec_hash: self.spec_hash.clone(),
            condition_estimate: self.condition_estimate,
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for i in 0..self.matrix.nrows() {
            let row: Vec<String> = self.matrix.row(i).iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: OperatorHeader =
            serde_json::from_str(lines.next().ok_or_else(|| Error::Parse("empty operator file".into()))?)?;
        let n = header.grid.n_cells();
        let mut data = Vec::with_capacity(n * n);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            for tok in line.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|e| Error::Parse(format!("{tok}: {e}")))?);
            }
        }
        if data.len() != n * n {
            return Err(Error::Parse(format!("expected {} entries, found {}", n * n, data.len())));
        }
        let matrix = DMatrix::from_row_slice(n, n, &data);
        Self::from_matrix_parts(header.alpha, &header.grid, header.kind, matrix, header.spec_hash)
    }
}

/// Exact product-integration operator on the midpoints.
pub fn build_g(alpha: f64, grid: &GridSpec, spec: &CovarianceSpec) -> Result<PotentialOperator> {
    check_alpha(alpha)?;
    let d = grid.delta();
    let scale = d.powf(1.0 - alpha);
    let lag: Vec<f64> = (0..grid.n_cells())
        .map(|k| {
            let k = k as f64;
            scale * power_integral(k - 0.5, k + 0.5, alpha) * (alpha * spec.h.eval(k * d)).exp()
        })
        .collect();
    PotentialOperator::from_lags(alpha, grid, KernelKind::Exact, &lag, spec.hash())
}

/// Operator with kernel `e^{α C_ε}`, the exact second-moment kernel of
/// ε-level measures sampled at midpoints.
pub fn build_g_mollified(
    alpha: f64,
    eps: f64,
    grid: &GridSpec,
    spec: &CovarianceSpec,
    exec: Execution,
) -> Result<PotentialOperator> {
    check_alpha(alpha)?;
    let d = grid.delta();
    let lag = try_map_indexed(exec, grid.n_cells(), |k| {
        Ok(d * (alpha * mollified_lag(k as f64 * d, eps, eps, spec)?.value).exp())
    })?;
    PotentialOperator::from_lags(alpha, grid, KernelKind::Mollified, &lag, spec.hash())
}

/// Operator with kernel `Δ e^{α C_ij}` for a given covariance matrix on the cells.
pub fn build_g_from_covariance(alpha: f64, grid: &GridSpec, cov: &DMatrix<f64>, tag: &str) -> Result<PotentialOperator> {
    check_alpha(alpha)?;
    let n = grid.n_cells();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::Argument("covariance does not match the grid".into()));
    }
    let d = grid.delta();
    let m = DMatrix::from_fn(n, n, |i, j| d * (alpha * cov[(i, j)]).exp());
    PotentialOperator::from_matrix_parts(alpha, grid, KernelKind::Matrix, m, tag.to_string())
}

/// `∫₀ᵗ |z-y|^{-α} dy`.
pub fn riesz_indicator_exact(alpha: f64, t: f64, z: f64, t_len: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(0.0..=t_len).contains(&t) || !(0.0..=t_len).contains(&z) {
        return Err(Error::Domain(format!("t = {t}, z = {z} must lie in [0, {t_len}]")));
    }
    let p = 1.0 - alpha;
    Ok(if z < t {
        (z.powf(p) + (t - z).powf(p)) / p
    } else {
        (z.powf(p) - (z - t).powf(p)) / p
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inversion {
    pub solution: Vec<f64>,
    /// `‖Gφ - rhs‖ / ‖rhs‖`.
    pub residual: f64,
    pub condition_estimate: f64,
    pub regularized: bool,
    pub warning: Option<String>,
}

pub fn invert_g(op: &PotentialOperator, rhs: &[f64]) -> Result<Inversion> {
    let n = op.matrix.nrows();
    if rhs.len() != n {
        return Err(Error::Argument(format!("rhs has {} entries, operator has {n}", rhs.len())));
    }
    let b = DVector::from_column_slice(rhs);
    let ill = !(op.condition_estimate <= ILL_CONDITIONED);
    let x = if ill {
        // Eigenvalue floor at λ_max / 1e12.
        let eig = SymmetricEigen::new(op.matrix.clone());
        let floor = op.eigenvalues[n - 1] / ILL_CONDITIONED;
        let coef = eig.eigenvectors.transpose() * &b;
        let scaled = DVector::from_iterator(n, coef.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| c / l.max(floor)));
        &eig.eigenvectors * scaled
    } else {
        match Cholesky::new(op.matrix.clone()) {
            Some(ch) => ch.solve(&b),
            None => op
                .matrix
                .clone()
                .lu()
                .solve(&b)
                .ok_or_else(|| Error::Numerical("singular potential operator".into()))?,
        }
    };
    let r = &op.matrix * &x - &b;
    let bn = b.norm();
    let residual = if bn > 0.0 { r.norm() / bn } else { r.norm() };
    Ok(Inversion {
        solution: x.iter().cloned().collect(),
        residual,
        condition_estimate: op.condition_estimate,
        regularized: ill,
        warning: ill.then(|| {
            format!("condition estimate {:.3e} above {ILL_CONDITIONED:e}; eigenvalue floor applied", op.condition_estimate)
        }),
    })
}

/// Gram form of the `W^{s,2}` inner product on point values:
/// `Δ I + 2 (diag(D) - W)`, `W_ij = Δ²/|m_i - m_j|^{1+2s}`.
fn sobolev_form(grid: &GridSpec, s: f64) -> DMatrix<f64> {
    let n = grid.n_cells();
    let d = grid.delta();
    let w: Vec<f64> = (0..n).map(|k| if k == 0 { 0.0 } else { d * d / (k as f64 * d).powf(1.0 + 2.0 * s) }).collect();
    let mut m = DMatrix::from_fn(n, n, |i, j| -2.0 * w[i.abs_diff(j)]);
    for i in 0..n {
        let row: f64 = (0..n).map(|j| w[i.abs_diff(j)]).sum();
        m[(i, i)] = d + 2.0 * row;
    }
    m
}

/// Cosine dictionary `cos(π k x / T)`, `k = 0..size`, sampled at midpoints (columns).
pub fn dictionary(grid: &GridSpec, size: usize) -> DMatrix<f64> {
    let t = grid.t_len;
    DMatrix::from_fn(grid.n_cells(), size, |i, k| (std::f64::consts::PI * k as f64 * grid.midpoint(i) / t).cos())
}

/// Dual-norm machinery for order `-s`: `‖f‖² = bᵀ A⁻¹ b` with
/// `b = Δ Ψᵀ f` and `A = Ψᵀ M_s Ψ`.
pub struct DualNorm {
    psi: DMatrix<f64>,
    gram: Cholesky<f64, nalgebra::Dyn>,
    delta: f64,
}

impl DualNorm {
    pub fn new(grid: &GridSpec, s: f64) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Argument(format!("dual order must lie in (0,1), got {s}")));
        }
        let psi = dictionary(grid, DICTIONARY_SIZE.min(grid.n_cells()));
        let a = psi.transpose() * sobolev_form(grid, s) * &psi;
        let gram = Cholesky::new(a).ok_or_else(|| Error::Numerical("dictionary Gram matrix not positive definite".into()))?;
        Ok(DualNorm { psi, gram, delta: grid.delta() })
    }

    fn pairing_vector(&self, f: &[f64]) -> DVector<f64> {
        self.psi.transpose() * DVector::from_column_slice(f) * self.delta
    }

    pub fn norm_sq(&self, f: &[f64]) -> f64 {
        let b = self.pairing_vector(f);
        b.dot(&self.gram.solve(&b)).max(0.0)
    }

    pub fn norm(&self, f: &[f64]) -> f64 {
        self.norm_sq(f).sqrt()
    }

    /// Matrix `Q` with `‖Ψc‖² = cᵀ Q c`.
    fn quadratic_on_span(&self) -> DMatrix<f64> {
        let b = self.psi.transpose() * &self.psi * self.delta;
        let x = self.gram.solve(&b);
        let q = b.transpose() * x;
        (&q + q.transpose()) * 0.5
    }
}

/// `W^{s,2}` norm of midpoint samples for `s ∈ (-1,1)`: L² for `s = 0`,
/// Gagliardo form for `s > 0`, dictionary dual norm for `s < 0`.
pub fn sobolev_norm(grid: &GridSpec, f: &[f64], s: f64) -> Result<f64> {
    if !(s.abs() < 1.0) {
        return Err(Error::Domain(format!("Sobolev order must satisfy |s| < 1, got {s}")));
    }
    if f.len() != grid.n_cells() {
        return Err(Error::Argument(format!("function has {} samples, grid has {} cells", f.len(), grid.n_cells())));
    }
    let d = grid.delta();
    if s == 0.0 {
        return Ok((f.iter().map(|v| v * v).sum::<f64>() * d).sqrt());
    }
    if s < 0.0 {
        return Ok(DualNorm::new(grid, -s)?.norm(f));
    }
    let n = f.len();
    let mut w = vec![0.0; n];
    for (k, wk) in w.iter_mut().enumerate().skip(1) {
        *wk = d * d / (k as f64 * d).powf(1.0 + 2.0 * s);
    }
    let l2: f64 = f.iter().map(|v| v * v).sum::<f64>() * d;
    let mut semi = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let df = f[i] - f[j];
            semi += df * df * w[j - i];
        }
    }
    Ok((l2 + 2.0 * semi).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NondegeneracyReport {
    pub beta: f64,
    pub s: f64,
    pub c0: f64,
    pub dictionary_min: f64,
    pub random_min: f64,
    pub smallest_eigenvalue: f64,
    pub witness: Vec<f64>,
}

fn random_smooth(grid: &GridSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let t = grid.t_len;
    let bumps: Vec<(f64, f64, f64)> = (0..rng.random_range(1..6usize))
        .map(|_| {
            (
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..t),
                rng.random_range(0.02..0.25) * t,
            )
        })
        .collect();
    grid.midpoints()
        .into_iter()
        .map(|x| bumps.iter().map(|(a, c, w)| a * (-(x - c) * (x - c) / (2.0 * w * w)).exp()).sum())
        .collect()
}

/// Lower estimate of `c₀` in `⟨ψ, G_{β²} ψ⟩ ≥ c₀ ‖ψ‖²_{-s_β}`, `s_β = (1-β²)/2`:
/// the minimum of the generalized Rayleigh quotient over the cosine span and
/// over random bump superpositions.
pub fn nondegeneracy_check(spec: &CovarianceSpec, beta: f64, grid: &GridSpec, seed: u64) -> Result<NondegeneracyReport> {
    let op = build_g(beta * beta, grid, spec)?;
    nondegeneracy_of(&op, beta, seed)
}

pub fn nondegeneracy_of(op: &PotentialOperator, beta: f64, seed: u64) -> Result<NondegeneracyReport> {
    let grid = op.grid;
    let s = 0.5 * (1.0 - beta * beta);
    let dual = DualNorm::new(&grid, s)?;
    let d = grid.delta();
    // Span: min eig of L⁻¹ N L⁻ᵀ with N = ΔΨᵀGΨ and Q = L Lᵀ.
    let num = dual.psi.transpose() * &op.matrix * &dual.psi * d;
    let num = (&num + num.transpose()) * 0.5;
    let q = dual.quadratic_on_span();
    let lq = Cholesky::new(q).ok_or_else(|| Error::Numerical("dual form on the dictionary is singular".into()))?.l();
    let linv = lq
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("dual form on the dictionary is singular".into()))?;
    let red = &linv * num * linv.transpose();
    let eig = SymmetricEigen::new((&red + red.transpose()) * 0.5);
    let (imin, dictionary_min) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let c = linv.transpose() * eig.eigenvectors.column(imin);
    let span_witness: Vec<f64> = (&dual.psi * c).iter().cloned().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random_min = f64::INFINITY;
    let mut random_witness = Vec::new();
    for _ in 0..RANDOM_PROBES {
        let psi = random_smooth(&grid, &mut rng);
        let den = dual.norm_sq(&psi);
        if den <= 0.0 {
            continue;
        }
        let qv = op.pairing(&psi, &psi) / den;
        if qv < random_min {
            random_min = qv;
            random_witness = psi;
        }
    }
    let (c0, witness) =
        if dictionary_min <= random_min { (dictionary_min, span_witness) } else { (random_min, random_witness) };
    if c0 < 0.0 {
        return Err(Error::NonDegeneracy { quotient: c0, witness });
    }
    Ok(NondegeneracyReport {
        beta,
        s,
        c0,
        dictionary_min,
        random_min,
        smallest_eigenvalue: op.smallest_eigenvalue(),
        witness,
    })
}

/// Least-squares Hölder exponent of samples `g` on the midpoints over dyadic lags.
pub fn holder_exponent(grid: &GridSpec, g: &[f64]) -> Result<f64> {
    let n = g.len();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut k = 1;
    while k <= n / 4 {
        let osc = (0..n - k).map(|i| (g[i + k] - g[i]).abs()).fold(0.0, f64::max);
        if osc > 0.0 {
            x.push((k as f64 * grid.delta()).ln());
            y.push(osc.ln());
        }
        k *= 2;
    }
    Ok(crate::stats::linear_fit(&x, &y)?.1)
}
