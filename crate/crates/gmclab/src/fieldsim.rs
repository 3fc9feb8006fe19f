//! Exact joint Gaussian sampling of mollified fields on a uniform grid,
//! coupled across smoothing levels.
//!
//! Fields are sampled at the cell midpoints of the grid; node values are never
//! needed because every consumer (measures, residuals, loadings) works per cell.

use std::io::{Read, Write};

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covkernel::{mollified_lag, CovarianceSpec};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, try_map_indexed, Execution};

pub const DEFAULT_DIM_CAP: usize = 8192;
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(rename = "T")]
    pub t_len: f64,
    pub n_points: usize,
}

impl GridSpec {
    pub fn new(t_len: f64, n_points: usize) -> Result<Self> {
        let g = GridSpec { t_len, n_points };
        let v = g.violations();
        if v.is_empty() {
            Ok(g)
        } else {
            Err(Error::Validation(v))
        }
    }

    /// Grid with `cells` equal cells on [0, T].
    pub fn with_cells(t_len: f64, cells: usize) -> Result<Self> {
        Self::new(t_len, cells + 1)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.n_points < 2 {
            v.push(format!("grid needs at least 2 points, got {}", self.n_points));
        }
        if !(self.t_len > 0.0 && self.t_len.is_finite()) {
            v.push(format!("grid length must be positive, got {}", self.t_len));
        }
        v
    }

    pub fn delta(&self) -> f64 {
        self.t_len / (self.n_points - 1) as f64
    }

    pub fn n_cells(&self) -> usize {
        self.n_points - 1
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.t_len
        } else {
            i as f64 * self.delta()
        }
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.delta()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.node(i)).collect()
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.n_cells()).map(|i| self.midpoint(i)).collect()
    }
}

/// One replicate of the fields at every level, sampled at cell midpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub grid: GridSpec,
    pub eps_levels: Vec<f64>,
    /// `values[level][cell]`.
    pub values: Vec<Vec<f64>>,
    pub seed: u64,
    pub replicate: u64,
    pub jitter_used: f64,
}

/// Covariance of the field at `level_a` and `level_b` as a function of the
/// lag in cells, `k = 0..n_cells`.
pub fn lag_profile(
    grid: &GridSpec,
    eps_a: f64,
    eps_b: f64,
    spec: &CovarianceSpec,
    exec: Execution,
) -> Result<Vec<f64>> {
    let d = grid.delta();
    try_map_indexed(exec, grid.n_cells(), |k| {
        Ok(mollified_lag(k as f64 * d, eps_a, eps_b, spec)?.value)
    })
}

pub fn build_joint_covariance(
    grid: &GridSpec,
    eps_levels: &[f64],
    spec: &CovarianceSpec,
) -> Result<DMatrix<f64>> {
    build_joint_covariance_capped(grid, eps_levels, spec, DEFAULT_DIM_CAP, Execution::default())
}

pub fn build_joint_covariance_capped(
    grid: &GridSpec,
    eps_levels: &[f64],
    spec: &CovarianceSpec,
    cap: usize,
    exec: Execution,
) -> Result<DMatrix<f64>> {
    if eps_levels.is_empty() {
        return Err(Error::Argument("at least one smoothing level is required".into()));
    }
    if let Some(e) = eps_levels.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::Argument(format!("smoothing levels must be positive, got {e}")));
    }
    let n = grid.n_cells();
    let dim = n * eps_levels.len();
    if dim > cap {
        return Err(Error::Size { dim, cap });
    }
    let mut c = DMatrix::zeros(dim, dim);
    for (a, &ea) in eps_levels.iter().enumerate() {
        for (b, &eb) in eps_levels.iter().enumerate().skip(a) {
            let prof = lag_profile(grid, ea, eb, spec, exec)?;
            for i in 0..n {
                for j in 0..n {
                    let v = prof[i.abs_diff(j)];
                    c[(a * n + i, b * n + j)] = v;
                    c[(b * n + j, a * n + i)] = v;
                }
            }
        }
    }
    Ok(c)
}

/// Lower Cholesky factor with the jitter that made it exist.
pub fn factor_with_jitter(c: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let mut last = 0.0;
    for &j in JITTER_LADDER.iter() {
        last = j;
        let mut m = c.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += j;
        }
        if let Some(ch) = Cholesky::new(m) {
            return Ok((ch.l(), j));
        }
    }
    let min_eigenvalue = SymmetricEigen::new(c.clone()).eigenvalues.min();
    Err(Error::Factorization { jitter: last, min_eigenvalue })
}

/// Reusable sampler holding the factor of the joint covariance.
#[derive(Clone, Debug)]
pub struct FieldSampler {
    grid: GridSpec,
    eps_levels: Vec<f64>,
    /// Lower factor rows packed contiguously: row i holds i+1 entries.
    packed: Vec<f64>,
    dim: usize,
    jitter_used: f64,
}

impl FieldSampler {
    pub fn new(grid: &GridSpec, eps_levels: &[f64], spec: &CovarianceSpec) -> Result<Self> {
        let c = build_joint_covariance(grid, eps_levels, spec)?;
        Self::from_covariance(grid, eps_levels, &c)
    }

    pub fn from_covariance(grid: &GridSpec, eps_levels: &[f64], c: &DMatrix<f64>) -> Result<Self> {
        let (l, jitter_used) = factor_with_jitter(c)?;
        let dim = c.nrows();
        let mut packed = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in 0..=i {
                packed.push(l[(i, j)]);
            }
        }
        Ok(FieldSampler { grid: *grid, eps_levels: eps_levels.to_vec(), packed, dim, jitter_used })
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn eps_levels(&self) -> &[f64] {
        &self.eps_levels
    }

    /// Replicate `replicate` of the stream `seed`; independent of call order.
    pub fn sample(&self, seed: u64, replicate: u64) -> FieldSample {
        let mut rng = replicate_rng(seed, replicate);
        let z: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut x = vec![0.0; self.dim];
        let mut off = 0;
        for (i, xi) in x.iter_mut().enumerate() {
            let row = &self.packed[off..off + i + 1];
            *xi = row.iter().zip(&z).map(|(a, b)| a * b).sum();
            off += i + 1;
        }
        let n = self.grid.n_cells();
        FieldSample {
            grid: self.grid,
            eps_levels: self.eps_levels.clone(),
            values: x.chunks(n).map(|c| c.to_vec()).collect(),
            seed,
            replicate,
            jitter_used: self.jitter_used,
        }
    }

    /// Applies `f` to replicates `0..count`, returning results in replicate order.
    pub fn map_replicates<T, F>(&self, seed: u64, count: usize, exec: Execution, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(FieldSample) -> T + Sync + Send,
    {
        map_indexed(exec, count, |r| f(self.sample(seed, r as u64)))
    }
}

/// Generator for one replicate: ChaCha8 keyed by the seed, stream = replicate.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

pub fn sample_fields(
    grid: &GridSpec,
    eps_levels: &[f64],
    spec: &CovarianceSpec,
    seed: u64,
    count: usize,
) -> Result<Vec<FieldSample>> {
    let s = FieldSampler::new(grid, eps_levels, spec)?;
    Ok(s.map_replicates(seed, count, Execution::default(), |x| x))
}

/// Top principal directions of a covariance matrix as factor loadings
/// `L[i][k] = sqrt(λ_k) v_k[i]`.
#[derive(Clone, Debug)]
pub struct Loadings {
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub discarded_fraction: f64,
}

impl Loadings {
    pub fn n_factors(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.matrix.row(i).iter().cloned().collect()
    }

    /// Field values `L ξ`.
    pub fn realize(&self, xi: &[f64]) -> Vec<f64> {
        (0..self.matrix.nrows())
            .map(|i| (0..xi.len()).map(|k| self.matrix[(i, k)] * xi[k]).sum())
            .collect()
    }
}

/// Smallest `n ≤ max_factors` whose discarded variance fraction is at most
/// `max_discarded` (or `max_factors` if none is).
pub fn principal_loadings(c: &DMatrix<f64>, max_factors: usize, max_discarded: f64) -> Loadings {
    let eig = SymmetricEigen::new(c.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut kept = 0.0;
    let mut n = 0;
    while n < max_factors.min(order.len()) {
        kept += eig.eigenvalues[order[n]].max(0.0);
        n += 1;
        if 1.0 - kept / total <= max_discarded {
            break;
        }
    }
    let dim = c.nrows();
    let mut m = DMatrix::zeros(dim, n);
    let mut eigenvalues = Vec::with_capacity(n);
    for (k, &idx) in order.iter().take(n).enumerate() {
        let lam = eig.eigenvalues[idx].max(0.0);
        eigenvalues.push(lam);
        let v = eig.eigenvectors.column(idx);
        // Sign convention: largest-magnitude entry positive.
        let sign = if v.iter().fold(0.0f64, |a, &x| if x.abs() > a.abs() { x } else { a }) < 0.0 {
            -1.0
        } else {
            1.0
        };
        for i in 0..dim {
            m[(i, k)] = sign * lam.sqrt() * v[i];
        }
    }
    Loadings { matrix: m, eigenvalues, discarded_fraction: (1.0 - kept / total).max(0.0) }
}

pub fn write_fields_csv<W: Write>(w: W, samples: &[FieldSample]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let Some(first) = samples.first() else {
        return Ok(());
    };
    let mut header: Vec<String> =
        ["replicate", "seed", "jitter_used", "level", "eps"].iter().map(|s| s.to_string()).collect();
    header.extend(first.grid.midpoints().iter().map(|t| format!("t={t}")));
    wr.write_record(&header)?;
    for s in samples {
        for (l, row) in s.values.iter().enumerate() {
            let mut rec = vec![
                s.replicate.to_string(),
                s.seed.to_string(),
                s.jitter_used.to_string(),
                l.to_string(),
                s.eps_levels[l].to_string(),
            ];
            rec.extend(row.iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn read_fields_csv<R: Read>(r: R, t_len: f64) -> Result<Vec<FieldSample>> {
    let mut rd = csv::Reader::from_reader(r);
    let n_cells = rd.headers()?.len().saturating_sub(5);
    let grid = GridSpec::with_cells(t_len, n_cells)?;
    let mut out: Vec<FieldSample> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let p = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| Error::Parse("short CSV record".into()))?
                .parse::<f64>()
                .map_err(|e| Error::Parse(e.to_string()))
        };
        let replicate = p(0)? as u64;
        let seed: u64 = rec[1].parse().map_err(|e: std::num::ParseIntError| Error::Parse(e.to_string()))?;
        let row = (0..n_cells).map(|i| p(5 + i)).collect::<Result<Vec<_>>>()?;
        let eps = p(4)?;
        match out.last_mut() {
            Some(s) if s.replicate == replicate && s.seed == seed => {
                s.eps_levels.push(eps);
                s.values.push(row);
            }
            _ => out.push(FieldSample {
                grid,
                eps_levels: vec![eps],
                values: vec![row],
                seed,
                replicate,
                jitter_used: p(2)?,
            }),
        }
    }
    Ok(out)
}
