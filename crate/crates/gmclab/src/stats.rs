//! Monte Carlo statistics: order-independent sums, mergeable moments,
//! bootstrap intervals, Kolmogorov-Smirnov and Ky Fan distances.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exactly rounded floating-point sum (Shewchuk partials). The result does not
/// depend on the order in which values are added or merged.
#[derive(Clone, Debug, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = ExactSum::new();
    values.into_iter().for_each(|v| s.add(v));
    s.value()
}

/// Sufficient statistics (count, Σx, Σx², min, max) with exact merge.
#[derive(Clone, Debug, Default)]
pub struct McStats {
    n: u64,
    sum: ExactSum,
    sum_sq: ExactSum,
    min: f64,
    max: f64,
}

impl McStats {
    pub fn new() -> Self {
        McStats { min: f64::INFINITY, max: f64::NEG_INFINITY, ..Default::default() }
    }

    pub fn from_values(values: &[f64]) -> Self {
        let mut s = Self::new();
        values.iter().for_each(|&v| s.push(v));
        s
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum.add(x);
        self.sum_sq.add(x * x);
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    pub fn merge(&mut self, other: &McStats) {
        self.n += other.n;
        self.sum.merge(&other.sum);
        self.sum_sq.merge(&other.sum_sq);
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> Result<f64> {
        if self.n == 0 {
            return Err(Error::Argument("statistics of an empty stream".into()));
        }
        Ok(self.sum.value() / self.n as f64)
    }

    /// Unbiased sample variance (0 for a constant stream).
    pub fn variance(&self) -> Result<f64> {
        let mean = self.mean()?;
        if self.n < 2 || self.min == self.max {
            return Ok(0.0);
        }
        let mut num = self.sum_sq.clone();
        num.add(-mean * self.sum.value());
        Ok((num.value() / (self.n - 1) as f64).max(0.0))
    }

    pub fn std_error(&self) -> Result<f64> {
        Ok((self.variance()? / self.n as f64).sqrt())
    }

    pub fn summary(&self) -> Result<Summary> {
        Ok(Summary {
            n: self.n,
            mean: self.mean()?,
            variance: self.variance()?,
            std_error: self.std_error()?,
            min: self.min,
            max: self.max,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: u64,
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub min: f64,
    pub max: f64,
}

/// Percentile bootstrap interval for the mean of `values`.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Argument("bootstrap of an empty sample".into()));
    }
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let mut s = ExactSum::new();
            for _ in 0..n {
                s.add(values[rng.random_range(0..n)]);
            }
            s.value() / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let q = |p: f64| means[((p * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    let a = 0.5 * (1.0 - level);
    Ok((q(a), q(1.0 - a)))
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("KS statistic of an empty sample".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / x.len() as f64 - j as f64 / y.len() as f64).abs());
    }
    Ok(d)
}

/// Asymptotic critical value of the two-sample KS statistic at level `alpha`.
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Empirical Ky Fan metric `inf{δ : P(d > δ) ≤ δ}`.
pub fn ky_fan(distances: &[f64]) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::Argument("Ky Fan metric of an empty sample".into()));
    }
    let mut d = distances.to_vec();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    // With k exceedances allowed, δ must reach both k/n and the (n-k)-th order statistic.
    let best = (0..n)
        .map(|k| (k as f64 / n as f64).max(d[n - 1 - k]))
        .fold(1.0f64, f64::min);
    Ok(best)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares line `y = a + b x`, returning `(a, b, r2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return Err(Error::Numerical("regression needs at least two paired points".into()));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= 0.0 || !sxx.is_finite() {
        return Err(Error::Numerical("degenerate regression abscissae".into()));
    }
    let b = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok((my - b * mx, b, r2))
}
