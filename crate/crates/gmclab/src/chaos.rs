//! Truncated Wick/Hermite chaos over `n` independent standard Gaussians.
//!
//! Coefficients are stored densely in graded order: all multi-indices of
//! degree 0, then degree 1, and so on, lexicographically within a degree.
//! The ordering does not depend on the cap, so an expansion with a smaller
//! cap is a prefix of the same expansion at a larger cap.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DEGREE_CAP: usize = 12;
pub const MAX_BASIS: usize = 1 << 21;

pub fn binom(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r as usize
}

/// Number of multi-indices of `n` variables with degree ≤ `cap`.
pub fn basis_size(n: usize, cap: usize) -> usize {
    binom(cap + n, n)
}

/// Probabilists' Hermite polynomial `h_k(x)`.
pub fn hermite(k: usize, x: f64) -> f64 {
    let (mut a, mut b) = (1.0, x);
    if k == 0 {
        return a;
    }
    for j in 1..k {
        let c = x * b - j as f64 * a;
        a = b;
        b = c;
    }
    b
}

/// `h_0(x), …, h_kmax(x)`.
pub fn hermite_all(kmax: usize, x: f64) -> Vec<f64> {
    let mut h = Vec::with_capacity(kmax + 1);
    h.push(1.0);
    if kmax >= 1 {
        h.push(x);
    }
    for j in 1..kmax {
        let next = x * h[j] - j as f64 * h[j - 1];
        h.push(next);
    }
    h
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zero(n: usize) -> Self {
        MultiIndex(vec![0; n])
    }

    /// `k e_i`.
    pub fn unit(n: usize, i: usize, k: u32) -> Self {
        let mut v = vec![0; n];
        v[i] = k;
        MultiIndex(v)
    }

    pub fn degree(&self) -> usize {
        self.0.iter().map(|&a| a as usize).sum()
    }

    /// `α! = ∏ α_i!`.
    pub fn factorial(&self) -> f64 {
        self.0.iter().map(|&a| factorial(a as usize)).product()
    }

    pub fn rank(&self) -> usize {
        rank_of(&self.0)
    }
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

const TABLE_N: usize = 96;

fn binom_table() -> &'static [usize] {
    static T: OnceLock<Vec<usize>> = OnceLock::new();
    T.get_or_init(|| {
        let mut t = vec![0usize; TABLE_N * TABLE_N];
        for a in 0..TABLE_N {
            t[a * TABLE_N] = 1;
            for b in 1..=a {
                t[a * TABLE_N + b] = t[(a - 1) * TABLE_N + b - 1].saturating_add(t[(a - 1) * TABLE_N + b]);
            }
        }
        t
    })
}

fn rank_of(alpha: &[u32]) -> usize {
    let t = binom_table();
    let binom = |a: usize, b: usize| if a < TABLE_N && b < TABLE_N { t[a * TABLE_N + b] } else { binom(a, b) };
    let n = alpha.len();
    let d: usize = alpha.iter().map(|&a| a as usize).sum();
    if n == 0 {
        return 0;
    }
    let mut rank = if d == 0 { 0 } else { binom(d + n - 1, n) };
    let mut rem = d;
    for (k, &a) in alpha.iter().enumerate().take(n - 1) {
        let parts = n - k - 1;
        // Compositions of `rem` into the remaining parts whose k-th entry is < a.
        rank += binom(rem + parts, parts) - binom(rem - a as usize + parts, parts);
        rem -= a as usize;
    }
    rank
}

/// Multi-indices of degree ≤ cap, flattened `n` at a time in graded order.
#[derive(Debug)]
pub struct Basis {
    pub n_vars: usize,
    pub cap: usize,
    flat: Vec<u32>,
    factorials: Vec<f64>,
}

impl Basis {
    fn build(n: usize, cap: usize) -> Basis {
        let size = basis_size(n, cap);
        let mut flat = Vec::with_capacity(size * n);
        let mut cur = vec![0u32; n];
        for d in 0..=cap {
            push_compositions(&mut flat, &mut cur, 0, d);
        }
        let factorials = flat.chunks(n.max(1)).map(|a| a.iter().map(|&k| factorial(k as usize)).product()).collect();
        let factorials = if n == 0 { vec![1.0] } else { factorials };
        Basis { n_vars: n, cap, flat, factorials }
    }

    pub fn len(&self) -> usize {
        self.factorials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factorials.is_empty()
    }

    pub fn alpha(&self, i: usize) -> &[u32] {
        &self.flat[i * self.n_vars..(i + 1) * self.n_vars]
    }

    pub fn factorial(&self, i: usize) -> f64 {
        self.factorials[i]
    }
}

fn push_compositions(out: &mut Vec<u32>, cur: &mut [u32], k: usize, rem: usize) {
    let n = cur.len();
    if n == 0 {
        return;
    }
    if k == n - 1 {
        cur[k] = rem as u32;
        out.extend_from_slice(cur);
        return;
    }
    for v in 0..=rem {
        cur[k] = v as u32;
        push_compositions(out, cur, k + 1, rem - v);
    }
    cur[k] = 0;
}

/// Shared graded basis for `(n, cap)`.
pub fn basis(n: usize, cap: usize) -> Result<Arc<Basis>> {
    let size = basis_size(n, cap);
    if size > MAX_BASIS {
        return Err(Error::Size { dim: size, cap: MAX_BASIS });
    }
    type Cache = Mutex<HashMap<(usize, usize), Arc<Basis>>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut map = cache.lock().unwrap();
    Ok(map.entry((n, cap)).or_insert_with(|| Arc::new(Basis::build(n, cap))).clone())
}

/// `h = λ Σ c_i ξ_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPoint {
    pub coeffs: Vec<f64>,
    pub lambda: f64,
}

impl GaussianPoint {
    pub fn new(coeffs: Vec<f64>, lambda: f64) -> Self {
        GaussianPoint { coeffs, lambda }
    }

    /// `E[h²]` including the scale.
    pub fn variance(&self) -> f64 {
        self.lambda * self.lambda * self.coeffs.iter().map(|c| c * c).sum::<f64>()
    }

    pub fn scaled(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| self.lambda * c).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChaosExpansion {
    n_vars: usize,
    degree_cap: usize,
    coeffs: Vec<f64>,
}

/// A result together with the weighted ℓ² mass `Σ c_γ² γ!` of dropped terms.
#[derive(Clone, Debug, PartialEq)]
pub struct Truncated {
    pub value: ChaosExpansion,
    pub truncation_loss: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ChaosJson {
    n_vars: usize,
    degree_cap: usize,
    entries: Vec<(Vec<u32>, f64)>,
}

impl ChaosExpansion {
    pub fn zero(n_vars: usize, degree_cap: usize) -> Result<Self> {
        let size = basis(n_vars, degree_cap)?.len();
        Ok(ChaosExpansion { n_vars, degree_cap, coeffs: vec![0.0; size] })
    }

    pub fn constant(n_vars: usize, degree_cap: usize, c: f64) -> Result<Self> {
        let mut z = Self::zero(n_vars, degree_cap)?;
        z.coeffs[0] = c;
        Ok(z)
    }

    /// `c_0 + Σ c_i ξ_i`.
    pub fn linear(degree_cap: usize, c0: f64, c: &[f64]) -> Result<Self> {
        let mut z = Self::constant(c.len(), degree_cap, c0)?;
        if degree_cap >= 1 {
            for (i, &ci) in c.iter().enumerate() {
                z.coeffs[MultiIndex::unit(c.len(), i, 1).rank()] = ci;
            }
        }
        Ok(z)
    }

    pub fn from_coeffs(n_vars: usize, degree_cap: usize, coeffs: Vec<f64>) -> Result<Self> {
        let size = basis(n_vars, degree_cap)?.len();
        if coeffs.len() != size {
            return Err(Error::Argument(format!("expected {size} coefficients, got {}", coeffs.len())));
        }
        Ok(ChaosExpansion { n_vars, degree_cap, coeffs })
    }

    pub fn from_entries(n_vars: usize, degree_cap: usize, entries: &[(MultiIndex, f64)]) -> Result<Self> {
        let mut z = Self::zero(n_vars, degree_cap)?;
        for (a, c) in entries {
            z.set(a, *c)?;
        }
        Ok(z)
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn degree_cap(&self) -> usize {
        self.degree_cap
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn basis(&self) -> Arc<Basis> {
        basis(self.n_vars, self.degree_cap).expect("basis size checked at construction")
    }

    fn check_index(&self, a: &MultiIndex) -> Result<usize> {
        if a.0.len() != self.n_vars {
            return Err(Error::Argument(format!("multi-index has {} entries, expected {}", a.0.len(), self.n_vars)));
        }
        if a.degree() > self.degree_cap {
            return Err(Error::Argument(format!("degree {} exceeds cap {}", a.degree(), self.degree_cap)));
        }
        Ok(a.rank())
    }

    pub fn coeff(&self, a: &MultiIndex) -> f64 {
        if a.0.len() != self.n_vars || a.degree() > self.degree_cap {
            return 0.0;
        }
        self.coeffs[a.rank()]
    }

    pub fn set(&mut self, a: &MultiIndex, c: f64) -> Result<()> {
        let r = self.check_index(a)?;
        self.coeffs[r] = c;
        Ok(())
    }

    /// Generalized expectation (the constant coefficient).
    pub fn mean(&self) -> f64 {
        self.coeffs[0]
    }

    /// Largest degree with a nonzero coefficient.
    pub fn degree(&self) -> usize {
        match self.coeffs.iter().rposition(|&c| c != 0.0) {
            None => 0,
            Some(i) => self.basis().alpha(i).iter().map(|&a| a as usize).sum(),
        }
    }

    pub fn l2_norm_sq(&self) -> f64 {
        let b = self.basis();
        self.coeffs.iter().enumerate().map(|(i, c)| c * c * b.factorial(i)).sum()
    }

    /// Nonzero coefficients in basis order.
    pub fn entries(&self) -> Vec<(MultiIndex, f64)> {
        let b = self.basis();
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, &c)| (MultiIndex(b.alpha(i).to_vec()), c))
            .collect()
    }

    /// Same expansion viewed with a different cap; dropped mass is returned.
    pub fn with_cap(&self, cap: usize) -> Result<Truncated> {
        let size = basis(self.n_vars, cap)?.len();
        let mut coeffs = self.coeffs.clone();
        let mut loss = 0.0;
        if size < coeffs.len() {
            let b = self.basis();
            loss = (size..coeffs.len()).map(|i| coeffs[i] * coeffs[i] * b.factorial(i)).sum();
            coeffs.truncate(size);
        } else {
            coeffs.resize(size, 0.0);
        }
        Ok(Truncated { value: ChaosExpansion { n_vars: self.n_vars, degree_cap: cap, coeffs }, truncation_loss: loss })
    }

    fn check_same(&self, other: &ChaosExpansion) -> Result<()> {
        if self.n_vars != other.n_vars {
            return Err(Error::Argument(format!("n_vars mismatch: {} vs {}", self.n_vars, other.n_vars)));
        }
        Ok(())
    }

    /// `a·self + b·other` on the larger of the two caps.
    pub fn combine(&self, a: f64, other: &ChaosExpansion, b: f64) -> Result<ChaosExpansion> {
        self.check_same(other)?;
        let cap = self.degree_cap.max(other.degree_cap);
        let mut out = self.with_cap(cap)?.value;
        out.coeffs.iter_mut().for_each(|c| *c *= a);
        for (o, c) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *o += b * c;
        }
        Ok(out)
    }

    pub fn add(&self, other: &ChaosExpansion) -> Result<ChaosExpansion> {
        self.combine(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &ChaosExpansion) -> Result<ChaosExpansion> {
        self.combine(1.0, other, -1.0)
    }

    pub fn scale(&self, s: f64) -> ChaosExpansion {
        ChaosExpansion { coeffs: self.coeffs.iter().map(|c| c * s).collect(), ..self.clone() }
    }

    /// In-place `self += s·other` (other must fit within self's cap).
    pub fn axpy(&mut self, s: f64, other: &ChaosExpansion) -> Result<()> {
        self.check_same(other)?;
        if other.degree_cap > self.degree_cap {
            return Err(Error::Argument("axpy operand has a larger cap".into()));
        }
        for (o, c) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *o += s * c;
        }
        Ok(())
    }

    /// Realization `Σ a_α ∏ h_{α_i}(ξ_i)`.
    pub fn evaluate(&self, xi: &[f64]) -> Result<f64> {
        if xi.len() != self.n_vars {
            return Err(Error::Argument(format!("expected {} Gaussians, got {}", self.n_vars, xi.len())));
        }
        let h: Vec<Vec<f64>> = xi.iter().map(|&x| hermite_all(self.degree_cap, x)).collect();
        let b = self.basis();
        Ok(self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, c)| c * b.alpha(i).iter().enumerate().map(|(k, &a)| h[k][a as usize]).product::<f64>())
            .sum())
    }

    pub fn to_json(&self) -> Result<String> {
        let j = ChaosJson {
            n_vars: self.n_vars,
            degree_cap: self.degree_cap,
            entries: self.entries().into_iter().map(|(a, c)| (a.0, c)).collect(),
        };
        Ok(serde_json::to_string(&j)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: ChaosJson = serde_json::from_str(text)?;
        let entries: Vec<(MultiIndex, f64)> = j.entries.into_iter().map(|(a, c)| (MultiIndex(a), c)).collect();
        Self::from_entries(j.n_vars, j.degree_cap, &entries)
    }
}

impl Serialize for ChaosExpansion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ChaosJson {
            n_vars: self.n_vars,
            degree_cap: self.degree_cap,
            entries: self.entries().into_iter().map(|(a, c)| (a.0, c)).collect(),
        }
        .serialize(s)
    }
}

/// `F ◇ G` truncated at `min(cap, deg F + deg G)`.
///
/// Operands are put in a canonical order first, so `F ◇ G` and `G ◇ F`
/// agree bit for bit.
pub fn wick_mul(f: &ChaosExpansion, g: &ChaosExpansion, cap: usize) -> Result<Truncated> {
    f.check_same(g)?;
    let (f, g) = if canonical_le(f, g) { (f, g) } else { (g, f) };
    let n = f.n_vars;
    let full = f.degree() + g.degree();
    let out_cap = cap.min(full);
    let bo = basis(n, full)?;
    let bf = f.basis();
    let bg = g.basis();
    let nzf: Vec<usize> = (0..f.coeffs.len()).filter(|&i| f.coeffs[i] != 0.0).collect();
    let nzg: Vec<usize> = (0..g.coeffs.len()).filter(|&i| g.coeffs[i] != 0.0).collect();
    let mut acc = vec![0.0; bo.len()];
    let mut gamma = vec![0u32; n];
    for &i in &nzf {
        let a = bf.alpha(i);
        let ci = f.coeffs[i];
        for &j in &nzg {
            let b = bg.alpha(j);
            for k in 0..n {
                gamma[k] = a[k] + b[k];
            }
            acc[rank_of(&gamma)] += ci * g.coeffs[j];
        }
    }
    let keep = basis_size(n, out_cap);
    let loss = (keep..acc.len()).map(|r| acc[r] * acc[r] * bo.factorial(r)).sum();
    acc.truncate(keep);
    Ok(Truncated { value: ChaosExpansion { n_vars: n, degree_cap: out_cap, coeffs: acc }, truncation_loss: loss })
}

fn canonical_le(f: &ChaosExpansion, g: &ChaosExpansion) -> bool {
    if f.degree_cap != g.degree_cap {
        return f.degree_cap < g.degree_cap;
    }
    for (a, b) in f.coeffs.iter().zip(&g.coeffs) {
        match a.total_cmp(b) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            _ => {}
        }
    }
    true
}

/// Truncated `e^{◇λh} = Σ (λh)^{◇k}/k!`, whose coefficients are
/// `∏ (λc_i)^{α_i}/α_i!`; the loss is `e^{E[(λh)²]}` minus the kept mass.
pub fn wick_exp(pt: &GaussianPoint, degree_cap: usize) -> Result<Truncated> {
    let n = pt.coeffs.len();
    let b = basis(n, degree_cap)?;
    let lc = pt.scaled();
    let pw: Vec<Vec<f64>> = lc
        .iter()
        .map(|&c| (0..=degree_cap).scan(1.0, |s, k| {
            let v = *s;
            *s *= c / (k + 1) as f64;
            Some(v)
        }).collect())
        .collect();
    let coeffs: Vec<f64> = (0..b.len())
        .map(|i| b.alpha(i).iter().enumerate().map(|(k, &a)| pw[k][a as usize]).product())
        .collect();
    let kept: f64 = coeffs.iter().enumerate().map(|(i, c)| c * c * b.factorial(i)).sum();
    let loss = (pt.variance().exp() - kept).max(0.0);
    Ok(Truncated { value: ChaosExpansion { n_vars: n, degree_cap, coeffs }, truncation_loss: loss })
}

pub const DIAGNOSTIC_Q: [f64; 4] = [0.0, 2.0, 4.0, 8.0];

/// Growth of degree blocks of a formal inverse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseDiagnostic {
    /// `(q, ratio)`: per-degree geometric growth of `Σ_{|α|=k} b_α² (2N)^{-qα}`.
    pub block_growth: Vec<(f64, f64)>,
    /// Same growth with the `α!` weights of the L² norm.
    pub l2_growth: f64,
    /// Coefficient ℓ² blocks (`q = 0`) grow geometrically.
    pub l2_divergent: bool,
    /// Blocks grow for every tested `q`.
    pub norm_divergent: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WickInverse {
    pub value: ChaosExpansion,
    pub diagnostic: InverseDiagnostic,
}

/// Formal inverse solved degree by degree from `F ◇ G = 1`.
pub fn wick_inverse(f: &ChaosExpansion, degree_cap: usize) -> Result<WickInverse> {
    let a0 = f.mean();
    if a0 == 0.0 || !a0.is_finite() {
        return Err(Error::WickInverse);
    }
    let n = f.n_vars;
    let b = basis(n, degree_cap)?;
    let fb = f.basis();
    let nz: Vec<(usize, &[u32])> = (1..f.coeffs.len().min(b.len()))
        .filter(|&i| f.coeffs[i] != 0.0)
        .map(|i| (i, fb.alpha(i)))
        .collect();
    let mut g = vec![0.0; b.len()];
    g[0] = 1.0 / a0;
    let mut rest = vec![0u32; n];
    for gi in 1..b.len() {
        let gamma = b.alpha(gi);
        let mut acc = 0.0;
        for &(fi, alpha) in &nz {
            if alpha.iter().zip(gamma).all(|(a, c)| a <= c) {
                for k in 0..n {
                    rest[k] = gamma[k] - alpha[k];
                }
                acc += f.coeffs[fi] * g[rank_of(&rest)];
            }
        }
        g[gi] = -acc / a0;
    }
    let value = ChaosExpansion { n_vars: n, degree_cap, coeffs: g };
    let diagnostic = inverse_diagnostic(&value);
    Ok(WickInverse { value, diagnostic })
}

fn block_norms(f: &ChaosExpansion, weight: impl Fn(usize, &[u32]) -> f64) -> Vec<f64> {
    let b = f.basis();
    let mut out = vec![0.0; f.degree_cap + 1];
    for i in 0..b.len() {
        let a = b.alpha(i);
        let d: usize = a.iter().map(|&x| x as usize).sum();
        out[d] += f.coeffs[i] * f.coeffs[i] * weight(i, a);
    }
    out
}

/// Geometric growth rate per degree over the upper half of the blocks.
fn growth(blocks: &[f64]) -> f64 {
    let top = blocks.len() - 1;
    let lo = (top / 2).max(1);
    if top <= lo || blocks[lo] <= 0.0 {
        return 0.0;
    }
    (blocks[top] / blocks[lo]).powf(1.0 / (top - lo) as f64)
}

pub fn inverse_diagnostic(g: &ChaosExpansion) -> InverseDiagnostic {
    let block_growth: Vec<(f64, f64)> = DIAGNOSTIC_Q
        .iter()
        .map(|&q| {
            let bl = block_norms(g, |_, a| {
                a.iter().enumerate().map(|(j, &k)| (2.0 * (j + 1) as f64).powf(-q * k as f64)).product()
            });
            (q, growth(&bl))
        })
        .collect();
    let b = g.basis();
    let l2_growth = growth(&block_norms(g, |i, _| b.factorial(i)));
    InverseDiagnostic {
        l2_divergent: block_growth[0].1 > 1.0,
        norm_divergent: block_growth.iter().all(|&(_, r)| r > 1.0),
        block_growth,
        l2_growth,
    }
}

/// `(SF)(λh) = Σ a_α ∏ (λc_i)^{α_i}`.
pub fn s_transform(f: &ChaosExpansion, pt: &GaussianPoint) -> Result<f64> {
    if pt.coeffs.len() != f.n_vars {
        return Err(Error::Argument(format!("point has {} coefficients, expected {}", pt.coeffs.len(), f.n_vars)));
    }
    let lc = pt.scaled();
    let pw: Vec<Vec<f64>> = lc.iter().map(|&c| (0..=f.degree_cap as i32).map(|k| c.powi(k)).collect()).collect();
    let b = f.basis();
    Ok(f.coeffs
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(i, c)| c * b.alpha(i).iter().enumerate().map(|(k, &a)| pw[k][a as usize]).product::<f64>())
        .sum())
}

/// `(Σ a_α² (α!)^{1+ρ} ∏(2j)^{r α_j})^{1/2}`.
pub fn hida_norm(f: &ChaosExpansion, rho: f64, r: f64) -> f64 {
    let b = f.basis();
    f.coeffs
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(i, c)| {
            let w: f64 = b.alpha(i).iter().enumerate().map(|(j, &k)| (2.0 * (j + 1) as f64).powf(r * k as f64)).product();
            c * c * b.factorial(i).powf(1.0 + rho) * w
        })
        .sum::<f64>()
        .sqrt()
}
