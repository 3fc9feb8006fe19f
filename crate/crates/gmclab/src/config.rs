//! TOML experiment configuration with exhaustive validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covkernel::{CovarianceSpec, MollifierFamily};
use crate::error::{Error, Result};
use crate::fieldsim::{GridSpec, DEFAULT_DIM_CAP};
use crate::pressure::{BcKind, BoundaryData, ForcingFamily, ForcingSpec};
use crate::projection::ProjectionKernel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    Sample,
    GmcStats,
    Solve,
    Wick,
    Potential,
    Project,
    Converge,
    Validate,
}

impl StudyKind {
    pub const ALL: [StudyKind; 8] = [
        StudyKind::Sample,
        StudyKind::GmcStats,
        StudyKind::Solve,
        StudyKind::Wick,
        StudyKind::Potential,
        StudyKind::Project,
        StudyKind::Converge,
        StudyKind::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StudyKind::Sample => "sample",
            StudyKind::GmcStats => "gmc-stats",
            StudyKind::Solve => "solve",
            StudyKind::Wick => "wick",
            StudyKind::Potential => "potential",
            StudyKind::Project => "project",
            StudyKind::Converge => "converge",
            StudyKind::Validate => "validate",
        }
    }

    fn uses_eps(self) -> bool {
        matches!(self, StudyKind::Sample | StudyKind::GmcStats | StudyKind::Solve | StudyKind::Wick | StudyKind::Converge)
    }

    fn uses_pde(self) -> bool {
        matches!(self, StudyKind::Solve | StudyKind::Wick | StudyKind::Project | StudyKind::Converge)
    }
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StudyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StudyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown study kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "T")]
    pub t_len: f64,
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WickConfig {
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(default = "default_factors")]
    pub max_factors: usize,
    #[serde(default = "default_discarded")]
    pub max_discarded: f64,
}

fn default_cap() -> usize {
    12
}

fn default_factors() -> usize {
    6
}

fn default_discarded() -> f64 {
    0.05
}

impl Default for WickConfig {
    fn default() -> Self {
        WickConfig { cap: default_cap(), max_factors: default_factors(), max_discarded: default_discarded() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    #[serde(flatten)]
    pub kernel: ProjectionKernel,
    #[serde(default = "default_tests")]
    pub test_functions: usize,
}

fn default_tests() -> usize {
    8
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig { kernel: ProjectionKernel::Exact, test_functions: default_tests() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: StudyKind,
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_prime: Option<f64>,
    #[serde(default)]
    pub eps: Vec<f64>,
    /// Covariance spec file, relative to the config file. Without one the
    /// kernel is `log(1/|x-y|)` with the bump mollifier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<PathBuf>,
    /// Mollifier for the built-in kernel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mollifier: Option<MollifierFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forcing: Option<ForcingFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bc: Option<BoundaryData>,
    #[serde(default)]
    pub moments: Vec<f64>,
    #[serde(default)]
    pub wick: WickConfig,
    #[serde(default)]
    pub projection: ProjectionConfig,
}

fn default_replicates() -> usize {
    1000
}

/// Largest chaos degree accepted from a config.
pub const MAX_CAP: usize = 24;

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::with_cells(self.grid.t_len, self.grid.cells)
    }

    pub fn forcing_spec(&self) -> Option<ForcingSpec> {
        self.forcing.clone().map(|family| ForcingSpec { t_len: self.grid.t_len, family })
    }

    /// Covariance spec, read relative to `base_dir` if a file is configured.
    pub fn covariance_spec(&self, base_dir: &Path) -> Result<CovarianceSpec> {
        match &self.covariance {
            Some(p) => {
                let path = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Parse(format!("covariance spec {}: {e}", path.display())))?;
                CovarianceSpec::from_text(&text)
            }
            None => Ok(CovarianceSpec::new(self.grid.t_len, self.beta)
                .with_mollifier(self.mollifier.clone().unwrap_or_default())),
        }
    }

    /// Every violated invariant, empty when the config is valid.
    pub fn violations(&self, base_dir: &Path) -> Vec<String> {
        let mut v = Vec::new();
        let kind = self.kind;
        if !(self.beta > 0.0 && self.beta < 1.0) {
            v.push(format!("beta must lie in (0,1), got {}", self.beta));
        }
        let gv = GridSpec { t_len: self.grid.t_len, n_points: self.grid.cells + 1 }.violations();
        let grid_ok = gv.is_empty();
        v.extend(gv.into_iter().map(|s| format!("grid: {s}")));
        if kind == StudyKind::Project {
            match self.beta_prime {
                None => v.push("project studies need beta_prime".into()),
                Some(bp) if !(bp >= self.beta && bp < 1.0) => {
                    v.push(format!("beta_prime must lie in [beta, 1) = [{}, 1), got {bp}", self.beta))
                }
                _ => {}
            }
        }
        if kind != StudyKind::Validate && self.replicates == 0 {
            v.push("replicates must be at least 1".into());
        }
        if kind.uses_eps() {
            if self.eps.is_empty() {
                v.push(format!("{kind} studies need at least one eps level"));
            }
            if kind == StudyKind::Converge && self.eps.len() < 2 {
                v.push("convergence studies need at least two eps levels".into());
            }
            if self.eps.windows(2).any(|w| !(w[1] < w[0])) {
                v.push("eps levels must be strictly decreasing".into());
            }
            let d = self.grid.t_len / self.grid.cells.max(1) as f64;
            for &e in &self.eps {
                if !(e > 0.0) {
                    v.push(format!("eps must be positive, got {e}"));
                } else if grid_ok && e < 2.0 * d {
                    v.push(format!("eps = {e} is below twice the grid spacing 2*{d} = {}", 2.0 * d));
                }
            }
            let dim = self.eps.len() * self.grid.cells;
            if dim > DEFAULT_DIM_CAP {
                v.push(format!("joint covariance dimension {dim} exceeds the cap {DEFAULT_DIM_CAP}"));
            }
        }
        if let ProjectionKernel::Mollified { eps } = self.projection.kernel {
            if kind == StudyKind::Project && !(eps > 0.0) {
                v.push(format!("projection eps must be positive, got {eps}"));
            }
        }
        if kind == StudyKind::Project && self.projection.test_functions == 0 {
            v.push("projection.test_functions must be at least 1".into());
        }
        if kind == StudyKind::GmcStats && self.moments.iter().any(|p| *p == 0.0 || !p.is_finite()) {
            v.push("moment orders must be finite and nonzero".into());
        }
        if kind == StudyKind::Wick {
            if self.wick.cap == 0 || self.wick.cap > MAX_CAP {
                v.push(format!("wick.cap must lie in 1..={MAX_CAP}, got {}", self.wick.cap));
            }
            if self.wick.max_factors == 0 {
                v.push("wick.max_factors must be at least 1".into());
            }
            if !(self.wick.max_discarded >= 0.0 && self.wick.max_discarded < 1.0) {
                v.push(format!("wick.max_discarded must lie in [0,1), got {}", self.wick.max_discarded));
            }
        }
        if kind.uses_pde() {
            match (self.forcing_spec(), &self.bc) {
                (Some(f), Some(bc)) => {
                    v.extend(f.violations().into_iter().map(|s| format!("forcing: {s}")));
                    if f.violations().is_empty() {
                        v.extend(bc.violations(&f).into_iter().map(|s| format!("bc: {s}")));
                    }
                    if kind == StudyKind::Converge && !matches!(bc.kind, BcKind::Dirichlet | BcKind::Periodic) {
                        v.push("convergence studies use Dirichlet or periodic boundary conditions".into());
                    }
                }
                (f, bc) => {
                    if f.is_none() {
                        v.push(format!("{kind} studies need a [forcing] table"));
                    }
                    if bc.is_none() {
                        v.push(format!("{kind} studies need a [bc] table"));
                    }
                }
            }
        }
        if let Some(MollifierFamily::TruncatedGaussian { width }) = self.mollifier {
            if !(width > 0.0 && width.is_finite()) {
                v.push(format!("mollifier width must be positive, got {width}"));
            }
        }
        if self.covariance.is_some() && self.mollifier.is_some() {
            v.push("give either a covariance file or a mollifier, not both".into());
        }
        match self.covariance_spec(base_dir) {
            Ok(spec) => {
                v.extend(spec.violations().into_iter().map(|s| format!("covariance: {s}")));
                if spec.t_len != self.grid.t_len {
                    v.push(format!("covariance T = {} differs from grid T = {}", spec.t_len, self.grid.t_len));
                }
                if spec.beta != self.beta {
                    v.push(format!("covariance beta = {} differs from config beta = {}", spec.beta, self.beta));
                }
            }
            Err(e) => v.push(e.to_string()),
        }
        v
    }

    pub fn validate(&self, base_dir: &Path) -> Result<()> {
        let v = self.violations(base_dir);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A parsed config together with the hash of its file bytes.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
    pub base_dir: PathBuf,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let bytes = std::fs::read(path).map_err(|e| Error::Parse(format!("config {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse(format!("config is not UTF-8: {e}")))?;
    let config = ExperimentConfig::from_toml(text)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, hash: sha256_hex(&bytes), base_dir })
}

impl LoadedConfig {
    /// Config built in code; the hash covers its TOML serialization.
    pub fn from_config(config: ExperimentConfig, base_dir: &Path) -> Result<Self> {
        let hash = sha256_hex(config.to_toml()?.as_bytes());
        Ok(LoadedConfig { config, hash, base_dir: base_dir.to_path_buf() })
    }
}
