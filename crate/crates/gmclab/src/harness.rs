//! Study orchestration: config → artifacts + manifest, and Monte Carlo aggregation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{sha256_hex, ExperimentConfig, LoadedConfig, StudyKind};
use crate::covkernel::{var_mollified, CovarianceSpec};
use crate::error::{Error, Result};
use crate::exec::{with_workers, Execution};
use crate::fieldsim::{build_joint_covariance, principal_loadings, write_fields_csv, FieldSampler, GridSpec};
use crate::gmc::{holder_modulus_fit, moment_of_masses, simulate_total_masses, GmcMeasure};
use crate::potential::{build_g, nondegeneracy_of, riesz_indicator_exact};
use crate::pressure::{
    convergence_study, solve_pathwise_reduced, solve_replicates, solve_wick_chaos, verify_pathwise_ode,
    BoundaryData, ForcingSpec,
};
use crate::projection::{
    build_operator, manifest, projected_mc_check, recover_kernel, solve_projected_bvp, test_functions,
    write_phi_csv, write_u_tilde_csv, ProjectionKernel,
};
use crate::stats::{bootstrap_mean_ci, ks_statistic, McStats, Summary};
use crate::validate;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
/// Replicates compared against the chaos solution in a wick study.
pub const WICK_CHECK_REPLICATES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: StudyKind,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub wall_time_s: f64,
    pub warnings: Vec<String>,
    pub files: Vec<ArtifactEntry>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub exec: Execution,
}

/// Output directory that forgets everything it wrote unless committed.
struct Sink {
    dir: PathBuf,
    created: bool,
    files: Vec<ArtifactEntry>,
    committed: bool,
}

impl Sink {
    fn open(dir: &Path) -> Result<Self> {
        let created = !dir.exists();
        fs::create_dir_all(dir)?;
        Ok(Sink { dir: dir.to_path_buf(), created, files: Vec::new(), committed: false })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.retain(|f| f.name != name);
        self.files.push(ArtifactEntry { name: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    fn csv(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }
}

impl Drop for Sink {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(self.dir.join(&f.name));
        }
        let _ = fs::remove_file(self.dir.join(MANIFEST_FILE));
        if self.created {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    spec: CovarianceSpec,
    grid: GridSpec,
    seed: u64,
    exec: Execution,
    warnings: Vec<String>,
}

impl Ctx<'_> {
    fn forcing_bc(&self) -> (ForcingSpec, BoundaryData) {
        (self.cfg.forcing_spec().expect("validated"), self.cfg.bc.expect("validated"))
    }

    fn warn(&mut self, w: String) {
        if !self.warnings.contains(&w) {
            self.warnings.push(w);
        }
    }

    fn sampler(&mut self, eps: &[f64]) -> Result<FieldSampler> {
        let s = FieldSampler::new(&self.grid, eps, &self.spec)?;
        if s.jitter_used() > 0.0 {
            self.warn(format!("covariance jitter {:e} used for eps {:?}", s.jitter_used(), eps));
        }
        Ok(s)
    }
}

/// Command-line directory, else the config's (relative to the config file),
/// else `out-<kind>` in the working directory.
pub fn resolve_out_dir(loaded: &LoadedConfig, opts: &RunOptions) -> PathBuf {
    let cfg = &loaded.config;
    opts.out_dir
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(|p| if p.is_absolute() { p.clone() } else { loaded.base_dir.join(p) }))
        .unwrap_or_else(|| PathBuf::from(format!("out-{}", cfg.kind)))
}

/// Executes the configured study, writing artifacts and `manifest.json` into the
/// output directory. On failure every file written so far is removed.
pub fn run(loaded: &LoadedConfig, opts: &RunOptions) -> Result<RunManifest> {
    let start = Instant::now();
    let cfg = &loaded.config;
    cfg.validate(&loaded.base_dir)?;
    let out = resolve_out_dir(loaded, opts);
    let mut sink = Sink::open(&out)?;
    let mut ctx = Ctx {
        cfg,
        spec: cfg.covariance_spec(&loaded.base_dir)?,
        grid: cfg.grid_spec()?,
        seed: opts.seed.unwrap_or(cfg.seed),
        exec: opts.exec,
        warnings: Vec::new(),
    };
    with_workers(opts.workers, || dispatch(&mut ctx, &mut sink))?;
    let manifest = RunManifest {
        kind: cfg.kind,
        config_hash: loaded.hash.clone(),
        version: VERSION.to_string(),
        seed: ctx.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        warnings: ctx.warnings,
        files: sink.files.clone(),
    };
    let mut s = serde_json::to_string_pretty(&manifest)?;
    s.push('\n');
    fs::write(out.join(MANIFEST_FILE), s)?;
    sink.committed = true;
    Ok(manifest)
}

fn dispatch(ctx: &mut Ctx, sink: &mut Sink) -> Result<()> {
    match ctx.cfg.kind {
        StudyKind::Sample => study_sample(ctx, sink),
        StudyKind::GmcStats => study_gmc(ctx, sink),
        StudyKind::Solve => study_solve(ctx, sink),
        StudyKind::Wick => study_wick(ctx, sink),
        StudyKind::Potential => study_potential(ctx, sink),
        StudyKind::Project => study_project(ctx, sink),
        StudyKind::Converge => study_converge(ctx, sink),
        StudyKind::Validate => study_validate(ctx, sink),
    }
}

fn study_sample(ctx: &mut Ctx, sink: &mut Sink) -> Result<()> {
    let eps = ctx.cfg.eps.clone();
    let sampler = ctx.sampler(&eps)?;
    let samples = sampler.map_replicates(ctx.seed, ctx.cfg.replicates, ctx.exec, |s| s);
    sink.csv("fields.csv", |w| write_fields_csv(w, &samples))?;
    sink.json(
        "sample.json",
        &json!({
            "grid": ctx.grid,
            "eps": eps,
            "replicates": ctx.cfg.replicates,
            "seed": ctx.seed,
            "jitter_used": sampler.jitter_used(),
            "spec_hash": ctx.spec.hash(),
        }),
    )
}

fn study_gmc(ctx: &mut Ctx, sink: &mut Sink) -> Result<()> {
    let moments = if ctx.cfg.moments.is_empty() { vec![1.0, 2.0, -1.0] } else { ctx.cfg.moments.clone() };
    let beta = ctx.cfg.beta;
    let mut records = Vec::new();
    let mut holder = Vec::new();
    let mut totals = Vec::new();
    for &eps in &ctx.cfg.eps.clone() {
        // Moments only involve one level at a time, so each level gets its own sampler.
        let sampler = ctx.sampler(&[eps])?;
        let masses = simulate_total_masses(&sampler, &ctx.spec, &[(0, beta)], ctx.cfg.replicates, ctx.seed, ctx.exec)?
            .remove(0);
        for &p in &moments {
            let r = moment_of_masses(&masses, p, beta, eps, ctx.seed)?;
            if let Some(w) = &r.warning {
                ctx.warn(w.clone());
            }
            records.push(r);
        }
        totals.push(json!({ "eps": eps, "total_mass": mc_aggregate(masses.iter().cloned())?.summary()? }));
        if ctx.cfg.replicates >= 100 {
            let s2 = var_mollified(eps, &ctx.spec)?;
            let grid = ctx.grid;
            let ms = sampler.map_replicates(ctx.seed, ctx.cfg.replicates.min(1000), ctx.exec, |s| {
                GmcMeasure::from_field_values(&grid, beta, eps, &s.values[0], s2)
            });
            match holder_modulus_fit(&ms) {
                Ok(fit) => holder.push(json!({ "eps": eps, "fit": fit })),
                Err(e) => ctx.warn(format!("Hölder fit at eps {eps} skipped: {e}")),
            }
        }
    }
    sink.json("moments.json", &records)?;
    sink.json("gmc_stats.json", &json!({ "beta": beta, "total_mass": totals, "holder": holder }))
}

fn study_solve(ctx: &mut Ctx, sink: &mut Sink) -> Result<()> {
    let (forcing, bc) = ctx.forcing_bc();
    let eps = ctx.cfg.eps.clone();
    let sampler = ctx.sampler(&eps)?;
    let nodes = ctx.grid.nodes();
    let mut rows = Vec::new();
    let mut levels = Vec::new();
    for (l, &e) in eps.iter().enumerate() {
        let sols = solve_replicates(&sampler, l, &ctx.spec, &forcing, &bc, ctx.cfg.replicates, ctx.seed, ctx.exec)?;
        let mut res = McStats::new();
        for (r, u) in sols.iter().enumerate() {
            let field = sampler.sample(ctx.seed, r as u64);
            res.push(verify_pathwise_ode(u, &field, l, ctx.spec.beta, &forcing, &ctx.spec)?.max_residual);
            rows.push((r, e, u.values.clone()));
        }
        levels.push(json!({
            "eps": e,
            "kappa": mc_aggregate(sols.iter().map(|u| u.kappa))?.summary()?,
            "total_mass": mc_aggregate(sols.iter().map(|u| u.total_mass))?.summary()?,
            "max_residual": res.summary()?,
        }));
    }
    sink.csv("solutions.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["replicate".to_string(), "eps".to_string()];
        header.extend(nodes.iter().map(|t| format!("t={t}")));
        wr.write_record(&header)?;
        for (r, e, v) in &rows {
            let mut rec = vec![r.to_string(), e.to_string()];
            rec.extend(v.iter().map(|x| x.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    })?;
    sink.json("solve.json", &json!({ "bc": bc, "forcing": forcing, "levels": levels }))
}

fn study_wick(ctx: &mut Ctx, sink: &mut Sink) -> Result<()> {
    let (forcing, bc) = ctx.forcing_bc();
    let w = ctx.cfg.wick.clone();
    let eps = ctx.cfg.eps[0];
    let c = build_joint_covariance(&ctx.grid, &[eps], &ctx.spec)?;
    let loadings = principal_loadings(&c, w.max_factors, w.max_discarded);
    if loadings.discarded_fraction > w.max_discarded {
        ctx.warn(format!(
            "{} factors discard {:.3}% of the variance",
            loadings.n_factors(),
            100.0 * loadings.discarded_fraction
        ));
    }
    let beta = ctx.cfg.beta;
    let sol = solve_wick_chaos(&ctx.grid, &loadings, beta, &forcing, &bc, w.cap)?;
    for msg in &sol.warnings {
        ctx.warn(msg.clone());
    }
    let n = loadings.n_factors();
    let checks = ctx.cfg.replicates.min(WICK_CHECK_REPLICATES);
    let grid = ctx.grid;
    let seed = ctx.seed;
    let diffs = crate::exec::try_map_indexed(ctx.exec, checks, |r| {
        let mut rng = crate::fieldsim::replicate_rng(seed, r as u64);
        let xi: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let a = sol.evaluate(&xi)?;
        let b = solve_pathwise_reduced(&grid, &loadings, beta, &xi, &forcing, &bc)?;
        Ok(a.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
    })?;
    sink.json(
        "wick_solution.json",
        &json!({
            "t": grid.nodes(),
            "bc": bc,
            "kappa": sol.kappa,
            "values": sol.values,
            "truncation_loss": sol.truncation_loss,
        }),
    )?;
    sink.json(
        "wick_check.json",
        &json!({
            "eps": eps,
            "n_factors": n,
            "discarded_fraction": loadings.discarded_fraction,
            "cap": w.cap,
            "replicates": checks,
            "max_pathwise_difference": diffs.iter().cloned().fold(0.0, f64::max),
            "truncation_loss": sol.truncation_loss,
        }),
    )
}

fn study_potential(ctx: &mut Ctx, sink: &mut Sink) -> Result<()> {
    let beta = ctx.cfg.beta;
    let op = build_g(beta * beta, &ctx.grid, &ctx.spec)?;
    if op.condition_estimate > crate::potential::ILL_CONDITIONED {
        ctx.warn(format!("G condition estimate {:.3e}", op.condition_estimate));
    }
    let mut text = Vec::new();
    op.write_text(&mut text)?;
    sink.write("operator.txt", &text)?;
    let report = nondegeneracy_of(&op, beta, ctx.seed)?;
    let riesz_gap = if ctx.spec.h.is_zero() {
        let ones = vec![1.0; ctx.grid.n_cells()];
        let g1 = op.apply(&ones);
        let t = ctx.grid.t_len;
        let mut worst = 0.0f64;
        for (i, z) in ctx.grid.midpoints().into_iter().enumerate() {
            worst = worst.max((g1[i] - riesz_indicator_exact(beta * beta, t, z, t)?).abs());
        }
        Some(worst)
    } else {
        None
    };
    sink.json(
        "potential.json",
        &json!({
            "alpha": op.alpha,
            "condition_estimate": op.condition_estimate,
            "smallest_eigenvalue": op.smallest_eigenvalue(),
            "riesz_constant_gap": riesz_gap,
            "nondegeneracy": report,
        }),
    )
}

fn study_project(ctx: &mut Ctx, sink: &mut Sink) -> Result<()> {
    let (forcing, bc) = ctx.forcing_bc();
    let beta = ctx.cfg.beta;
    let bp = ctx.cfg.beta_prime.expect("validated");
    let kernel = ctx.cfg.projection.kernel.clone();
    let g_cross = build_operator(beta * bp, &ctx.grid, &ctx.spec, &kernel, ctx.exec)?;
    let g_target = build_operator(bp * bp, &ctx.grid, &ctx.spec, &kernel, ctx.exec)?;
    let sol = solve_projected_bvp(beta, bp, &g_cross, &forcing, &bc)?;
    let rec = recover_kernel(&sol, &g_target, ctx.exec)?;
    for w in &rec.warnings {
        ctx.warn(w.clone());
    }
    sink.csv("u_tilde.csv", |w| write_u_tilde_csv(w, &sol))?;
    sink.csv("phi.csv", |w| write_phi_csv(w, &sol, &rec))?;
    sink.json("projection.json", &manifest(&sol, &rec, &kernel))?;
    if let ProjectionKernel::Mollified { eps } = kernel {
        let sampler = ctx.sampler(&[eps])?;
        let tests = test_functions(&ctx.grid, ctx.cfg.projection.test_functions);
        let mid = ctx.grid.n_cells() / 2;
        let report =
            projected_mc_check(&sol, &rec, mid, &tests, &sampler, &ctx.spec, ctx.cfg.replicates, ctx.seed, ctx.exec)?;
        sink.json("projection_mc.json", &report)?;
    }
    Ok(())
}

fn study_converge(ctx: &mut Ctx, sink: &mut Sink) -> Result<()> {
    let (forcing, bc) = ctx.forcing_bc();
    let eps = ctx.cfg.eps.clone();
    let sampler = ctx.sampler(&eps)?;
    let r = convergence_study(&sampler, &ctx.spec, &forcing, &bc, ctx.cfg.replicates, ctx.seed, ctx.exec)?;
    if !r.strictly_decreasing {
        ctx.warn("Ky Fan distances are not strictly decreasing".into());
    }
    sink.json("convergence.json", &r)
}

fn study_validate(ctx: &mut Ctx, sink: &mut Sink) -> Result<()> {
    let results = validate::run_all(ctx.seed, ctx.exec);
    for r in results.iter().filter(|r| !r.passed) {
        ctx.warn(format!("criterion {} failed: {}", r.id, r.detail));
    }
    sink.json("validation.json", &results)
}

/// Mergeable Monte Carlo aggregate: exact sufficient statistics plus the
/// sample itself for bootstrap intervals and KS statistics.
#[derive(Clone, Debug, Default)]
pub struct McAggregate {
    stats: McStats,
    values: Vec<f64>,
}

impl McAggregate {
    pub fn new() -> Self {
        McAggregate { stats: McStats::new(), values: Vec::new() }
    }

    pub fn push(&mut self, x: f64) {
        self.stats.push(x);
        self.values.push(x);
    }

    pub fn merge(&mut self, other: &McAggregate) {
        self.stats.merge(&other.stats);
        self.values.extend_from_slice(&other.values);
    }

    pub fn count(&self) -> u64 {
        self.stats.count()
    }

    pub fn summary(&self) -> Result<Summary> {
        self.stats.summary()
    }

    /// Percentile bootstrap interval of the mean; independent of merge order.
    pub fn bootstrap_ci(&self, level: f64, seed: u64) -> Result<(f64, f64)> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        bootstrap_mean_ci(&v, crate::gmc::BOOTSTRAP_RESAMPLES, level, seed)
    }

    pub fn ks(&self, other: &McAggregate) -> Result<f64> {
        ks_statistic(&self.values, &other.values)
    }
}

pub fn mc_aggregate(records: impl IntoIterator<Item = f64>) -> Result<McAggregate> {
    let mut a = McAggregate::new();
    records.into_iter().for_each(|x| a.push(x));
    if a.count() == 0 {
        return Err(Error::Argument("cannot aggregate an empty stream".into()));
    }
    Ok(a)
}

/// `n` standard normal draws split over `chunks` independent streams.
pub fn normal_stream(seed: u64, n: usize, chunks: usize, exec: Execution) -> Vec<f64> {
    let chunks = chunks.max(1);
    let per = n.div_ceil(chunks);
    crate::exec::map_indexed(exec, chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let k = per.min(n.saturating_sub(c * per));
        (0..k).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>()
    })
    .concat()
}
