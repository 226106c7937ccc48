//! JSON job files and the batch commands behind the `sublab` binary.
//!
//! Relative paths inside a job file are resolved against the file's directory.
//! Commands return the process exit code; see [`exit`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::convergence::{observed_orders, orders_without_reference};
use crate::discretization::{assemble, AssembledOperator, Potential};
use crate::eigensolver::{smallest_eigenpairs, SolverOptions, Spectrum};
use crate::error::{Error, Result};
use crate::grid::{GridDescriptor, GridDomain};
use crate::group_models::{GroupModel, ModelDescriptor};
use crate::inequalities::{
    average_bound_check, lemma_lab, power_bound_check, preset_offsets, reilly_check, reports_to_csv,
    sphere_reilly_quantities, yang_type_check_mode, DimensionMode, Family, InequalityReport, LemmaLabSummary,
    OffsetMode, OffsetPreset, OffsetSpec, ReillyMode, DEFAULT_TOL_REL,
};
use crate::io;
use crate::tension::{
    d_coefficients, levi_tension, max_over, orthogonality_residual, reilly_quantities, semi_isometry_residual,
    DCoefficients, MapPreset, MapSample, ReillyQuantities, Target, DEFAULT_MIN_COVERAGE,
};

pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const CHECK_FAILED: i32 = 2;
    pub const SOLVER_FAILED: i32 = 3;
    pub const CONFIG: i32 = 4;
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Format { .. } => exit::IO,
        Error::NotConverged { .. } => exit::SOLVER_FAILED,
        _ => exit::CONFIG,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialDescriptor {
    #[default]
    Zero,
    Constant { value: f64 },
    /// `offset + scale · |p − center|²`.
    Quadratic {
        center: Vec<f64>,
        scale: f64,
        #[serde(default)]
        offset: f64,
    },
    /// Single-vector `SBVC` file over the unknowns.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_k() -> usize {
    12
}
fn default_tol() -> f64 {
    SolverOptions::default().tol
}
fn default_max_iter() -> usize {
    SolverOptions::default().max_iter
}
fn default_seed() -> u64 {
    SolverOptions::default().seed
}
fn default_true() -> bool {
    true
}
fn default_k_min() -> usize {
    1
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            seed: default_seed(),
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            seed: self.seed,
            guard: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReillySource {
    /// Standard CR sphere constants.
    Sphere {
        n: usize,
        #[serde(default = "unit")]
        volume: f64,
    },
    Values {
        energy: f64,
        tension_integral: f64,
        volume: f64,
    },
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub family: Family,
    #[serde(default = "default_k_min")]
    pub k_min: usize,
    /// Defaults to the largest `k` the spectrum supports.
    #[serde(default)]
    pub k_max: Option<usize>,
    #[serde(default)]
    pub p: Vec<f64>,
    #[serde(default)]
    pub offsets: Option<OffsetPreset>,
    /// Use `D_i/4` from the job's map and the spectrum's eigenvectors.
    #[serde(default)]
    pub tension_offsets: bool,
    /// Defaults from the model: `cr` for Heisenberg, `carnot` otherwise.
    #[serde(default)]
    pub mode: Option<DimensionMode>,
    /// `D_∞` (CR) or `inf V` (Carnot); derived from the spectrum when absent.
    #[serde(default)]
    pub extra: Option<f64>,
    /// Subtract `T_i = ∫V u_i²` from constant offsets when the spectrum has them.
    #[serde(default = "default_true")]
    pub subtract_potential: bool,
    #[serde(default)]
    pub tol_rel: Option<f64>,
    #[serde(default)]
    pub reilly: Option<ReillySource>,
    #[serde(default)]
    pub reilly_mode: Option<ReillyMode>,
    #[serde(default)]
    pub lambda2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    #[serde(default)]
    pub preset: Option<MapPreset>,
    /// `SBVC` file with one vector per target component.
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub target: Option<Target>,
    #[serde(default = "default_semi_tol")]
    pub semi_tol: f64,
    #[serde(default = "default_coverage")]
    pub min_coverage: f64,
}

fn default_semi_tol() -> f64 {
    1e-2
}
fn default_coverage() -> f64 {
    DEFAULT_MIN_COVERAGE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub levels: usize,
    #[serde(default = "default_factor")]
    pub factor: f64,
    /// Exact eigenvalues, when known, for error-based orders.
    #[serde(default)]
    pub reference: Option<Vec<f64>>,
    #[serde(default = "default_max_unknowns")]
    pub max_unknowns: usize,
}

fn default_factor() -> f64 {
    2.0
}
fn default_max_unknowns() -> usize {
    4_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "out_spectrum")]
    pub spectrum: PathBuf,
    #[serde(default)]
    pub eigenvectors: Option<PathBuf>,
    #[serde(default = "out_report")]
    pub report: PathBuf,
    #[serde(default = "out_report_csv")]
    pub report_csv: PathBuf,
    #[serde(default = "out_tension")]
    pub tension: PathBuf,
    #[serde(default = "out_sweep")]
    pub sweep: PathBuf,
    #[serde(default = "out_sweep_csv")]
    pub sweep_csv: PathBuf,
}

fn out_spectrum() -> PathBuf {
    "spectrum.json".into()
}
fn out_report() -> PathBuf {
    "report.json".into()
}
fn out_report_csv() -> PathBuf {
    "report.csv".into()
}
fn out_tension() -> PathBuf {
    "tension.json".into()
}
fn out_sweep() -> PathBuf {
    "sweep.json".into()
}
fn out_sweep_csv() -> PathBuf {
    "sweep.csv".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            spectrum: out_spectrum(),
            eigenvectors: None,
            report: out_report(),
            report_csv: out_report_csv(),
            tension: out_tension(),
            sweep: out_sweep(),
            sweep_csv: out_sweep_csv(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub model: ModelDescriptor,
    pub grid: GridDescriptor,
    #[serde(default)]
    pub potential: PotentialDescriptor,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
    #[serde(default)]
    pub map: Option<MapConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl JobConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.base_dir = base_dir.to_path_buf();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn validate(&self) -> Result<()> {
        let model = self.model.build()?;
        if self.grid.bounds.len() != model.ambient_dim() {
            return Err(Error::Config(format!(
                "grid.box: {} axes for a model with {} coordinates",
                self.grid.bounds.len(),
                model.ambient_dim()
            )));
        }
        self.grid.spacings_for(&model).map_err(|e| Error::Config(format!("grid.h: {e}")))?;
        if self.solver.k == 0 {
            return Err(Error::Config("solver.k must be at least 1".into()));
        }
        if !(self.solver.tol > 0.0) {
            return Err(Error::Config("solver.tol must be positive".into()));
        }
        for (i, c) in self.checks.iter().enumerate() {
            if let Some(kmax) = c.k_max {
                if kmax + 1 > self.solver.k {
                    return Err(Error::Config(format!(
                        "checks[{i}].k_max = {kmax} needs {} eigenvalues, solver.k is {}",
                        kmax + 1,
                        self.solver.k
                    )));
                }
            }
            if c.k_min == 0 {
                return Err(Error::Config(format!("checks[{i}].k_min must be at least 1")));
            }
            if c.family == Family::CommutatorLemma {
                return Err(Error::Config(format!(
                    "checks[{i}].family: commutator_lemma runs through lemma-lab"
                )));
            }
            if c.tension_offsets && self.map.is_none() {
                return Err(Error::Config(format!("checks[{i}].tension_offsets needs a map")));
            }
        }
        match &self.potential {
            PotentialDescriptor::File { path } if !self.resolve(path).exists() => {
                return Err(Error::Config(format!("potential.path: {} does not exist", path.display())));
            }
            PotentialDescriptor::Quadratic { center, .. } if center.len() != model.ambient_dim() => {
                return Err(Error::Config("potential.center: wrong dimension".into()));
            }
            _ => {}
        }
        if let Some(m) = &self.map {
            match (&m.preset, &m.file) {
                (Some(_), None) => {}
                (None, Some(f)) => {
                    if m.target.is_none() {
                        return Err(Error::Config("map.target is required with map.file".into()));
                    }
                    if !self.resolve(f).exists() {
                        return Err(Error::Config(format!("map.file: {} does not exist", f.display())));
                    }
                }
                _ => return Err(Error::Config("map: give exactly one of preset or file".into())),
            }
        }
        if let Some(s) = &self.sweep {
            if s.levels < 2 {
                return Err(Error::Config("sweep.levels must be at least 2".into()));
            }
            if !(s.factor > 1.0) {
                return Err(Error::Config("sweep.factor must exceed 1".into()));
            }
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<GroupModel> {
        self.model.build()
    }

    pub fn potential_values(&self, grid: &GridDomain) -> Result<Vec<f64>> {
        match &self.potential {
            PotentialDescriptor::Zero => Potential::Zero.sample(grid),
            PotentialDescriptor::Constant { value } => Potential::Constant(*value).sample(grid),
            PotentialDescriptor::Quadratic { center, scale, offset } => {
                let f = |p: &[f64]| {
                    offset + scale * p.iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum::<f64>()
                };
                Potential::Function(&f).sample(grid)
            }
            PotentialDescriptor::File { path } => {
                let path = self.resolve(path);
                let mut v = io::read_vectors(&path)?;
                if v.len() != 1 {
                    return Err(Error::Config(format!("potential file holds {} vectors, expected 1", v.len())));
                }
                Potential::Nodes(&v.remove(0)).sample(grid)
            }
        }
    }

    /// Model, grid and the assembled `−Δ + V` for this job.
    pub fn assemble(&self, grid_desc: &GridDescriptor) -> Result<(GroupModel, GridDomain, AssembledOperator)> {
        let model = self.build_model()?;
        let grid = grid_desc.build(&model)?;
        let v = self.potential_values(&grid)?;
        let a = assemble(&model, &grid, Potential::Nodes(&v))?;
        Ok((model, grid, a))
    }

    fn sample_map(&self, model: &GroupModel, grid: &GridDomain) -> Result<(String, MapSample)> {
        let m = self.map.as_ref().ok_or_else(|| Error::Config("job has no map".into()))?;
        let (name, sample) = match (&m.preset, &m.file) {
            (Some(p), _) => {
                let name = serde_json::to_value(p)?.as_str().unwrap_or_default().to_string();
                (name, p.sample(model, grid).map_err(|e| Error::Config(format!("map.preset: {e}")))?)
            }
            (None, Some(f)) => {
                let comps = io::read_vectors(&self.resolve(f))?;
                let target = m.target.expect("validated");
                (f.display().to_string(), MapSample::new(target, comps, grid).map_err(|e| Error::Config(format!("map.file: {e}")))?)
            }
            (None, None) => unreachable!("validated"),
        };
        if let Target::Euclidean(k) = sample.target() {
            if k < model.horizontal_rank() {
                return Err(Error::Config(format!(
                    "map has {k} components, fewer than the horizontal rank {}",
                    model.horizontal_rank()
                )));
            }
        }
        Ok((name, sample))
    }
}

/// Default constants for a model.
pub fn default_mode(model: &ModelDescriptor) -> DimensionMode {
    match model {
        ModelDescriptor::Heisenberg { n } => DimensionMode::Cr { n: *n },
        ModelDescriptor::CarnotStep2 { d1, .. } => DimensionMode::Carnot { d: *d1 },
        ModelDescriptor::Abelian { d } => DimensionMode::Carnot { d: *d },
    }
}

/// Everything a check list can draw on besides the spectrum.
pub struct CheckContext<'a> {
    pub job: Option<&'a JobConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub reports: Vec<InequalityReport>,
    pub checks: usize,
    pub hard_failures: usize,
    pub degenerate: usize,
}

impl CheckReport {
    pub fn new(reports: Vec<InequalityReport>) -> Self {
        Self {
            checks: reports.len(),
            hard_failures: reports.iter().filter(|r| r.is_hard_failure()).count(),
            degenerate: reports.iter().filter(|r| r.degenerate).count(),
            reports,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.hard_failures == 0 {
            exit::OK
        } else {
            exit::CHECK_FAILED
        }
    }
}

fn tension_d_for(job: &JobConfig, spectrum: &Spectrum) -> Result<DCoefficients> {
    let grid_desc = spectrum.meta.grid.clone().unwrap_or_else(|| job.grid.clone());
    let model = job.build_model()?;
    let grid = grid_desc.build(&model)?;
    let v = job.potential_values(&grid)?;
    let a0 = assemble(&model, &grid, Potential::Zero)?;
    let (_, f) = job.sample_map(&model, &grid)?;
    let t = levi_tension(&a0, &grid, &f)?;
    d_coefficients(&grid, &t, &v, spectrum)
}

/// Evaluate a check list on a spectrum.
pub fn run_checks(specs: &[CheckSpec], spectrum: &Spectrum, ctx: &CheckContext<'_>) -> Result<Vec<InequalityReport>> {
    let lambda = &spectrum.eigenvalues;
    let mut out = Vec::new();
    for (i, c) in specs.iter().enumerate() {
        let ctx_err = |m: String| Error::Config(format!("checks[{i}]: {m}"));
        let model = spectrum.meta.model.as_ref().or(ctx.job.map(|j| &j.model));
        let mode = match (c.mode, model) {
            (Some(m), _) => m,
            (None, Some(m)) => default_mode(m),
            (None, None) => return Err(ctx_err("mode is required when the spectrum has no model".into())),
        };
        let tol = c.tol_rel.unwrap_or(DEFAULT_TOL_REL);

        if c.family == Family::Reilly {
            let DimensionMode::Cr { n } = mode else {
                return Err(ctx_err("reilly checks need cr mode".into()));
            };
            let q = match &c.reilly {
                Some(ReillySource::Sphere { n, volume }) => sphere_reilly_quantities(*n, *volume),
                Some(ReillySource::Values { energy, tension_integral, volume }) => ReillyQuantities {
                    energy: *energy,
                    tension_integral: *tension_integral,
                    volume: *volume,
                    coverage: 1.0,
                },
                None => return Err(ctx_err("reilly checks need a reilly source".into())),
            };
            let lambda2 = match c.lambda2 {
                Some(l) => l,
                None => *lambda.get(1).ok_or_else(|| ctx_err("spectrum has no second eigenvalue".into()))?,
            };
            let rmode = c.reilly_mode.unwrap_or(ReillyMode::SemiIsometricForm);
            out.push(reilly_check(lambda2, n, &q, rmode, tol)?);
            continue;
        }

        if lambda.len() < 2 {
            return Err(ctx_err("spectrum needs at least two eigenvalues".into()));
        }
        let k_max = c.k_max.unwrap_or(lambda.len() - 1);
        if k_max + 1 > lambda.len() {
            return Err(ctx_err(format!("k_max = {k_max} exceeds the spectrum length {}", lambda.len())));
        }

        let d = if c.tension_offsets {
            let job = ctx.job.ok_or_else(|| ctx_err("tension offsets need the job's map".into()))?;
            if spectrum.eigenvectors.is_none() {
                return Err(Error::MissingEigenvectors);
            }
            Some(tension_d_for(job, spectrum)?)
        } else {
            None
        };
        let offsets = match (&d, &c.offsets) {
            (Some(d), _) => preset_offsets(&OffsetPreset::TensionD { d: d.d.clone() })?,
            (None, Some(p)) => preset_offsets(p)?,
            (None, None) => OffsetSpec::zero(),
        };
        let offsets = match (&spectrum.potential_moments, &d) {
            (Some(t), None) if c.subtract_potential => offsets.minus_moments(t),
            _ => offsets,
        };
        if let OffsetMode::PerIndex(s) = &offsets.mode {
            if s.len() < k_max {
                return Err(Error::MissingEigenvectors);
            }
        }
        let inf_v = spectrum.meta.potential_min.unwrap_or(0.0);
        let extra = match (c.extra, &d, mode) {
            (Some(e), _, _) => e,
            (None, Some(d), DimensionMode::Cr { .. }) => d.d_inf,
            (None, None, DimensionMode::Cr { .. }) => -4.0 * inf_v,
            (None, _, DimensionMode::Carnot { .. }) => inf_v,
        };
        for k in c.k_min..=k_max {
            match c.family {
                Family::YangType => {
                    let ps = if c.p.is_empty() { vec![2.0] } else { c.p.clone() };
                    for p in ps {
                        out.push(yang_type_check_mode(lambda, k, p, mode, &offsets, tol)?);
                    }
                }
                Family::AverageBound => out.push(average_bound_check(lambda, k, mode, extra, tol)?),
                Family::PowerBound => out.push(power_bound_check(lambda, k, mode, extra, tol)?),
                Family::Reilly | Family::CommutatorLemma => unreachable!(),
            }
        }
    }
    Ok(out)
}

/// Assemble, solve and write the spectrum. Non-convergence writes the
/// partial spectrum with `"converged": false` and returns exit code 3.
pub fn cmd_solve(job: &JobConfig) -> Result<i32> {
    let (_, _, a) = job.assemble(&job.grid)?;
    let spectrum_path = job.resolve(&job.output.spectrum);
    let vectors_path = job.output.eigenvectors.as_ref().map(|p| job.resolve(p));
    match smallest_eigenpairs(&a, job.solver.k, &job.solver.options()) {
        Ok(s) => {
            log::info!("solved {} pairs in {} iterations", s.len(), s.meta.iterations);
            io::write_spectrum(&spectrum_path, &s, vectors_path.as_deref())?;
            Ok(exit::OK)
        }
        Err(Error::NotConverged { partial, converged, requested, .. }) => {
            log::error!("solver converged {converged} of {requested} pairs");
            io::write_spectrum(&spectrum_path, &partial, vectors_path.as_deref())?;
            Ok(exit::SOLVER_FAILED)
        }
        Err(e) => Err(e),
    }
}

/// Run the job's check list on a spectrum file; writes JSON and CSV reports.
pub fn cmd_check(job: &JobConfig, spectrum: &Path, vectors: Option<&Path>) -> Result<i32> {
    let s = io::read_spectrum(spectrum, vectors)?;
    let reports = run_checks(&job.checks, &s, &CheckContext { job: Some(job) })?;
    let report = CheckReport::new(reports);
    for r in report.reports.iter().filter(|r| r.is_hard_failure()) {
        log::warn!("{} k={} p={:?}: lhs {:.6e} > rhs {:.6e}", r.family.name(), r.k, r.p, r.lhs, r.rhs);
    }
    io::write_json(&job.resolve(&job.output.report), &report)?;
    io::write_text(&job.resolve(&job.output.report_csv), &reports_to_csv(&report.reports)?)?;
    Ok(report.exit_code())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensionReport {
    pub map: String,
    pub target: Target,
    pub nodes: usize,
    pub trusted_nodes: usize,
    pub tension_max: f64,
    pub norm_sq_max: f64,
    pub norm_sq_mean: f64,
    pub semi_isometry_max: f64,
    pub semi_isometry_mean: f64,
    pub orthogonality: Option<f64>,
    pub reilly: Option<ReillyQuantities>,
    pub d_coefficients: Option<DCoefficients>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub fn tension_report(job: &JobConfig, grid_desc: &GridDescriptor, spectrum: Option<&Spectrum>) -> Result<TensionReport> {
    let model = job.build_model()?;
    let grid = grid_desc.build(&model)?;
    let a0 = assemble(&model, &grid, Potential::Zero)?;
    let (name, f) = job.sample_map(&model, &grid)?;
    let mcfg = job.map.as_ref().expect("sampled");
    let t = levi_tension(&a0, &grid, &f)?;
    let trusted = &t.trusted;
    let count = t.trusted_count();
    let mut warnings = Vec::new();
    let semi = semi_isometry_residual(&model, &grid, &f)?;
    let mean_over = |v: &[f64]| {
        if count == 0 {
            0.0
        } else {
            v.iter().zip(trusted).filter(|(_, m)| **m).map(|(x, _)| x).sum::<f64>() / count as f64
        }
    };
    let orthogonality = match orthogonality_residual(&model, &grid, &f, &t, mcfg.semi_tol) {
        Ok(v) => Some(v),
        Err(Error::NotSemiIsometric { residual, .. }) => {
            warnings.push(format!("map is not semi-isometric (residual {residual:.3e}); orthogonality skipped"));
            None
        }
        Err(e) => return Err(e),
    };
    let reilly = match reilly_quantities(&grid, &model, &f, &t, mcfg.min_coverage) {
        Ok(q) => Some(q),
        Err(e @ Error::InsufficientCoverage { .. }) => {
            warnings.push(e.to_string());
            None
        }
        Err(e) => return Err(e),
    };
    let d = match spectrum {
        Some(s) if s.eigenvectors.is_some() => {
            let v = job.potential_values(&grid)?;
            Some(d_coefficients(&grid, &t, &v, s)?)
        }
        _ => None,
    };
    Ok(TensionReport {
        map: name,
        target: f.target(),
        nodes: grid.num_unknowns(),
        trusted_nodes: count,
        tension_max: t.max_trusted(),
        norm_sq_max: t.max_norm_sq_trusted(),
        norm_sq_mean: mean_over(&t.norm_sq),
        semi_isometry_max: max_over(&semi, trusted),
        semi_isometry_mean: mean_over(&semi),
        orthogonality,
        reilly,
        d_coefficients: d,
        warnings,
    })
}

/// Tension diagnostics for the job's map; `D_i` are included when the job's
/// spectrum and eigenvector files exist.
pub fn cmd_tension(job: &JobConfig) -> Result<i32> {
    if job.map.is_none() {
        return Err(Error::Config("tension jobs need a map".into()));
    }
    let sp = job.resolve(&job.output.spectrum);
    let spectrum = match &job.output.eigenvectors {
        Some(vp) if sp.exists() && job.resolve(vp).exists() => Some(io::read_spectrum(&sp, Some(&job.resolve(vp)))?),
        _ => None,
    };
    let report = tension_report(job, &job.grid, spectrum.as_ref())?;
    io::write_json(&job.resolve(&job.output.tension), &report)?;
    Ok(exit::OK)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepLevel {
    pub level: usize,
    pub h: f64,
    pub unknowns: usize,
    pub eigenvalues: Vec<f64>,
    pub converged: bool,
    /// Observed order per eigenvalue, from this level and the previous ones.
    pub orders: Vec<Option<f64>>,
    /// Smallest relative margin per check family.
    pub margins: Vec<(Family, f64)>,
    pub hard_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub factor: f64,
    pub reference: Option<Vec<f64>>,
    pub levels: Vec<SweepLevel>,
}

fn estimated_unknowns(desc: &GridDescriptor, model: &GroupModel) -> Result<usize> {
    let h = desc.spacings_for(model)?;
    Ok(desc
        .bounds
        .iter()
        .zip(&h)
        .map(|([a, b], h)| (((b - a) / h).round() as usize).saturating_sub(1))
        .product())
}

pub fn run_sweep(job: &JobConfig, levels: usize) -> Result<SweepReport> {
    let cfg = job.sweep.clone().unwrap_or(SweepConfig {
        levels,
        factor: default_factor(),
        reference: None,
        max_unknowns: default_max_unknowns(),
    });
    if levels < 2 {
        return Err(Error::Config("a sweep needs at least 2 levels".into()));
    }
    let model = job.build_model()?;
    let descs: Vec<GridDescriptor> = (0..levels).map(|l| job.grid.refined(cfg.factor.powi(l as i32))).collect();
    for (l, d) in descs.iter().enumerate() {
        let n = estimated_unknowns(d, &model)?;
        if n > cfg.max_unknowns {
            return Err(Error::Config(format!(
                "sweep level {l} needs about {n} unknowns, above the cap {}; largest feasible level is {}",
                cfg.max_unknowns,
                l as i64 - 1
            )));
        }
    }
    let k = job.solver.k;
    let mut out: Vec<SweepLevel> = Vec::new();
    for (l, d) in descs.iter().enumerate() {
        let (_, grid, a) = job.assemble(d)?;
        let (s, converged) = match smallest_eigenpairs(&a, k, &job.solver.options()) {
            Ok(s) => (s, true),
            Err(Error::NotConverged { partial, .. }) => (*partial, false),
            Err(e) => return Err(e),
        };
        let reports = run_checks(&job.checks, &s, &CheckContext { job: Some(job) })?;
        let mut margins: Vec<(Family, f64)> = Vec::new();
        for r in &reports {
            match margins.iter_mut().find(|(f, _)| *f == r.family) {
                Some((_, m)) => *m = m.min(r.relative_margin),
                None => margins.push((r.family, r.relative_margin)),
            }
        }
        log::info!("sweep level {l}: N = {}, lambda_1 = {:.10}", grid.num_unknowns(), s.eigenvalues[0]);
        out.push(SweepLevel {
            level: l,
            h: grid.spacings()[0],
            unknowns: grid.num_unknowns(),
            eigenvalues: s.eigenvalues.clone(),
            converged,
            orders: vec![None; k],
            margins,
            hard_failures: reports.iter().filter(|r| r.is_hard_failure()).count(),
        });
    }
    for i in 0..k {
        let seq: Vec<f64> = out.iter().map(|lv| lv.eigenvalues[i]).collect();
        let (orders, first) = match cfg.reference.as_ref().and_then(|r| r.get(i)) {
            Some(exact) => {
                let errs: Vec<f64> = seq.iter().map(|v| v - exact).collect();
                (observed_orders(&errs, cfg.factor), 1)
            }
            None => (orders_without_reference(&seq, cfg.factor), 2),
        };
        for (j, o) in orders.into_iter().enumerate() {
            out[first + j].orders[i] = Some(o).filter(|o| o.is_finite());
        }
    }
    Ok(SweepReport {
        factor: cfg.factor,
        reference: cfg.reference,
        levels: out,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn sweep_to_csv(report: &SweepReport) -> Result<String> {
    let k = report.levels.first().map_or(0, |l| l.eigenvalues.len());
    let families: Vec<Family> = report
        .levels
        .first()
        .map(|l| l.margins.iter().map(|m| m.0).collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["level".to_string(), "h".into(), "unknowns".into(), "converged".into()];
    header.extend((1..=k).map(|i| format!("lambda_{i}")));
    header.extend((1..=k).map(|i| format!("order_{i}")));
    header.extend(families.iter().map(|f| format!("min_relative_margin_{}", f.name())));
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(&header).map_err(csv_err)?;
    for lv in &report.levels {
        let mut row = vec![lv.level.to_string(), lv.h.to_string(), lv.unknowns.to_string(), lv.converged.to_string()];
        row.extend(lv.eigenvalues.iter().map(f64::to_string));
        row.extend(lv.orders.iter().map(|o| fmt_opt(*o)));
        row.extend(families.iter().map(|f| fmt_opt(lv.margins.iter().find(|m| m.0 == *f).map(|m| m.1))));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| csv_err(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Refinement sweep; exit code 3 if any level fails to converge, 2 if checks
/// fail on the finest level.
pub fn cmd_sweep(job: &JobConfig, levels: Option<usize>) -> Result<i32> {
    let levels = levels.or(job.sweep.as_ref().map(|s| s.levels)).unwrap_or(0);
    let report = run_sweep(job, levels)?;
    io::write_json(&job.resolve(&job.output.sweep), &report)?;
    io::write_text(&job.resolve(&job.output.sweep_csv), &sweep_to_csv(&report)?)?;
    if report.levels.iter().any(|l| !l.converged) {
        return Ok(exit::SOLVER_FAILED);
    }
    Ok(if report.levels.last().is_some_and(|l| l.hard_failures > 0) {
        exit::CHECK_FAILED
    } else {
        exit::OK
    })
}

/// Randomized commutator-lemma batch; exit code 2 on any failure.
pub fn cmd_lemma_lab(dim: usize, trials: usize, ps: &[f64], seed: u64, tol: f64, out: &Path) -> Result<i32> {
    let summary: LemmaLabSummary = lemma_lab(dim, trials, ps, seed, tol).map_err(|e| match e {
        Error::InvalidCheck(m) => Error::Config(m),
        other => other,
    })?;
    io::write_json(out, &summary)?;
    Ok(if summary.failures == 0 { exit::OK } else { exit::CHECK_FAILED })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn job(text: &str) -> Result<JobConfig> {
        JobConfig::from_json(text, Path::new("."))
    }

    #[test]
    fn minimal_job_parses_with_defaults() {
        let j = job(r#"{"model": {"kind": "heisenberg", "n": 1}, "grid": {"box": [[0,1],[0,1],[0,1]], "h": 0.25}}"#).unwrap();
        assert_eq!(j.solver.k, 12);
        assert_eq!(j.potential, PotentialDescriptor::Zero);
        assert_eq!(j.output.spectrum, PathBuf::from("spectrum.json"));
    }

    #[test]
    fn errors_name_the_field() {
        let e = job(r#"{"model": {"kind": "heisenberg", "n": 1}, "grid": {"box": [[0,1],[0,1],[0,1]], "hh": 0.25}}"#).unwrap_err();
        assert!(e.to_string().contains("hh"), "{e}");
        let e = job(r#"{"model": {"kind": "heisenberg", "n": 1}, "grid": {"box": [[0,1],[0,1]], "h": 0.25}}"#).unwrap_err();
        assert!(e.to_string().contains("grid.box"), "{e}");
        let e = job(r#"{"model": {"kind": "heisenberg", "n": 1}, "grid": {"box": [[0,1],[0,1],[0,1]], "h": 0.25},
                       "solver": {"k": 4}, "checks": [{"family": "yang_type", "k_max": 4}]}"#)
        .unwrap_err();
        assert!(e.to_string().contains("checks[0].k_max"), "{e}");
        assert_eq!(exit_code(&e), exit::CONFIG);
    }

    #[test]
    fn hand_spectrum_fails_average_bound() {
        let j = job(r#"{"model": {"kind": "heisenberg", "n": 1}, "grid": {"box": [[0,1],[0,1],[0,1]], "h": 0.25},
                       "checks": [{"family": "average_bound"}, {"family": "yang_type", "p": [2]}]}"#)
        .unwrap();
        let s: Spectrum = serde_json::from_str(r#"{"eigenvalues": [1, 5]}"#).unwrap();
        let reports = run_checks(&j.checks, &s, &CheckContext { job: Some(&j) }).unwrap();
        assert_eq!(reports.len(), 2);
        assert!(reports.iter().all(|r| !r.passed()));
        assert_eq!(CheckReport::new(reports).exit_code(), exit::CHECK_FAILED);
        assert_eq!(CheckReport::new(vec![]).exit_code(), exit::OK);
    }

    #[test]
    fn sweep_rejects_single_level() {
        let j = job(r#"{"model": {"kind": "abelian", "d": 2}, "grid": {"box": [[0,1],[0,1]], "h": 0.25}}"#).unwrap();
        assert!(matches!(run_sweep(&j, 1), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_cap_names_largest_level() {
        let j = job(r#"{"model": {"kind": "abelian", "d": 2}, "grid": {"box": [[0,1],[0,1]], "h": 0.25},
                       "sweep": {"levels": 4, "max_unknowns": 100}}"#)
        .unwrap();
        let e = run_sweep(&j, 4).unwrap_err();
        assert!(e.to_string().contains("largest feasible level is 1"), "{e}");
    }
}
