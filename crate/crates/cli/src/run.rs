//! Scenario execution and artifact writing.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use sha2::{Digest, Sha256};
use sosm_core::fespace::Field;
use sosm_core::forms::{Block, ConstraintSet, Discretization, MonolithicOptions, UnknownLayout};
use sosm_core::mms::{
    build_case, case_layout, compute_error_table, convergence_rates, default_case, projected_initial_guess, solve_picard_case,
    ErrorRecord, ManufacturedCase, ProblemKind, SinSin, METRIC_COUNT,
};
use sosm_core::solver::{newton_solve, NewtonReport};

use crate::config::{ConfigError, Format, RunConfig, Scenario};
use crate::demo::{demo_layout, run_mixing_demo};
use crate::output::{error_table, newton_table, version_string, write_csv, write_vtk, Manifest, MeshRecord};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config: {0}")]
    Schema(#[from] ConfigError),
    /// The artifacts written before the failure are left in place.
    #[error("solver: {0}")]
    Solver(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Schema(_) => 2,
            RunError::Solver(_) => 3,
            RunError::Io(_) => 4,
        }
    }
}

/// Command line overrides of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub refinements: Option<usize>,
    pub flux_degree: Option<usize>,
    pub output: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), ConfigError> {
        if let Some(r) = self.refinements {
            cfg.mesh.refinements = r;
        }
        if let Some(k) = self.flux_degree {
            cfg.degrees.flux_k = k;
        }
        if let Some(d) = &self.output {
            cfg.output.dir = d.clone();
        }
        cfg.validate()
    }
}

/// Outcome of a run; `error` is set when the run stopped early.
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub dir: PathBuf,
    pub error: Option<RunError>,
}

/// Hex SHA-256 of the effective config.
pub fn config_hash(cfg: &RunConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_toml().as_bytes()))
}

/// Loads, overrides and validates a config file.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, RunError> {
    let text = RunConfig::load(path)?;
    let mut cfg = RunConfig::from_toml(&text)?;
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

struct Recorder<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    manifest: Manifest,
    start: Instant,
}

impl<'a> Recorder<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self, RunError> {
        let dir = cfg.output.dir.clone();
        std::fs::create_dir_all(&dir)?;
        let scenario = serde_json::to_value(cfg.scenario).map_err(std::io::Error::other)?;
        let manifest = Manifest {
            version: version_string(),
            config_hash: config_hash(cfg),
            scenario: scenario.as_str().unwrap_or_default().to_string(),
            status: "running".into(),
            failure: None,
            meshes: Vec::new(),
            mole_fraction_defect: None,
            mass_average_defect: None,
            artifacts: Vec::new(),
            seconds: 0.0,
            config: serde_json::to_value(cfg).map_err(std::io::Error::other)?,
        };
        Ok(Recorder { cfg, dir, manifest, start: Instant::now() })
    }

    fn csv(&mut self, name: &str, table: &crate::output::Table) -> Result<(), RunError> {
        if self.cfg.output.wants(Format::Csv) {
            write_csv(table, &self.dir.join(name))?;
            self.manifest.artifacts.push(name.to_string());
        }
        Ok(())
    }

    fn vtk(&mut self, name: &str, layout: &UnknownLayout, state: &[f64]) -> Result<(), RunError> {
        if self.cfg.output.wants(Format::Vtk) {
            let fields = named_fields(layout, state);
            let refs: Vec<(&str, &Field)> = fields.iter().map(|(n, f)| (n.as_str(), f)).collect();
            write_vtk(&self.dir.join(name), layout.mesh(), &refs)?;
            self.manifest.artifacts.push(name.to_string());
        }
        Ok(())
    }

    fn finish(mut self, error: Option<RunError>) -> Result<RunOutcome, RunError> {
        self.manifest.seconds = self.start.elapsed().as_secs_f64();
        match &error {
            None => self.manifest.status = "converged".into(),
            Some(e) => {
                self.manifest.status = "failed".into();
                self.manifest.failure = Some(e.to_string());
            }
        }
        self.manifest.write(&self.dir.join("manifest.json"))?;
        Ok(RunOutcome { manifest: self.manifest, dir: self.dir, error })
    }
}

/// Every block of a state as `(name, field)`, species numbered from 1.
pub fn named_fields(layout: &UnknownLayout, state: &[f64]) -> Vec<(String, Field)> {
    let mut out = vec![("v".to_string(), layout.field(state, Block::Velocity)), ("p".to_string(), layout.field(state, Block::Pressure))];
    for i in 0..layout.n {
        out.push((format!("J{}", i + 1), layout.field(state, Block::Flux(i))));
        out.push((format!("mu{}", i + 1), layout.field(state, Block::Potential(i))));
    }
    if layout.monolithic {
        for i in 0..layout.n {
            out.push((format!("x{}", i + 1), layout.field(state, Block::MoleFraction(i))));
        }
        out.push(("Psi".to_string(), layout.field(state, Block::Psi)));
    }
    out
}

fn manufactured_case(cfg: &RunConfig) -> Result<ManufacturedCase, RunError> {
    let base = default_case();
    let t = &cfg.thermo;
    let d = t.d.clone().unwrap_or_else(|| base.d.clone());
    let mm = t.molar_masses.clone().unwrap_or_else(|| vec![1.0; d.len()]);
    build_case(
        Arc::new(SinSin),
        &d,
        &mm,
        t.eta.unwrap_or(base.spec.eta),
        t.zeta.unwrap_or(base.spec.zeta),
        t.gamma.unwrap_or(base.spec.gamma),
    )
    .map_err(|e| RunError::Schema(ConfigError(e.to_string())))
}

fn discretization(cfg: &RunConfig) -> Result<Discretization, RunError> {
    Discretization::new(cfg.degrees.velocity_k, cfg.degrees.flux_k, cfg.elements.flux_family.into())
        .map_err(|e| RunError::Schema(ConfigError(e.to_string())))
}

fn write_errors(rec: &mut Recorder, records: &[ErrorRecord]) -> Result<(), RunError> {
    let rates = if records.len() >= 2 {
        convergence_rates(records).map_err(|e| RunError::Solver(e.to_string()))?
    } else {
        Vec::<[Option<f64>; METRIC_COUNT]>::new()
    };
    rec.csv("errors.csv", &error_table(records, &rates))
}

/// Runs `cfg`, writing artifacts to its output directory. Solver failures
/// still write the manifest and come back in [`RunOutcome::error`].
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let mut rec = Recorder::new(cfg)?;
    let result = match cfg.scenario {
        Scenario::PicardMms => picard_mms(&mut rec),
        Scenario::NewtonMms => newton_mms(&mut rec),
        Scenario::MixingDemo => mixing_demo(&mut rec),
    };
    match result {
        Ok(()) => rec.finish(None),
        Err(e @ RunError::Solver(_)) => rec.finish(Some(e)),
        Err(e) => Err(e),
    }
}

fn picard_mms(rec: &mut Recorder) -> Result<(), RunError> {
    let cfg = rec.cfg;
    let case = Arc::new(manufactured_case(cfg)?);
    let disc = discretization(cfg)?;
    let seq = cfg.mesh_sequence();
    let mut records = Vec::new();
    for (k, &m) in seq.iter().enumerate() {
        let t0 = Instant::now();
        let layout = case_layout(&case, m, disc, false).map_err(|e| RunError::Solver(e.to_string()))?;
        let solved = solve_picard_case(&case, &layout).and_then(|s| {
            let r = compute_error_table(&layout, &s, &case, ProblemKind::Picard)?;
            Ok((s, r))
        });
        let mut mesh = MeshRecord::new(m, &layout);
        mesh.seconds = t0.elapsed().as_secs_f64();
        let (state, record) = match solved {
            Ok(v) => v,
            Err(e) => {
                rec.manifest.meshes.push(mesh);
                write_errors(rec, &records)?;
                return Err(RunError::Solver(format!("m = {m}: {e}")));
            }
        };
        log::info!("picard m = {m}: {} dofs, E_combined {:e}", layout.total(), record.combined());
        mesh.converged = true;
        rec.manifest.meshes.push(mesh);
        records.push(record);
        if k + 1 == seq.len() {
            rec.vtk(&format!("picard_m{m}.vtk"), &layout, &state)?;
        }
    }
    write_errors(rec, &records)
}

fn newton_mms(rec: &mut Recorder) -> Result<(), RunError> {
    let cfg = rec.cfg;
    let case = Arc::new(manufactured_case(cfg)?);
    let disc = discretization(cfg)?;
    let n = case.n();
    let constraints = if cfg.constraints.is_empty() {
        case.constraints()
    } else {
        ConstraintSet::new(n, cfg.constraints_for(n, |i| case.totals[i])?)
    }
    .map_err(|e| RunError::Schema(ConfigError(e.to_string())))?;
    let exact_grad_psi = cfg.solver.exact_grad_psi.then(|| {
        let c = case.clone();
        Arc::new(move |x: [f64; 2]| c.psi_gradient(x)) as sosm_core::forms::VectorFn
    });
    let mopts = MonolithicOptions { density_consistency: cfg.solver.density_consistency, freeze_concentrations: false, exact_grad_psi };
    let opts = cfg.solver.newton();
    let data = case.problem_data();
    let seq = cfg.mesh_sequence();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (k, &m) in seq.iter().enumerate() {
        let t0 = Instant::now();
        let layout = case_layout(&case, m, disc, true).map_err(|e| RunError::Solver(e.to_string()))?;
        let mut mesh = MeshRecord::new(m, &layout);
        let run = projected_initial_guess(&case, &layout).and_then(|u0| newton_solve(&layout, &data, &constraints, &opts, &mopts, u0));
        let run = match run {
            Ok(r) => r,
            Err(e) => {
                mesh.seconds = t0.elapsed().as_secs_f64();
                rec.manifest.meshes.push(mesh);
                failures.push(format!("m = {m}: {e}"));
                continue;
            }
        };
        mesh.iterations = Some(run.report.iterations);
        mesh.converged = run.report.converged;
        rec.csv(&format!("newton_m{m}.csv"), &newton_table(std::slice::from_ref(&run.report)))?;
        if run.report.converged {
            let record = compute_error_table(&layout, &run.state, &case, ProblemKind::Monolithic).map_err(|e| RunError::Solver(e.to_string()))?;
            log::info!("newton m = {m}: {} iterations, E_combined {:e}", run.report.iterations, record.combined());
            records.push(record);
            if k + 1 == seq.len() {
                rec.vtk(&format!("newton_m{m}.vtk"), &layout, &run.state)?;
            }
        } else {
            let why = run.report.failure.clone().unwrap_or_else(|| "no convergence".into());
            log::warn!("newton m = {m}: {why}");
            failures.push(format!("m = {m}: {why}"));
        }
        mesh.seconds = t0.elapsed().as_secs_f64();
        rec.manifest.meshes.push(mesh);
    }
    if failures.is_empty() {
        write_errors(rec, &records)
    } else {
        // rates across a gap in the sequence would be meaningless
        rec.csv("errors.csv", &error_table(&records, &[]))?;
        Err(RunError::Solver(format!("newton diverged: {}", failures.join("; "))))
    }
}

fn mixing_demo(rec: &mut Recorder) -> Result<(), RunError> {
    let cfg = rec.cfg;
    let params = cfg.demo_parameters();
    let opts = cfg.solver.newton();
    let mopts = MonolithicOptions { density_consistency: cfg.solver.density_consistency, ..MonolithicOptions::default() };
    for &m in &cfg.mesh_sequence() {
        let t0 = Instant::now();
        let layout = demo_layout(m, cfg.degrees.flux_k, cfg.elements.flux_family.into()).map_err(|e| RunError::Solver(e.to_string()))?;
        let mut mesh = MeshRecord::new(m, &layout);
        let run = match run_mixing_demo(&params, layout, &opts, &mopts) {
            Ok(r) => r,
            Err(e) => {
                mesh.seconds = t0.elapsed().as_secs_f64();
                rec.manifest.meshes.push(mesh);
                return Err(RunError::Solver(format!("m = {m}: {e}")));
            }
        };
        mesh.iterations = Some(run.reports.iter().map(|r: &NewtonReport| r.iterations).sum());
        mesh.converged = run.failed_at.is_none();
        mesh.mole_fraction_defect = Some(run.mole_fraction_defect);
        mesh.mass_average_defect = Some(run.mass_average_defect);
        mesh.seconds = t0.elapsed().as_secs_f64();
        rec.manifest.meshes.push(mesh);
        rec.csv(&format!("demo_newton_m{m}.csv"), &newton_table(&run.reports))?;
        if let Some(s) = run.failed_at {
            return Err(RunError::Solver(format!("m = {m}: continuation failed at s = {s}")));
        }
        log::info!(
            "demo m = {m}: {:.1} s, |1 - sum x| {:e}, mass-average defect {:e}",
            run.seconds,
            run.mole_fraction_defect,
            run.mass_average_defect
        );
        rec.manifest.mole_fraction_defect = Some(run.mole_fraction_defect);
        rec.manifest.mass_average_defect = Some(run.mass_average_defect);
        rec.vtk(&format!("demo_m{m}.vtk"), &run.layout, &run.state)?;
    }
    Ok(())
}
