//! Run configuration read from TOML.
//!
//! ```toml
//! scenario = "picard_mms"          # picard_mms | newton_mms | mixing_demo
//!
//! [mesh]
//! m = 8                            # intervals per unit length
//! refinements = 3                  # uniform refinements after the first mesh
//!
//! [degrees]
//! velocity_k = 2
//! flux_k = 2
//!
//! [elements]
//! flux_family = "rt"               # rt | bdm
//!
//! [thermo]
//! law = "ideal_gas"                # ideal_gas | margules
//! RT = 1.0
//! D = [0.5, 2.0]                   # product-form diffusivities D_ij = D_i D_j
//!
//! [solver]
//! continuation_steps = 1
//!
//! [[constraints]]
//! kind = "mole_fraction_mean"      # | pressure_mean | total | boundary_mass_difference
//!
//! [output]
//! dir = "out"
//! formats = ["csv", "vtk"]
//! ```
//!
//! Every key except `scenario` has a default. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sosm_core::forms::{Constraint, FluxFamily};
use sosm_core::solver::{NewtonOptions, PicardOptions};

use crate::demo::DemoParameters;

/// Schema violation in a run configuration.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    PicardMms,
    NewtonMms,
    MixingDemo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub mesh: MeshSection,
    #[serde(default)]
    pub degrees: DegreeSection,
    #[serde(default)]
    pub elements: ElementSection,
    #[serde(default)]
    pub thermo: ThermoSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<ConstraintEntry>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSection {
    pub m: usize,
    pub refinements: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        MeshSection { m: 8, refinements: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegreeSection {
    pub velocity_k: usize,
    pub flux_k: usize,
}

impl Default for DegreeSection {
    fn default() -> Self {
        DegreeSection { velocity_k: 2, flux_k: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxFamilyName {
    Rt,
    Bdm,
}

impl From<FluxFamilyName> for FluxFamily {
    fn from(f: FluxFamilyName) -> Self {
        match f {
            FluxFamilyName::Rt => FluxFamily::RaviartThomas,
            FluxFamilyName::Bdm => FluxFamily::BrezziDouglasMarini,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElementSection {
    pub flux_family: FluxFamilyName,
}

impl Default for ElementSection {
    fn default() -> Self {
        ElementSection { flux_family: FluxFamilyName::Rt }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawName {
    IdealGas,
    Margules,
}

/// Thermodynamic and transport parameters. Unset values fall back to the
/// scenario defaults: the manufactured case for the MMS scenarios and
/// [`DemoParameters::default`] for the demo.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThermoSection {
    pub law: Option<LawName>,
    #[serde(rename = "RT")]
    pub rt: Option<f64>,
    pub molar_masses: Option<Vec<f64>>,
    /// Per-species factors of the product-form diffusivities (MMS).
    #[serde(rename = "D")]
    pub d: Option<Vec<f64>>,
    /// Binary diffusivity (demo).
    pub diffusivity: Option<f64>,
    pub eta: Option<f64>,
    pub zeta: Option<f64>,
    pub gamma: Option<f64>,
    #[serde(rename = "A12")]
    pub a12: Option<f64>,
    #[serde(rename = "A21")]
    pub a21: Option<f64>,
    pub c_ref: Option<Vec<f64>>,
    /// Benzene inflow speed of the demo.
    pub inflow: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    pub residual_tol: f64,
    pub max_iters: usize,
    /// Backtracking factor; `0` disables backtracking.
    pub damping: f64,
    pub max_backtracks: usize,
    pub continuation_steps: usize,
    pub density_consistency: bool,
    /// Replace the discrete `∇Psi_h` by the exact gradient (MMS diagnostic).
    pub exact_grad_psi: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let p = PicardOptions::default();
        let n = NewtonOptions::default();
        SolverSection {
            picard_tol: p.tol,
            picard_max_iters: p.max_iters,
            residual_tol: n.residual_tol,
            max_iters: n.max_iters,
            damping: n.damping.unwrap_or(0.0),
            max_backtracks: n.max_backtracks,
            continuation_steps: n.continuation_steps,
            density_consistency: true,
            exact_grad_psi: false,
        }
    }
}

impl SolverSection {
    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            residual_tol: self.residual_tol,
            max_iters: self.max_iters,
            damping: (self.damping > 0.0).then_some(self.damping),
            max_backtracks: self.max_backtracks,
            continuation_steps: self.continuation_steps,
        }
    }

    pub fn picard(&self) -> PicardOptions {
        PicardOptions { tol: self.picard_tol, max_iters: self.picard_max_iters }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintEntry {
    MoleFractionMean,
    PressureMean,
    /// Without `amount` the MMS scenarios use the exact total.
    Total { species: usize, amount: Option<f64> },
    BoundaryMassDifference { tag: i32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Vtk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), formats: vec![Format::Csv, Format::Vtk] }
    }
}

impl OutputSection {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

fn schema(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> std::io::Result<String> {
        std::fs::read_to_string(path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn is_mms(&self) -> bool {
        matches!(self.scenario, Scenario::PicardMms | Scenario::NewtonMms)
    }

    /// Mesh parameters `m, 2m, ..., 2^r m`.
    pub fn mesh_sequence(&self) -> Vec<usize> {
        (0..=self.mesh.refinements).map(|r| self.mesh.m << r).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.mesh.m == 0 {
            return Err(schema("mesh.m must be at least 1"));
        }
        if self.mesh.refinements > 6 {
            return Err(schema("mesh.refinements must be at most 6"));
        }
        if self.degrees.velocity_k != 2 {
            return Err(schema("degrees.velocity_k must be 2 (Taylor-Hood CG2-CG1)"));
        }
        if !(1..=2).contains(&self.degrees.flux_k) {
            return Err(schema("degrees.flux_k must be 1 or 2"));
        }
        let s = &self.solver;
        let positive = [("picard_tol", s.picard_tol), ("residual_tol", s.residual_tol)];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(schema(format!("solver.{name} must be positive")));
        }
        if s.picard_max_iters == 0 || s.max_iters == 0 || s.continuation_steps == 0 {
            return Err(schema("solver iteration counts and continuation_steps must be at least 1"));
        }
        if !(0.0..1.0).contains(&s.damping) {
            return Err(schema("solver.damping must lie in [0, 1)"));
        }
        if self.scenario == Scenario::PicardMms && self.solver.exact_grad_psi {
            return Err(schema("exact_grad_psi applies to newton_mms only"));
        }
        let t = &self.thermo;
        if self.is_mms() {
            if t.law.is_some_and(|l| l != LawName::IdealGas) {
                return Err(schema("the MMS scenarios need law = \"ideal_gas\""));
            }
            if t.rt.is_some_and(|rt| rt != 1.0) {
                return Err(schema("the manufactured solution requires RT = 1"));
            }
            for (name, set) in [("A12", t.a12.is_some()), ("A21", t.a21.is_some()), ("c_ref", t.c_ref.is_some()), ("inflow", t.inflow.is_some()), ("diffusivity", t.diffusivity.is_some())] {
                if set {
                    return Err(schema(format!("thermo.{name} does not apply to {:?}", self.scenario)));
                }
            }
            if let (Some(d), Some(m)) = (&t.d, &t.molar_masses) {
                if d.len() != m.len() {
                    return Err(schema("thermo.D and thermo.molar_masses need one entry per species"));
                }
            }
            if let Some(m) = &t.molar_masses {
                if m.windows(2).any(|w| w[0] != w[1]) {
                    return Err(schema("the manufactured solution requires equal molar masses"));
                }
            }
        } else {
            if t.law.is_some_and(|l| l != LawName::Margules) {
                return Err(schema("mixing_demo needs law = \"margules\""));
            }
            if t.d.is_some() {
                return Err(schema("thermo.D does not apply to mixing_demo; use diffusivity"));
            }
            for (name, v) in [("molar_masses", &t.molar_masses), ("c_ref", &t.c_ref)] {
                if v.as_ref().is_some_and(|v| v.len() != 2) {
                    return Err(schema(format!("thermo.{name} needs two entries")));
                }
            }
            if t.rt.is_some_and(|rt| rt != 1.0) {
                return Err(schema("mixing_demo is nondimensionalized with RT = 1"));
            }
            if self.solver.exact_grad_psi {
                return Err(schema("exact_grad_psi applies to newton_mms only"));
            }
        }
        let n = self.species_count();
        if !self.constraints.is_empty() {
            if self.scenario == Scenario::PicardMms {
                return Err(schema("picard_mms fixes its constants by zero means; remove [[constraints]]"));
            }
            self.constraints_for(n, |_| 1.0)?;
        }
        Ok(())
    }

    pub fn species_count(&self) -> usize {
        match self.scenario {
            Scenario::MixingDemo => 2,
            _ => self.thermo.d.as_ref().or(self.thermo.molar_masses.as_ref()).map_or(2, |v| v.len()),
        }
    }

    /// Constraint list with exact totals filled in by `total`.
    pub fn constraints_for(&self, n: usize, total: impl Fn(usize) -> f64) -> Result<Vec<Constraint>, ConfigError> {
        let mut out = Vec::with_capacity(self.constraints.len());
        for c in &self.constraints {
            out.push(match *c {
                ConstraintEntry::MoleFractionMean => Constraint::MoleFractionMean,
                ConstraintEntry::PressureMean => Constraint::PressureMean,
                ConstraintEntry::Total { species, amount } => {
                    if species >= n {
                        return Err(schema(format!("constraint species {species} out of range")));
                    }
                    let amount = match amount {
                        Some(a) => a,
                        None if self.is_mms() => total(species),
                        None => return Err(schema("total constraints need an amount")),
                    };
                    Constraint::Total { species, amount }
                }
                ConstraintEntry::BoundaryMassDifference { tag } => Constraint::BoundaryMassDifference { tag },
            });
        }
        sosm_core::forms::ConstraintSet::new(n, out.clone()).map_err(|e| schema(e.to_string()))?;
        Ok(out)
    }

    /// Demo parameters with the configured overrides.
    pub fn demo_parameters(&self) -> DemoParameters {
        let t = &self.thermo;
        let mut p = DemoParameters::default();
        if let Some(v) = t.a12 {
            p.a12 = v;
        }
        if let Some(v) = t.a21 {
            p.a21 = v;
        }
        if let Some(v) = &t.molar_masses {
            p.molar_masses = [v[0], v[1]];
        }
        if let Some(v) = &t.c_ref {
            p.c_ref = [v[0], v[1]];
        }
        for (dst, src) in [
            (&mut p.diffusivity, t.diffusivity),
            (&mut p.eta, t.eta),
            (&mut p.zeta, t.zeta),
            (&mut p.gamma, t.gamma),
            (&mut p.inflow, t.inflow),
        ] {
            if let Some(v) = src {
                *dst = v;
            }
        }
        p
    }
}
