//! Binary liquid mixing in a 2D T-junction with a Margules law.
//!
//! Lengths are in units of 2 mm, velocities in units of 10 µm/s,
//! concentrations in units of pure benzene, molar masses in units of
//! benzene's, and potentials in units of RT. The viscosities are far above
//! the physical ratio to RT; with the physical values the pressure would be
//! invisible next to the chemical potentials, while larger values drive a
//! visible barodiffusion that the real mixture does not have.

use std::sync::Arc;
use std::time::Instant;

use sosm_core::fespace::{interpolate_scalar, Field};
use sosm_core::forms::{Block, BoundaryData, Constraint, ConstraintSet, Discretization, FluxFamily, MonolithicOptions, ProblemData, UnknownLayout};
use sosm_core::mesh::{build_blocks, Mesh};
use sosm_core::mms::mass_average_defect;
use sosm_core::quadrature::TriangleRule;
use sosm_core::solver::{continuation_run, NewtonOptions, NewtonReport};
use sosm_core::thermo::{ConstitutiveLaw, Margules, MixtureSpec};
use sosm_core::Result;

pub const TAG_INLET_1: i32 = 11;
pub const TAG_INLET_2: i32 = 12;
pub const TAG_OUTLET: i32 = 13;
pub const TAG_WALL: i32 = 14;

/// Main channel `[0, 6] x [0, 1]`, side pipe `[1, 2] x [1, 2]`.
const CHANNEL: [(i64, i64); 7] = [(0, 0), (1, 0), (2, 0), (3, 0), (4, 0), (5, 0), (1, 1)];
const LENGTH: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DemoParameters {
    pub a12: f64,
    pub a21: f64,
    pub molar_masses: [f64; 2],
    pub c_ref: [f64; 2],
    /// Inverse Péclet number.
    pub diffusivity: f64,
    pub eta: f64,
    pub zeta: f64,
    pub gamma: f64,
    /// Benzene inflow speed; the cyclohexane speed follows from equal molar fluxes.
    pub inflow: f64,
}

impl Default for DemoParameters {
    fn default() -> Self {
        let (a12, a21) = Margules::BENZENE_CYCLOHEXANE;
        // 876 and 773 kg/m³, 0.078 and 0.084 kg/mol, D = 2.1e-9 m²/s, U = 10 µm/s, L = 2 mm
        let m2 = 0.084 / 0.078;
        DemoParameters {
            a12,
            a21,
            molar_masses: [1.0, m2],
            c_ref: [1.0, 773.0 / 876.0 / m2],
            diffusivity: 2.1e-9 / (1e-5 * 2e-3),
            eta: 1e-3,
            // bulk to shear viscosity of benzene
            zeta: 1e-3 * 1e-7 / 6e-4,
            gamma: 3.0,
            inflow: 0.4,
        }
    }
}

impl DemoParameters {
    pub fn law(&self) -> Margules {
        Margules { rt: 1.0, a12: self.a12, a21: self.a21, c_ref: self.c_ref }
    }

    pub fn spec(&self) -> Result<MixtureSpec> {
        MixtureSpec::new(
            self.molar_masses.to_vec(),
            MixtureSpec::product_diffusivities(&[self.diffusivity.sqrt(); 2]),
            1.0,
            self.eta,
            self.zeta,
            self.gamma,
        )
    }

    /// Density of the mixture at mole fraction `x1` of benzene.
    pub fn density(&self, x1: f64) -> f64 {
        let x = [x1, 1.0 - x1];
        let c_total = 1.0 / (x[0] / self.c_ref[0] + x[1] / self.c_ref[1]);
        c_total * (x[0] * self.molar_masses[0] + x[1] * self.molar_masses[1])
    }

    /// Benzene mole fraction at which `M_1 c_1 = M_2 c_2`.
    pub fn outlet_mole_fraction(&self) -> f64 {
        let [m1, m2] = self.molar_masses;
        m2 / (m1 + m2)
    }

    /// Peak mass flux `M_i c_i^ref v_i^ref` of species `i`.
    pub fn peak_flux(&self, i: usize) -> f64 {
        // c_1 v_1 = c_2 v_2
        self.molar_masses[i] * self.c_ref[0] * self.inflow
    }

    pub fn problem_data(&self) -> Result<ProblemData> {
        let profile = |s: f64| 4.0 * s * (1.0 - s);
        let j1 = self.peak_flux(0);
        let j2 = self.peak_flux(1);
        let flux = |i: usize| -> Arc<dyn Fn([f64; 2], i32) -> [f64; 2] + Send + Sync> {
            let peak = if i == 0 { j1 } else { j2 };
            Arc::new(move |x, tag| match tag {
                TAG_INLET_1 if i == 0 => [peak * profile(x[1]), 0.0],
                TAG_INLET_2 if i == 1 => [0.0, -peak * profile(x[0] - 1.0)],
                TAG_OUTLET => [peak * profile(x[1]), 0.0],
                _ => [0.0, 0.0],
            })
        };
        // v = (J_1 + J_2) / rho with the pure densities at the inlets and, at
        // the outlet, the density of the composition with M_1 c_1 = M_2 c_2
        let rho = [self.density(1.0), self.density(0.0), self.density(self.outlet_mole_fraction())];
        let velocity = Arc::new(move |x: [f64; 2], tag: i32| match tag {
            TAG_INLET_1 => [j1 * profile(x[1]) / rho[0], 0.0],
            TAG_INLET_2 => [0.0, -j2 * profile(x[0] - 1.0) / rho[1]],
            TAG_OUTLET => [(j1 + j2) * profile(x[1]) / rho[2], 0.0],
            _ => [0.0, 0.0],
        });
        Ok(ProblemData {
            spec: self.spec()?,
            law: Arc::new(self.law()),
            body_force: None,
            reactions: vec![None, None],
            boundary: BoundaryData { velocity, fluxes: vec![flux(0), flux(1)], scale: 1.0 },
        })
    }
}

fn tag_boundary(a: [f64; 2], b: [f64; 2]) -> Option<i32> {
    let eps = 1e-12;
    let on = |v: f64, c: f64| (v - c).abs() < eps;
    if on(a[0], 0.0) && on(b[0], 0.0) {
        Some(TAG_INLET_1)
    } else if on(a[0], LENGTH) && on(b[0], LENGTH) {
        Some(TAG_OUTLET)
    } else if on(a[1], 2.0) && on(b[1], 2.0) {
        Some(TAG_INLET_2)
    } else {
        Some(TAG_WALL)
    }
}

/// T-junction with `m` intervals per unit length.
pub fn t_junction(m: usize) -> Result<Mesh> {
    build_blocks(&CHANNEL, m, tag_boundary)
}

/// `∫ p = 0`, the mole fraction mean, and equal outflow densities.
pub fn demo_constraints() -> Result<ConstraintSet> {
    ConstraintSet::new(
        2,
        vec![Constraint::PressureMean, Constraint::MoleFractionMean, Constraint::BoundaryMassDifference { tag: TAG_OUTLET }],
    )
}

/// Quiescent equimolar mixture at zero pressure.
pub fn equimolar_state(layout: &UnknownLayout, params: &DemoParameters) -> Vec<f64> {
    let mut u = vec![0.0; layout.total()];
    let mu = params.law().gibbs(0.0, &[0.5, 0.5]);
    for i in 0..2 {
        layout.set_field(&mut u, Block::Potential(i), &interpolate_scalar(&layout.potential, |_| mu[i]));
        layout.set_field(&mut u, Block::MoleFraction(i), &interpolate_scalar(&layout.potential, |_| 0.5));
    }
    let psi = 1.0 / params.density(0.5);
    layout.set_field(&mut u, Block::Psi, &interpolate_scalar(&layout.psi, |_| psi));
    u
}

/// `‖1 - Σ x_i‖_L²` for mole fraction fields in a common space.
pub fn mole_fraction_sum_defect(x: &[Field], degree: usize) -> f64 {
    let space = x[0].space();
    let rule = TriangleRule::new(degree);
    let rt = space.quadrature_table(&rule);
    let mut total = 0.0;
    for cell in 0..space.mesh().num_cells() {
        let t = space.tabulate_with(cell, &rt);
        let vals: Vec<Vec<f64>> = x.iter().map(|f| f.values_at(cell, &t)).collect();
        for q in 0..t.nq {
            let s: f64 = vals.iter().map(|v| v[q]).sum();
            total += t.jxw[q] * (1.0 - s).powi(2);
        }
    }
    total.sqrt()
}

#[derive(Debug, Clone)]
pub struct DemoRun {
    pub layout: UnknownLayout,
    pub state: Vec<f64>,
    pub reports: Vec<NewtonReport>,
    pub failed_at: Option<f64>,
    pub mole_fraction_defect: f64,
    pub mass_average_defect: f64,
    pub seconds: f64,
}

pub fn demo_layout(m: usize, flux_degree: usize, family: FluxFamily) -> Result<UnknownLayout> {
    let disc = Discretization::new(2, flux_degree, family)?;
    UnknownLayout::new(Arc::new(t_junction(m)?), disc, 2, true)
}

/// Constraint norms of a monolithic demo state.
pub fn demo_defects(layout: &UnknownLayout, state: &[f64]) -> Result<(f64, f64)> {
    let degree = layout.disc.quadrature_degree() + 2;
    let x: Vec<Field> = (0..2).map(|i| layout.field(state, Block::MoleFraction(i))).collect();
    let v = layout.field(state, Block::Velocity);
    let j: Vec<Field> = (0..2).map(|i| layout.field(state, Block::Flux(i))).collect();
    let psi = layout.field(state, Block::Psi);
    let ma = mass_average_defect(layout, &v, &j, Some(&psi), |_| 0.0, degree)?;
    Ok((mole_fraction_sum_defect(&x, degree), ma))
}

/// Newton with continuation from the equimolar state. A failed
/// continuation step is reported in `failed_at`, with the defects of the
/// last converged state.
pub fn run_mixing_demo(params: &DemoParameters, layout: UnknownLayout, opts: &NewtonOptions, mopts: &MonolithicOptions) -> Result<DemoRun> {
    let start = Instant::now();
    let data = params.problem_data()?;
    let initial = equimolar_state(&layout, params);
    let run = continuation_run(&layout, &data, &demo_constraints()?, opts, mopts, initial)?;
    let (xd, ma) = demo_defects(&layout, &run.state)?;
    Ok(DemoRun {
        layout,
        state: run.state,
        reports: run.reports,
        failed_at: run.failed_at,
        mole_fraction_defect: xd,
        mass_average_defect: ma,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn junction_tags() {
        let mesh = t_junction(2).unwrap();
        assert_eq!(mesh.num_cells(), 7 * 8);
        let count = |t: i32| mesh.boundary_tags().values().filter(|&&x| x == t).count();
        assert_eq!(count(TAG_INLET_1), 2);
        assert_eq!(count(TAG_INLET_2), 2);
        assert_eq!(count(TAG_OUTLET), 2);
        // perimeter 16 minus the three openings
        assert_eq!(count(TAG_WALL), 2 * 13);
    }

    #[test]
    fn boundary_data_is_compatible() {
        let p = DemoParameters::default();
        let layout = demo_layout(2, 2, FluxFamily::RaviartThomas).unwrap();
        let l = sosm_core::forms::build_liftings(&layout, &p.problem_data().unwrap()).unwrap();
        for d in l.compatibility_defects {
            assert!(d.abs() < 1e-12, "{d}");
        }
    }

    #[test]
    fn reference_densities() {
        let p = DemoParameters::default();
        assert!((p.density(1.0) - 1.0).abs() < 1e-14);
        assert!((p.density(0.0) - 773.0 / 876.0).abs() < 1e-14);
        assert!((p.peak_flux(1) / p.peak_flux(0) - 0.084 / 0.078).abs() < 1e-14);
    }
}
