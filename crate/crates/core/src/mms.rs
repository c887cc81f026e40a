//! Manufactured solutions on the unit square, error metrics and observed
//! convergence rates.
//!
//! The solution is generated by a scalar `g` with `c_i = exp(g / D_i)` and
//! species velocities `v_i = D_i ∇g`, for an ideal gas with `RT = 1` and
//! diffusivities `D_ij = D_i D_j`. The Stefan-Maxwell identity then holds
//! exactly when all molar masses are equal.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SosmError};
use crate::fespace::{error_norm_with_degree, project, Field, NormKind};
use crate::forms::{
    build_liftings, BoundaryData, Block, ClosureFrozen, ConstraintSet, Discretization, MonolithicOptions, ProblemData,
    UnknownLayout,
};
use crate::mesh::{build_unit_square, Mesh};
use crate::quadrature::{gauss_legendre, TriangleRule};
use crate::solver::{newton_solve, picard_solve, NewtonOptions, NewtonReport};
use crate::thermo::{transport_matrix, ConstitutiveLaw, IdealGas, MixtureSpec};

/// A smooth scalar field with derivatives up to third order.
pub trait Generator: Send + Sync + std::fmt::Debug {
    fn value(&self, x: [f64; 2]) -> f64;
    fn gradient(&self, x: [f64; 2]) -> [f64; 2];
    fn hessian(&self, x: [f64; 2]) -> [[f64; 2]; 2];
    /// `t[a][b][c] = ∂_a ∂_b ∂_c g`.
    fn third(&self, x: [f64; 2]) -> [[[f64; 2]; 2]; 2];
}

/// `g = sin(πx) sin(πy)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SinSin;

impl Generator for SinSin {
    fn value(&self, x: [f64; 2]) -> f64 {
        (PI * x[0]).sin() * (PI * x[1]).sin()
    }

    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let (sx, cx, sy, cy) = sincos(x);
        [PI * cx * sy, PI * sx * cy]
    }

    fn hessian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let (sx, cx, sy, cy) = sincos(x);
        let p2 = PI * PI;
        [[-p2 * sx * sy, p2 * cx * cy], [p2 * cx * cy, -p2 * sx * sy]]
    }

    fn third(&self, x: [f64; 2]) -> [[[f64; 2]; 2]; 2] {
        let (sx, cx, sy, cy) = sincos(x);
        let p3 = PI * PI * PI;
        // derivative counts (nx, ny) determine the factor
        let d = |nx: usize, ny: usize| {
            let fx = [sx, cx, -sx, -cx][nx];
            let fy = [sy, cy, -sy, -cy][ny];
            p3 * fx * fy
        };
        let mut t = [[[0.0; 2]; 2]; 2];
        for (a, ta) in t.iter_mut().enumerate() {
            for (b, tab) in ta.iter_mut().enumerate() {
                for (c, v) in tab.iter_mut().enumerate() {
                    let nx = [a, b, c].iter().filter(|&&k| k == 0).count();
                    *v = d(nx, 3 - nx);
                }
            }
        }
        t
    }
}

fn sincos(x: [f64; 2]) -> (f64, f64, f64, f64) {
    let (sx, cx) = (PI * x[0]).sin_cos();
    let (sy, cy) = (PI * x[1]).sin_cos();
    (sx, cx, sy, cy)
}

/// `∫_(0,1)² f` by a composite tensor Gauss rule, accurate to round-off for
/// the smooth fields used here.
pub fn integrate_unit_square(f: impl Fn([f64; 2]) -> f64) -> f64 {
    let (t, w) = gauss_legendre(12);
    let k = 8;
    let h = 1.0 / k as f64;
    let mut s = 0.0;
    for bx in 0..k {
        for by in 0..k {
            for (ti, wi) in t.iter().zip(&w) {
                for (tj, wj) in t.iter().zip(&w) {
                    let x = [h * (bx as f64 + 0.5 * (ti + 1.0)), h * (by as f64 + 0.5 * (tj + 1.0))];
                    s += 0.25 * h * h * wi * wj * f(x);
                }
            }
        }
    }
    s
}

/// Exact fields of a manufactured solution.
#[derive(Debug, Clone)]
pub struct ManufacturedCase {
    pub generator: Arc<dyn Generator>,
    pub d: Vec<f64>,
    pub spec: MixtureSpec,
    /// Species totals `∫ c_i`.
    pub totals: Vec<f64>,
    pub pressure_mean: f64,
    pub potential_means: Vec<f64>,
}

/// Defaults: `g = sin(πx) sin(πy)`, `D = (1/2, 2)`, `M = (1, 1)`,
/// `η = ζ = 0.1`, `γ = 10`.
pub fn default_case() -> ManufacturedCase {
    build_case(Arc::new(SinSin), &[0.5, 2.0], &[1.0, 1.0], 0.1, 0.1, 10.0).expect("default parameters are valid")
}

pub fn build_case(
    g: Arc<dyn Generator>,
    d: &[f64],
    molar_masses: &[f64],
    eta: f64,
    zeta: f64,
    gamma: f64,
) -> Result<ManufacturedCase> {
    if d.len() < 2 || d.len() != molar_masses.len() || d.iter().any(|v| !(*v > 0.0)) {
        return Err(SosmError::InvalidInput("need n >= 2 positive D_i, one per molar mass".into()));
    }
    let spec = MixtureSpec::new(molar_masses.to_vec(), MixtureSpec::product_diffusivities(d), 1.0, eta, zeta, gamma)?;
    let mut case = ManufacturedCase {
        generator: g,
        d: d.to_vec(),
        spec,
        totals: vec![],
        pressure_mean: 0.0,
        potential_means: vec![],
    };
    case.totals = (0..d.len()).map(|i| integrate_unit_square(|x| case.concentrations(x)[i])).collect();
    case.pressure_mean = integrate_unit_square(|x| case.pressure_raw(x));
    case.potential_means = (0..d.len()).map(|i| integrate_unit_square(|x| case.potentials_raw(x)[i])).collect();
    Ok(case)
}

impl ManufacturedCase {
    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn law(&self) -> IdealGas {
        IdealGas { n: self.n(), rt: 1.0 }
    }

    pub fn concentrations(&self, x: [f64; 2]) -> Vec<f64> {
        let g = self.generator.value(x);
        self.d.iter().map(|d| (g / d).exp()).collect()
    }

    pub fn concentration_gradients(&self, x: [f64; 2]) -> Vec<[f64; 2]> {
        let gg = self.generator.gradient(x);
        self.concentrations(x).iter().zip(&self.d).map(|(c, d)| [c / d * gg[0], c / d * gg[1]]).collect()
    }

    pub fn species_velocities(&self, x: [f64; 2]) -> Vec<[f64; 2]> {
        let gg = self.generator.gradient(x);
        self.d.iter().map(|d| [d * gg[0], d * gg[1]]).collect()
    }

    /// Mass fluxes `J_i = M_i c_i v_i`.
    pub fn fluxes(&self, x: [f64; 2]) -> Vec<[f64; 2]> {
        let c = self.concentrations(x);
        let vs = self.species_velocities(x);
        (0..self.n()).map(|i| [self.spec.molar_masses[i] * c[i] * vs[i][0], self.spec.molar_masses[i] * c[i] * vs[i][1]]).collect()
    }

    pub fn density(&self, x: [f64; 2]) -> f64 {
        self.concentrations(x).iter().zip(&self.spec.molar_masses).map(|(c, m)| c * m).sum()
    }

    pub fn psi(&self, x: [f64; 2]) -> f64 {
        1.0 / self.density(x)
    }

    pub fn psi_gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let (_, b, c, _) = self.moments(x);
        let gg = self.generator.gradient(x);
        [-c / (b * b) * gg[0], -c / (b * b) * gg[1]]
    }

    pub fn mole_fractions(&self, x: [f64; 2]) -> Vec<f64> {
        let c = self.concentrations(x);
        let ct: f64 = c.iter().sum();
        c.iter().map(|v| v / ct).collect()
    }

    /// `p = c_T RT` before the mean shift.
    pub fn pressure_raw(&self, x: [f64; 2]) -> f64 {
        self.concentrations(x).iter().sum()
    }

    pub fn pressure(&self, x: [f64; 2]) -> f64 {
        self.pressure_raw(x) - self.pressure_mean
    }

    pub fn pressure_gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let gg = self.generator.gradient(x);
        let s: f64 = self.concentrations(x).iter().zip(&self.d).map(|(c, d)| c / d).sum();
        [s * gg[0], s * gg[1]]
    }

    /// `mu_i = RT ln(x_i p) = g / D_i` before the mean shift.
    pub fn potentials_raw(&self, x: [f64; 2]) -> Vec<f64> {
        let g = self.generator.value(x);
        self.d.iter().map(|d| g / d).collect()
    }

    pub fn potentials(&self, x: [f64; 2]) -> Vec<f64> {
        self.potentials_raw(x).iter().zip(&self.potential_means).map(|(m, s)| m - s).collect()
    }

    /// `(A, B, C, E)` with `A = Σ M_j D_j c_j`, `B = Σ M_j c_j`,
    /// `C = Σ M_j c_j / D_j`, `E = Σ M_j c_j / D_j²`; these are the
    /// successive `g`-derivatives of `A`.
    fn moments(&self, x: [f64; 2]) -> (f64, f64, f64, f64) {
        let c = self.concentrations(x);
        let mut m = (0.0, 0.0, 0.0, 0.0);
        for ((c, d), mm) in c.iter().zip(&self.d).zip(&self.spec.molar_masses) {
            m.0 += mm * d * c;
            m.1 += mm * c;
            m.2 += mm * c / d;
            m.3 += mm * c / (d * d);
        }
        m
    }

    /// `w(g) = A / B` and its first two `g`-derivatives; `v = w ∇g`.
    fn weight(&self, x: [f64; 2]) -> (f64, f64, f64) {
        let (a, b, c, e) = self.moments(x);
        let w = a / b;
        let w1 = 1.0 - a * c / (b * b);
        let w2 = -((b * c + a * e) * b - 2.0 * a * c * c) / (b * b * b);
        (w, w1, w2)
    }

    /// Barycentric velocity `v = Psi Σ J_i`.
    pub fn velocity(&self, x: [f64; 2]) -> [f64; 2] {
        let (w, _, _) = self.weight(x);
        let gg = self.generator.gradient(x);
        [w * gg[0], w * gg[1]]
    }

    /// `grad[a][b] = ∂_b v_a`.
    pub fn velocity_gradient(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let (w, w1, _) = self.weight(x);
        let g = self.generator.gradient(x);
        let h = self.generator.hessian(x);
        let mut out = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                out[a][b] = w1 * g[b] * g[a] + w * h[a][b];
            }
        }
        out
    }

    /// `t[a][b][c] = ∂_c ∂_b v_a`.
    fn velocity_second(&self, x: [f64; 2]) -> [[[f64; 2]; 2]; 2] {
        let (w, w1, w2) = self.weight(x);
        let g = self.generator.gradient(x);
        let h = self.generator.hessian(x);
        let t3 = self.generator.third(x);
        let mut out = [[[0.0; 2]; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    out[a][b][c] = w2 * g[c] * g[b] * g[a]
                        + w1 * (h[b][c] * g[a] + g[b] * h[a][c] + g[c] * h[a][b])
                        + w * t3[a][b][c];
                }
            }
        }
        out
    }

    /// `-div(2η ε(v)) - λ ∇(div v) + ∇p`, the momentum operator applied to
    /// the exact solution.
    fn momentum_operator(&self, x: [f64; 2]) -> [f64; 2] {
        let (eta, lambda) = (self.spec.eta, self.spec.lambda());
        let s = self.velocity_second(x);
        let gp = self.pressure_gradient(x);
        let mut out = [0.0; 2];
        for (a, o) in out.iter_mut().enumerate() {
            let mut div_eps = 0.0;
            let mut grad_div = 0.0;
            for b in 0..2 {
                div_eps += 0.5 * (s[a][b][b] + s[b][a][b]);
                grad_div += s[b][b][a];
            }
            *o = -2.0 * eta * div_eps - lambda * grad_div + gp[a];
        }
        out
    }

    /// Body force per unit mass.
    pub fn force(&self, x: [f64; 2]) -> [f64; 2] {
        let m = self.momentum_operator(x);
        let rho = self.density(x);
        [m[0] / rho, m[1] / rho]
    }

    /// Molar production `r_i = div(c_i v_i) = c_i (|∇g|² + D_i Δg)`.
    pub fn reaction(&self, i: usize, x: [f64; 2]) -> f64 {
        let g = self.generator.gradient(x);
        let h = self.generator.hessian(x);
        let c = (self.generator.value(x) / self.d[i]).exp();
        c * (g[0] * g[0] + g[1] * g[1] + self.d[i] * (h[0][0] + h[1][1]))
    }

    /// Data for the discrete problems: exact traces, force and reactions.
    pub fn problem_data(self: &Arc<Self>) -> ProblemData {
        let n = self.n();
        let fluxes = (0..n)
            .map(|i| {
                let c = self.clone();
                Arc::new(move |x: [f64; 2], _tag: i32| c.fluxes(x)[i]) as crate::forms::TaggedVectorFn
            })
            .collect();
        let reactions = (0..n)
            .map(|i| {
                let c = self.clone();
                Some(Arc::new(move |x: [f64; 2]| c.reaction(i, x)) as crate::forms::ScalarFn)
            })
            .collect();
        let (cv, cf) = (self.clone(), self.clone());
        ProblemData {
            spec: self.spec.clone(),
            law: Arc::new(self.law()),
            body_force: Some(Arc::new(move |x| cf.force(x))),
            reactions,
            boundary: BoundaryData { velocity: Arc::new(move |x, _| cv.velocity(x)), fluxes, scale: 1.0 },
        }
    }

    /// Exact concentrations for the Picard linearization.
    pub fn frozen(self: &Arc<Self>) -> ClosureFrozen {
        let (a, b) = (self.clone(), self.clone());
        ClosureFrozen {
            molar_masses: self.spec.molar_masses.clone(),
            concentrations: Arc::new(move |x| a.concentrations(x)),
            gradients: Arc::new(move |x| b.concentration_gradients(x)),
        }
    }

    /// Constraints `∫ c_i = ∫ exp(g / D_i)` plus the mole fraction mean.
    pub fn constraints(&self) -> Result<ConstraintSet> {
        ConstraintSet::totals(&self.totals)
    }
}

/// Largest pointwise defect of the strong equations at random interior
/// points: Stefan-Maxwell, constitutive, mass-average, continuity and
/// momentum residuals.
pub fn verify_case(case: &ManufacturedCase, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let law = case.law();
    let n = case.n();
    let mm = &case.spec.molar_masses;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let c = case.concentrations(x);
        let rho = case.density(x);
        let gp = case.pressure_gradient(x);
        let vs = case.species_velocities(x);
        let mt = transport_matrix(&case.spec, &c)?;
        let gg = case.generator.gradient(x);
        for i in 0..n {
            let omega = mm[i] * c[i] / rho;
            for a in 0..2 {
                // ∇mu_i = ∇g / D_i
                let lhs = -c[i] * gg[a] / case.d[i] + omega * gp[a];
                let rhs: f64 = (0..n).map(|j| mt[(i, j)] * vs[j][a]).sum();
                worst = worst.max((lhs - rhs).abs());
            }
        }
        let gibbs = law.gibbs(case.pressure_raw(x), &case.mole_fractions(x));
        for (m, g) in case.potentials_raw(x).iter().zip(&gibbs) {
            worst = worst.max((m - g).abs());
        }
        let v = case.velocity(x);
        let j = case.fluxes(x);
        for a in 0..2 {
            let s: f64 = j.iter().map(|j| j[a]).sum();
            worst = worst.max((v[a] - s / rho).abs());
        }
        let h = case.generator.hessian(x);
        let gc = case.concentration_gradients(x);
        for i in 0..n {
            let div_vi = case.d[i] * (h[0][0] + h[1][1]);
            let div = gc[i][0] * vs[i][0] + gc[i][1] * vs[i][1] + c[i] * div_vi;
            worst = worst.max((div - case.reaction(i, x)).abs());
        }
        let f = case.force(x);
        let m = case.momentum_operator(x);
        for a in 0..2 {
            worst = worst.max((m[a] - rho * f[a]).abs());
        }
    }
    Ok(worst)
}

/// Which discrete problem a state solves; selects the density reciprocal
/// used in the mass-average error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Picard,
    Monolithic,
}

/// Errors of one discrete solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub h: f64,
    pub dofs: usize,
    pub e_v: f64,
    pub e_grad_v: f64,
    pub e_p: f64,
    pub e_j: f64,
    pub e_mu: f64,
    pub e_ma: f64,
    pub e_x: Option<f64>,
    /// `sqrt(Σ_i ‖div(J_i - J_h,i)‖²)`.
    pub e_div_j: f64,
}

/// Number of metrics reported per record.
pub const METRIC_COUNT: usize = 9;

impl ErrorRecord {
    pub const NAMES: [&'static str; METRIC_COUNT] =
        ["E_v", "E_grad_v", "E_p", "E_J", "E_mu", "E_MA", "E_x", "E_div_J", "E_combined"];

    /// `‖(v - v_h, J - J_h)‖_V + ‖(p - p_h, mu - mu_h)‖_Q` with the `H¹` norm
    /// for the velocity and the `H(div)` norm for the fluxes.
    pub fn combined(&self) -> f64 {
        let v = (self.e_v.powi(2) + self.e_grad_v.powi(2) + self.e_j.powi(2) + self.e_div_j.powi(2)).sqrt();
        let q = (self.e_p.powi(2) + self.e_mu.powi(2)).sqrt();
        v + q
    }

    pub fn metrics(&self) -> [Option<f64>; METRIC_COUNT] {
        [
            Some(self.e_v),
            Some(self.e_grad_v),
            Some(self.e_p),
            Some(self.e_j),
            Some(self.e_mu),
            Some(self.e_ma),
            self.e_x,
            Some(self.e_div_j),
            Some(self.combined()),
        ]
    }
}

fn error_degree(layout: &UnknownLayout) -> usize {
    layout.disc.quadrature_degree() + 2
}

pub fn compute_error_table(
    layout: &UnknownLayout,
    state: &[f64],
    case: &ManufacturedCase,
    kind: ProblemKind,
) -> Result<ErrorRecord> {
    let n = layout.n;
    if n != case.n() {
        return Err(SosmError::InvalidInput("layout and case disagree on the species count".into()));
    }
    if kind == ProblemKind::Monolithic && !layout.monolithic {
        return Err(SosmError::InvalidInput("monolithic errors need the monolithic layout".into()));
    }
    let deg = error_degree(layout);
    let v = layout.field(state, Block::Velocity);
    let e_v = error_norm_with_degree(&v, NormKind::L2, |x| case.velocity(x).to_vec(), deg)?;
    let e_grad_v = error_norm_with_degree(
        &v,
        NormKind::H1Semi,
        |x| {
            let g = case.velocity_gradient(x);
            vec![g[0][0], g[0][1], g[1][0], g[1][1]]
        },
        deg,
    )?;
    let mut p = layout.field(state, Block::Pressure);
    p.subtract_mean();
    let e_p = error_norm_with_degree(&p, NormKind::L2, |x| vec![case.pressure(x)], deg)?;
    let mut e_j = 0.0;
    let mut e_mu = 0.0;
    let mut e_x = 0.0;
    let mut e_div_j = 0.0;
    for i in 0..n {
        let j = layout.field(state, Block::Flux(i));
        e_j += error_norm_with_degree(&j, NormKind::L2, |x| case.fluxes(x)[i].to_vec(), deg)?.powi(2);
        let mi = case.spec.molar_masses[i];
        e_div_j += error_norm_with_degree(&j, NormKind::HdivSemi, |x| vec![mi * case.reaction(i, x)], deg)?.powi(2);
        let mut mu = layout.field(state, Block::Potential(i));
        mu.subtract_mean();
        e_mu += error_norm_with_degree(&mu, NormKind::L2, |x| vec![case.potentials(x)[i]], deg)?.powi(2);
        if kind == ProblemKind::Monolithic {
            let xf = layout.field(state, Block::MoleFraction(i));
            e_x += error_norm_with_degree(&xf, NormKind::L2, |x| vec![case.mole_fractions(x)[i]], deg)?.powi(2);
        }
    }
    let fluxes: Vec<Field> = (0..n).map(|i| layout.field(state, Block::Flux(i))).collect();
    let psi_h = (kind == ProblemKind::Monolithic).then(|| layout.field(state, Block::Psi));
    let e_ma = mass_average_defect(layout, &v, &fluxes, psi_h.as_ref(), |x| case.psi(x), deg)?;
    Ok(ErrorRecord {
        h: 1.0 / mesh_divisions(layout.mesh()) as f64,
        dofs: layout.total(),
        e_v,
        e_grad_v,
        e_p,
        e_j: e_j.sqrt(),
        e_mu: e_mu.sqrt(),
        e_ma,
        e_x: (kind == ProblemKind::Monolithic).then(|| e_x.sqrt()),
        e_div_j: e_div_j.sqrt(),
    })
}

/// `‖v_h - Psi Σ J_h,i‖_L²` with `Psi_h` when given, else the exact `Psi`.
pub fn mass_average_defect(
    layout: &UnknownLayout,
    v: &Field,
    fluxes: &[Field],
    psi_h: Option<&Field>,
    psi: impl Fn([f64; 2]) -> f64,
    degree: usize,
) -> Result<f64> {
    let rule = TriangleRule::new(degree);
    let rv = layout.velocity.quadrature_table(&rule);
    let rj = layout.flux.quadrature_table(&rule);
    let rp = layout.pressure.quadrature_table(&rule);
    let mut total = 0.0;
    for cell in 0..layout.mesh().num_cells() {
        let tv = layout.velocity.tabulate_with(cell, &rv);
        let tj = layout.flux.tabulate_with(cell, &rj);
        let vv = v.values_at(cell, &tv);
        let jv: Vec<Vec<f64>> = fluxes.iter().map(|f| f.values_at(cell, &tj)).collect();
        let pv = psi_h.map(|f| f.values_at(cell, &layout.pressure.tabulate_with(cell, &rp)));
        for q in 0..tv.nq {
            let ps = pv.as_ref().map_or_else(|| psi(tv.points[q]), |p| p[q]);
            for a in 0..2 {
                let s: f64 = jv.iter().map(|j| j[2 * q + a]).sum();
                total += tv.jxw[q] * (vv[2 * q + a] - ps * s).powi(2);
            }
        }
    }
    Ok(total.sqrt())
}

/// Number of intervals per side of a structured unit-square mesh.
pub fn mesh_divisions(mesh: &Mesh) -> usize {
    // 2 m² cells
    ((mesh.num_cells() as f64 / 2.0).sqrt()).round() as usize
}

/// Observed rates `log(E_k / E_{k+1}) / log(h_k / h_{k+1})` between
/// consecutive entries.
pub fn rates(errors: &[f64], hs: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != hs.len() || errors.len() < 2 {
        return Err(SosmError::InvalidInput("need at least two errors with matching mesh sizes".into()));
    }
    if errors.iter().chain(hs).any(|e| !e.is_finite() || *e <= 0.0) {
        return Err(SosmError::InvalidInput("errors and mesh sizes must be positive and finite".into()));
    }
    Ok(errors
        .windows(2)
        .zip(hs.windows(2))
        .map(|(e, h)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect())
}

/// Rates of every metric over a refinement sequence; entry `k` compares
/// record `k` with record `k + 1`.
pub fn convergence_rates(records: &[ErrorRecord]) -> Result<Vec<[Option<f64>; METRIC_COUNT]>> {
    if records.len() < 2 {
        return Err(SosmError::InvalidInput("need at least two error records".into()));
    }
    let hs: Vec<f64> = records.iter().map(|r| r.h).collect();
    let mut out = vec![[None; METRIC_COUNT]; records.len() - 1];
    for m in 0..METRIC_COUNT {
        let es: Option<Vec<f64>> = records.iter().map(|r| r.metrics()[m]).collect();
        if let Some(es) = es {
            for (k, r) in rates(&es, &hs)?.into_iter().enumerate() {
                out[k][m] = Some(r);
            }
        }
    }
    Ok(out)
}

/// Layout on the `m x m` unit-square mesh.
pub fn case_layout(case: &ManufacturedCase, m: usize, disc: Discretization, monolithic: bool) -> Result<UnknownLayout> {
    UnknownLayout::new(Arc::new(build_unit_square(m)?), disc, case.n(), monolithic)
}

/// Picard solve with the exact concentrations frozen.
pub fn solve_picard_case(case: &Arc<ManufacturedCase>, layout: &UnknownLayout) -> Result<Vec<f64>> {
    picard_solve(layout, &case.problem_data(), &case.frozen())
}

/// L² projection of the exact solution onto the monolithic layout, with the
/// boundary DOFs set to the lifting values.
pub fn projected_initial_guess(case: &Arc<ManufacturedCase>, layout: &UnknownLayout) -> Result<Vec<f64>> {
    let deg = error_degree(layout);
    let mut u = vec![0.0; layout.total()];
    let put = |u: &mut Vec<f64>, b: Block, f: Field| layout.set_field(u, b, &f);
    put(&mut u, Block::Velocity, project(&layout.velocity, |x| case.velocity(x).to_vec(), deg)?);
    put(&mut u, Block::Pressure, project(&layout.pressure, |x| vec![case.pressure_raw(x)], deg)?);
    for i in 0..layout.n {
        put(&mut u, Block::Flux(i), project(&layout.flux, |x| case.fluxes(x)[i].to_vec(), deg)?);
        put(&mut u, Block::Potential(i), project(&layout.potential, |x| vec![case.potentials_raw(x)[i]], deg)?);
        if layout.monolithic {
            put(&mut u, Block::MoleFraction(i), project(&layout.potential, |x| vec![case.mole_fractions(x)[i]], deg)?);
        }
    }
    if layout.monolithic {
        put(&mut u, Block::Psi, project(&layout.pressure, |x| vec![case.psi(x)], deg)?);
    }
    build_liftings(layout, &case.problem_data())?.apply_to(&mut u);
    Ok(u)
}

/// Newton on the monolithic problem from the projected exact solution.
pub fn solve_newton_case(
    case: &Arc<ManufacturedCase>,
    layout: &UnknownLayout,
    opts: &NewtonOptions,
    mopts: &MonolithicOptions,
) -> Result<(Vec<f64>, NewtonReport)> {
    let initial = projected_initial_guess(case, layout)?;
    let run = newton_solve(layout, &case.problem_data(), &case.constraints()?, opts, mopts, initial)?;
    Ok((run.state, run.report))
}
